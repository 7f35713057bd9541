import argparse


def _add_common(parser):
    parser.add_argument(
        "--config", type=str, default=None, metavar="PATH", help="run config (YAML or JSON)"
    )
    parser.add_argument(
        "--out", type=str, default=None, metavar="DIR", help="output directory (overrides output_dir)"
    )
    parser.add_argument(
        "--seed", type=int, default=None, metavar="S", help="run seed (overrides seed)"
    )
    parser.add_argument(
        "--quiet", action="store_true", default=False, help="no progress bars, warnings only"
    )


def _add_inputs(parser):
    parser.add_argument(
        "--checkpoint",
        type=str,
        default=None,
        metavar="FILE",
        help="parameter checkpoint (default: <out>/checkpoint.bin)",
    )
    parser.add_argument(
        "--dataset",
        type=str,
        default=None,
        metavar="DIR",
        help="dataset manifest directory (default: data.path or the generator)",
    )


def get_parser():
    parser = argparse.ArgumentParser(
        prog="lsembed", description="Structured metric learning with label-aware triplets"
    )
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    subparsers.required = True

    generate = subparsers.add_parser("generate", help="write a synthetic dataset manifest")
    _add_common(generate)

    train = subparsers.add_parser("train", help="train the network, write checkpoint and logs")
    _add_common(train)
    _add_inputs(train)

    evaluate = subparsers.add_parser("eval", help="retrieval precision@k and accuracy reports")
    _add_common(evaluate)
    _add_inputs(evaluate)

    gradcheck = subparsers.add_parser("gradcheck", help="finite-difference gradient suite")
    _add_common(gradcheck)
    gradcheck.add_argument("--corrupt", type=str, default=None, help=argparse.SUPPRESS)

    export = subparsers.add_parser("export-pca", help="2-D PCA projection of test embeddings")
    _add_common(export)
    _add_inputs(export)
    return parser
