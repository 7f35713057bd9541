"""``lsembed`` command line: generate, train, eval, gradcheck, export-pca.

Exit codes: 0 success, 2 invalid input or config, 3 training diverged,
4 gradient check failed.
"""
import logging
import sys

from lsembed.config import RunConfig, get_config
from lsembed.dataloaders import get_generator, load_manifest, make_dataset, write_manifest
from lsembed.exp_data import (
    CHECKPOINT_NAME,
    PCA_CSV_NAME,
    PRECISION_CSV_NAME,
    REPORT_NAME,
)
from lsembed.parsing import get_parser
from lsembed.trainer import train
from lsembed.utils.errors import (
    DegenerateEmbeddingError,
    GradcheckError,
    InputError,
    TrainingDivergedError,
    ValidationError,
)
from lsembed.utils.gradcheck import GradcheckSuite
from lsembed.utils.metrics import evaluate_retrieval, extract_embeddings, pca_export, write_pca_csv
from lsembed.utils.saver import Saver, load_checkpoint
from lsembed.utils.visualize import plot_convergence, plot_pca, plot_precision_curves

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_DIVERGED = 3
EXIT_GRADCHECK = 4


def _load_dataset(config, dataset_dir=None):
    if dataset_dir is not None:
        return load_manifest(dataset_dir)
    return make_dataset(config.data_section())


def _load_model(config, args, dataset):
    checkpoint = args.checkpoint or Saver(config.output_dir).path(CHECKPOINT_NAME)
    params, _ = load_checkpoint(checkpoint)
    if params.config.input_dim != dataset.input_dim or params.config.num_classes != dataset.num_classes:
        raise ValidationError(
            f"checkpoint expects F={params.config.input_dim}, C={params.config.num_classes}; "
            f"dataset has F={dataset.input_dim}, C={dataset.num_classes}"
        )
    return params


def cmd_generate(config, args):
    data = config.data_section()
    gen_config = data.hierarchy if data.kind == "hierarchy" else data.attributes
    dataset, _ = get_generator(data.kind)(gen_config)
    write_manifest(dataset, config.output_dir)
    counts = dataset.counts()
    print(
        f"generated {counts['total']} samples (train {counts['train']}, test {counts['test']}), "
        f"C={dataset.num_classes}, levels={dataset.num_levels}, "
        f"attributes={dataset.num_attributes} -> {config.output_dir}"
    )


def cmd_train(config, args):
    dataset = _load_dataset(config, args.dataset)
    saver = Saver(config.output_dir)
    saver.save_experiment_config(config.to_dict())
    net_config = config.net.net_config(dataset.input_dim, dataset.num_classes)
    params, logs = train(
        dataset, net_config, config.train_config(), config.sampler_config(), saver, quiet=args.quiet
    )
    if logs and config.eval.plots:
        plot_convergence(logs, saver.path("convergence.png"))
    if logs:
        last = logs[-1]
        print(
            f"trained {len(logs)} epochs: E={last.combined_loss:.6f} E_s={last.softmax_loss:.6f} "
            f"E_t={last.triplet_loss:.6f} acc={last.accuracy:.4f} -> {saver.path(CHECKPOINT_NAME)}"
        )
    else:
        print(f"trained 0 epochs -> {saver.path(CHECKPOINT_NAME)}")


def cmd_eval(config, args):
    dataset = _load_dataset(config, args.dataset)
    params = _load_model(config, args, dataset)
    saver = Saver(config.output_dir)
    report = evaluate_retrieval(
        params,
        dataset,
        config.eval.resolve_predicates(dataset),
        gallery=config.eval.gallery,
        probe=config.eval.probe,
        per_query=config.eval.per_query,
        quiet=args.quiet,
    )
    report.to_json(saver.path(REPORT_NAME))
    report.to_csv(saver.path(PRECISION_CSV_NAME))
    if config.eval.plots:
        plot_precision_curves(report, saver.path("precision.png"))
    summary = " ".join(
        f"{name}@{len(curve)}={curve[-1]:.4f}" for name, curve in report.curves.items()
    )
    print(f"accuracy={report.accuracy:.4f} {summary}")


def cmd_gradcheck(config, args):
    report = GradcheckSuite(config.gradcheck, config.seed, args.corrupt).run()
    for line in report.lines():
        print(line)
    report.raise_for_failure()
    print(f"gradcheck passed: {len(report.errors)} components within {report.tolerance:.0e}")


def cmd_export_pca(config, args):
    dataset = _load_dataset(config, args.dataset)
    params = _load_model(config, args, dataset)
    saver = Saver(config.output_dir)
    test = dataset.subset("test")
    projection = pca_export(extract_embeddings(params, test))
    write_pca_csv(saver.path(PCA_CSV_NAME), projection, test)
    if config.eval.plots:
        plot_pca(projection, dataset.hierarchy.level_labels(1)[test.fine], saver.path("pca.png"))
    print(f"exported {projection.shape[0]} points -> {saver.path(PCA_CSV_NAME)}")


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "export-pca": cmd_export_pca,
}


def main(argv=None):
    args = get_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        config = get_config(args.config) if args.config else RunConfig()
        config = config.with_overrides(args.out, args.seed)
        COMMANDS[args.command](config, args)
    except GradcheckError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_GRADCHECK
    except (TrainingDivergedError, DegenerateEmbeddingError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ValidationError, InputError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
