"""Experiment directory handling and the parameter checkpoint format.

Checkpoint layout (``checkpoint.bin``)::

    LSEMBED-CKPT\\n
    {"format_version": 1, "net_config": {...}, "params": [{"name": ..., "shape": [...]}, ...],
     "meta": {...}}\\n
    <float64 little-endian data of every tensor, in "params" order, C order>

The header is a single line of JSON with sorted keys, so identical
parameters always serialize to identical bytes.
"""
import json
import logging
from pathlib import Path

import numpy as np

from lsembed.exp_data import CHECKPOINT_NAME
from lsembed.modeling.mlp import NetConfig, Parameters
from lsembed.utils.errors import InputError, ValidationError

logger = logging.getLogger(__name__)

MAGIC = b"LSEMBED-CKPT\n"
CHECKPOINT_VERSION = 1


def save_checkpoint(params, filename, meta=None):
    header = {
        "format_version": CHECKPOINT_VERSION,
        "net_config": params.config.to_dict(),
        "params": [{"name": name, "shape": list(v.shape)} for name, v in params.items()],
        "meta": meta or {},
    }
    with open(filename, "wb") as f:
        f.write(MAGIC)
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for _, value in params.items():
            f.write(np.ascontiguousarray(value, dtype="<f8").tobytes())
    return filename


def load_checkpoint(filename):
    """Returns (Parameters, meta)."""
    filename = Path(filename)
    if not filename.is_file():
        raise InputError(f"no checkpoint found at '{filename}'")
    blob = filename.read_bytes()
    if not blob.startswith(MAGIC):
        raise ValidationError(f"'{filename}' is not an lsembed checkpoint")
    end = blob.index(b"\n", len(MAGIC))
    header = json.loads(blob[len(MAGIC):end])
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise ValidationError(
            f"unsupported checkpoint format_version {header.get('format_version')!r}"
        )
    config = NetConfig(**header["net_config"])
    offset = end + 1
    tensors = {}
    for entry in header["params"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        data = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        tensors[entry["name"]] = data.reshape(entry["shape"]).astype(np.float64)
        offset += 8 * count
    if offset != len(blob):
        raise ValidationError(f"checkpoint '{filename}' has {len(blob) - offset} trailing bytes")
    return Parameters(config, tensors), header["meta"]


class Saver:
    def __init__(self, directory):
        self.experiment_dir = Path(directory)
        self.experiment_dir.mkdir(parents=True, exist_ok=True)
        logger.info("experiment_dir: %s", self.experiment_dir)

    def path(self, name):
        return self.experiment_dir / name

    def save_checkpoint(self, params, meta=None, filename=CHECKPOINT_NAME):
        """Saves checkpoint to disk"""
        return save_checkpoint(params, self.path(filename), meta)

    def save_experiment_config(self, config_dict, filename="config.resolved.json"):
        with open(self.path(filename), "w") as f:
            f.write(json.dumps(config_dict, indent=2, sort_keys=True) + "\n")

    def save_json(self, name, payload):
        with open(self.path(name), "w") as f:
            f.write(json.dumps(payload, indent=2) + "\n")
        return self.path(name)
