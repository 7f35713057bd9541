from lsembed.utils.errors import ValidationError

from .datasets.base import Dataset, load_manifest, write_manifest
from .datasets.synthetic import (
    AttrGenConfig,
    HierGenConfig,
    generate_attributes,
    generate_hierarchy,
)
from .samplers import SamplerConfig, TupletIndices, TupletSampler, epoch_plan, mine_negative


def get_generator(name):
    return {"hierarchy": generate_hierarchy, "attributes": generate_attributes}[name]


def make_dataset(data):
    """Dataset from a manifest directory, or generated from the data section."""
    if data.path:
        return load_manifest(data.path)
    if data.kind not in ("hierarchy", "attributes"):
        raise ValidationError(f"unknown generator '{data.kind}'")
    gen_config = data.hierarchy if data.kind == "hierarchy" else data.attributes
    dataset, _ = get_generator(data.kind)(gen_config)
    return dataset


def get_split(dataset):
    train, test = dataset.subset("train"), dataset.subset("test")
    if len(train) == 0:
        raise ValidationError("dataset has no training samples")
    return train, test


__all__ = [
    "AttrGenConfig",
    "Dataset",
    "HierGenConfig",
    "SamplerConfig",
    "TupletIndices",
    "TupletSampler",
    "epoch_plan",
    "generate_attributes",
    "generate_hierarchy",
    "get_split",
    "load_manifest",
    "make_dataset",
    "mine_negative",
    "write_manifest",
]
