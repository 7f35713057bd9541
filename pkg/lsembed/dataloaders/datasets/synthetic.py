"""Gaussian-mixture datasets with planted hierarchical or attribute structure."""
import logging
import warnings
from dataclasses import dataclass
from itertools import product
from math import comb

import numpy as np

from lsembed.labelspace import AttributeTable, Hierarchy
from lsembed.utils.errors import ValidationError
from .base import Dataset

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class HierGenConfig:
    branching: tuple = (6, 5)
    samples_per_class: int = 40
    input_dim: int = 32
    level_scales: tuple = (1.0, 0.7)
    noise_sigma: float = 1.25
    seed: int = 0
    train_fraction: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "branching", tuple(int(b) for b in self.branching))
        object.__setattr__(self, "level_scales", tuple(float(s) for s in self.level_scales))
        if not self.branching or any(b <= 0 for b in self.branching):
            raise ValidationError(f"branching must be positive integers, got {self.branching}")
        if len(self.level_scales) != len(self.branching):
            raise ValidationError("level_scales needs one entry per hierarchy level")
        if any(s <= 0 for s in self.level_scales):
            raise ValidationError("level_scales must be positive")
        _check_common(self)
        if any(a < b for a, b in zip(self.level_scales, self.level_scales[1:])):
            warnings.warn(
                f"level_scales {self.level_scales} are not decreasing; coarse levels "
                "will be weaker than fine ones",
                stacklevel=2,
            )

    @property
    def num_classes(self):
        return int(np.prod(self.branching))


@dataclass(frozen=True)
class AttrGenConfig:
    num_classes: int = 30
    num_attributes: int = 12
    attrs_per_class: int = 3
    samples_per_class: int = 40
    input_dim: int = 32
    prototype_scale: float = 1.0
    noise_sigma: float = 0.55
    seed: int = 0
    train_fraction: float = 0.5

    def __post_init__(self):
        if self.num_classes <= 0 or self.num_attributes <= 0 or self.attrs_per_class <= 0:
            raise ValidationError("class, attribute and per-class attribute counts must be positive")
        if self.attrs_per_class > self.num_attributes:
            raise ValidationError(
                f"attrs_per_class ({self.attrs_per_class}) exceeds num_attributes ({self.num_attributes})"
            )
        if self.prototype_scale <= 0:
            raise ValidationError("prototype_scale must be positive")
        _check_common(self)


def _check_common(config):
    if config.samples_per_class < 2:
        raise ValidationError("samples_per_class must be at least 2 (one train, one test)")
    if config.input_dim <= 0:
        raise ValidationError("input_dim must be positive")
    if config.noise_sigma < 0:
        raise ValidationError("noise_sigma must be non-negative")
    if not 0.0 < config.train_fraction < 1.0:
        raise ValidationError("train_fraction must lie strictly between 0 and 1")


def _split_counts(config):
    n_train = int(round(config.samples_per_class * config.train_fraction))
    n_train = min(max(n_train, 1), config.samples_per_class - 1)
    return n_train, config.samples_per_class - n_train


def _draw_samples(rng, means, config):
    """Train rows for every class first, then test rows drawn with fresh noise."""
    n_train, n_test = _split_counts(config)
    num_classes, dim = means.shape
    blocks, fine, splits = [], [], []
    for split, count in (("train", n_train), ("test", n_test)):
        for c in range(num_classes):
            noise = rng.standard_normal((count, dim))
            blocks.append(means[c] + config.noise_sigma * noise)
            fine.extend([c] * count)
            splits.extend([split] * count)
    features = np.concatenate(blocks, axis=0)
    return np.arange(features.shape[0]), splits, features, fine


def generate_hierarchy(config=None):
    config = config or HierGenConfig()
    rng = np.random.default_rng(config.seed)
    dim = config.input_dim
    centers = np.zeros((1, dim))
    paths = np.zeros((1, 0), dtype=np.int64)
    for level, (branches, scale) in enumerate(zip(config.branching, config.level_scales)):
        offsets = scale * rng.standard_normal((centers.shape[0], branches, dim))
        centers = (centers[:, None, :] + offsets).reshape(-1, dim)
        parents = np.repeat(paths, branches, axis=0)
        node_ids = np.arange(parents.shape[0])[:, None]
        paths = np.concatenate([parents, node_ids], axis=1)
    hierarchy = Hierarchy(paths)
    ids, splits, features, fine = _draw_samples(rng, centers, config)
    meta = {"generator": "hierarchy", "branching": list(config.branching), "seed": config.seed}
    dataset = Dataset(ids, splits, features, fine, hierarchy, None, meta)
    logger.info(
        "generated hierarchy dataset: %d classes over %d levels, %d samples",
        hierarchy.num_classes, hierarchy.num_levels, len(dataset),
    )
    return dataset, hierarchy


def _draw_attribute_sets(rng, config):
    unique_possible = comb(config.num_attributes, config.attrs_per_class) >= config.num_classes
    sets, seen = [], set()
    for _ in range(config.num_classes):
        while True:
            attrs = frozenset(
                int(a) for a in rng.choice(config.num_attributes, config.attrs_per_class, replace=False)
            )
            if not unique_possible or attrs not in seen:
                break
        seen.add(attrs)
        sets.append(attrs)
    return tuple(sets)


def generate_attributes(config=None):
    config = config or AttrGenConfig()
    rng = np.random.default_rng(config.seed)
    prototypes = config.prototype_scale * rng.standard_normal(
        (config.num_attributes, config.input_dim)
    )
    table = AttributeTable(config.num_attributes, _draw_attribute_sets(rng, config))
    means = np.stack([prototypes[sorted(attrs)].mean(axis=0) for attrs in table.sets])
    hierarchy = Hierarchy.flat(config.num_classes)
    ids, splits, features, fine = _draw_samples(rng, means, config)
    meta = {"generator": "attributes", "seed": config.seed}
    dataset = Dataset(ids, splits, features, fine, hierarchy, table, meta)
    logger.info(
        "generated attribute dataset: %d classes, %d attributes, %d samples",
        config.num_classes, config.num_attributes, len(dataset),
    )
    return dataset, table


def nearest_centroid_accuracy(dataset):
    """Raw-feature nearest-class-mean accuracy on the test split (signal check)."""
    train, test = dataset.subset("train"), dataset.subset("test")
    centroids = np.stack([train.features[idx].mean(axis=0) for idx in train.class_indices()])
    d = ((test.features[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return float(np.mean(np.argmin(d, axis=1) == test.fine))


def class_mean_distances(dataset):
    """Pairs of (class a, class b, distance between their mean raw features)."""
    means = np.stack([dataset.features[idx].mean(axis=0) for idx in dataset.class_indices()])
    return [
        (a, b, float(np.linalg.norm(means[a] - means[b])))
        for a, b in product(range(len(means)), repeat=2)
        if a < b
    ]
