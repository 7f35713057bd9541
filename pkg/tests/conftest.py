import numpy as np
import pytest

from lsembed.dataloaders.datasets.base import Dataset
from lsembed.dataloaders.datasets.synthetic import (
    AttrGenConfig,
    HierGenConfig,
    generate_attributes,
    generate_hierarchy,
)
from lsembed.labelspace import Hierarchy
from lsembed.modeling.mlp import NetConfig, init_parameters


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def hier_dataset():
    dataset, _ = generate_hierarchy(
        HierGenConfig(
            branching=(2, 3),
            samples_per_class=6,
            input_dim=8,
            level_scales=(1.0, 0.6),
            noise_sigma=0.2,
            seed=3,
        )
    )
    return dataset


@pytest.fixture
def attr_dataset():
    dataset, _ = generate_attributes(
        AttrGenConfig(
            num_classes=6,
            num_attributes=5,
            attrs_per_class=2,
            samples_per_class=6,
            input_dim=8,
            seed=3,
        )
    )
    return dataset


@pytest.fixture
def net_config():
    return NetConfig(input_dim=10, embed_dim=8, num_classes=5, hidden_dims=(16, 16))


@pytest.fixture
def params(net_config):
    return init_parameters(net_config, seed=7)


@pytest.fixture
def unit_vectors(rng):
    def draw(n, dim):
        z = rng.standard_normal((n, dim))
        return z / np.linalg.norm(z, axis=1, keepdims=True)

    return draw


def make_dataset(paths, fine, features, splits=None, attributes=None):
    """Dataset from explicit class paths, labels and features."""
    fine = np.asarray(fine)
    n = fine.size
    return Dataset(
        np.arange(n),
        splits or ["train"] * n,
        np.asarray(features, dtype=np.float64),
        fine,
        Hierarchy(np.asarray(paths)),
        attributes,
    )


@pytest.fixture
def dataset_factory():
    return make_dataset
