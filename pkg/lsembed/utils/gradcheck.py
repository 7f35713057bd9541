"""
Central-difference verification of every analytic gradient in the package:
the loss functions (checked through the unit-normalization of their
embeddings) and the full network objective at several lambda_s values.
"""
import logging
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from lsembed.dataloaders.datasets.base import Dataset
from lsembed.dataloaders.samplers import SamplerConfig, TupletSampler
from lsembed.labelspace import AttributeTable, Hierarchy, MarginSchedule, triplet_margins
from lsembed.modeling.mlp import NetConfig, forward, init_parameters
from lsembed.trainer import batch_objective
from lsembed.utils.errors import DegenerateEmbeddingError, GradcheckError, ValidationError
from lsembed.utils.loss import (
    StructuredLosses,
    adaptive_triplet,
    quadruplet_loss,
    softmax_nll,
    triplet_embedding_grads,
    triplet_hinge,
    tuplet_embedding_grads,
    tuplet_loss,
)

logger = logging.getLogger(__name__)

# activations closer than this to a hinge or ReLU kink are redrawn
KINK_GAP = 1e-3
MAX_DRAWS = 1000

# five fine classes under two coarse nodes
GRADCHECK_PATHS = ((0, 0), (0, 1), (1, 2), (1, 3), (1, 4))


@dataclass(frozen=True)
class GradcheckConfig:
    seeds: int = 10
    eps: float = 1e-5
    tolerance: float = 1e-5
    lambdas: tuple = (0.0, 0.8, 1.0)
    input_dim: int = 10
    hidden_dims: tuple = (16, 16)
    embed_dim: int = 8
    num_classes: int = 5
    batch_size: int = 4
    samples_per_class: int = 3
    margin: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "lambdas", tuple(float(v) for v in self.lambdas))
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.seeds < 1 or self.eps <= 0 or self.tolerance <= 0:
            raise ValidationError("gradcheck needs seeds >= 1 and positive eps and tolerance")
        if self.num_classes != len(GRADCHECK_PATHS):
            raise ValidationError(f"gradcheck network uses {len(GRADCHECK_PATHS)} classes")
        if any(not 0.0 <= v <= 1.0 for v in self.lambdas):
            raise ValidationError(f"lambdas must lie in [0, 1], got {self.lambdas}")

    def net_config(self):
        return NetConfig(self.input_dim, self.embed_dim, self.num_classes, self.hidden_dims)


def central_difference(func, x0, eps=1e-5):
    """Centered-difference gradient of a scalar function of a flat vector."""
    x = np.array(x0, dtype=np.float64)
    grad = np.zeros_like(x)
    for j in range(x.size):
        saved = x[j]
        x[j] = saved + eps
        f_plus = func(x)
        x[j] = saved - eps
        f_minus = func(x)
        x[j] = saved
        grad[j] = (f_plus - f_minus) / (2 * eps)
    return grad


def relative_error(analytic, numeric):
    """Largest entry-wise deviation, relative to the larger gradient's scale."""
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric)) / scale)


def _normalize(z):
    return z / np.sqrt(np.sum(z * z, axis=-1, keepdims=True))


def _through_normalization(z, d_y):
    """Chain d/dy back to the un-normalized rows z."""
    y = _normalize(z)
    norms = np.sqrt(np.sum(z * z, axis=-1, keepdims=True))
    return (d_y - y * np.sum(y * d_y, axis=-1, keepdims=True)) / norms


def _distances(z):
    y = _normalize(z)
    diffs = y[0] - y[1:]
    return np.sum(diffs * diffs, axis=1)


def _usable(distances, margins):
    """At least one active hinge and none within KINK_GAP of its kink."""
    gaps = np.array([distances[j] - distances[j + 1] + m for j, m in enumerate(margins)])
    return bool(np.any(gaps > 0) and np.all(np.abs(gaps) > KINK_GAP))


def _draw_members(rng, count, dim, margins):
    for _ in range(MAX_DRAWS):
        z = rng.standard_normal((count, dim))
        if np.min(np.linalg.norm(z, axis=1)) > KINK_GAP and _usable(_distances(z), margins):
            return z
    raise RuntimeError("could not draw a kink-free configuration")


class GradcheckSuite:
    """Runs every component over ``config.seeds`` random draws.

    ``corrupt`` names a component whose analytic gradient gets its sign
    flipped, so the suite's own failure path can be exercised.
    """

    def __init__(self, config=None, seed=0, corrupt=None):
        self.config = config or GradcheckConfig()
        self.seed = seed
        self.corrupt = corrupt

    def components(self):
        names = ["softmax", "triplet", "quadruplet", "tuplet3", "adaptive"]
        names += [f"network-tuplet[lambda={v:g}]" for v in self.config.lambdas]
        names += [f"network-adaptive[lambda={v:g}]" for v in self.config.lambdas]
        return names

    def _check(self, name, func, x0, analytic):
        if name == self.corrupt:
            analytic = -analytic
        numeric = central_difference(func, x0, self.config.eps)
        return relative_error(analytic, numeric)

    def check_softmax(self, rng):
        c = self.config.num_classes
        logits = 2.0 * rng.standard_normal(c)
        label = int(rng.integers(c))
        (analytic,) = softmax_nll(logits, label).grads
        return self._check("softmax", lambda v: softmax_nll(v, label).value, logits, analytic)

    def check_triplet(self, rng):
        m, dim = self.config.margin, self.config.embed_dim
        z = _draw_members(rng, 3, dim, (m,))

        def value(flat):
            d = _distances(flat.reshape(z.shape))
            return triplet_hinge(d[0], d[1], m).value

        y = _normalize(z)
        d_y = np.stack(triplet_embedding_grads(y[0], y[1], y[2], m).grads)
        return self._check("triplet", value, z.ravel(), _through_normalization(z, d_y))

    def check_quadruplet(self, rng):
        m1, m2 = self.config.margin, self.config.margin / 2
        margins = (m1 - m2, m2)
        z = _draw_members(rng, 4, self.config.embed_dim, margins)

        def value(flat):
            d = _distances(flat.reshape(z.shape))
            return quadruplet_loss(d[0], d[1], d[2], m1, m2).value

        return self._check("quadruplet", value, z.ravel(), self._tuplet_analytic(z, margins))

    def check_tuplet3(self, rng):
        schedule = MarginSchedule.linear(3, self.config.margin)
        margins = triplet_margins(schedule)
        z = _draw_members(rng, 5, self.config.embed_dim, margins)

        def value(flat):
            return tuplet_loss(_distances(flat.reshape(z.shape)), schedule).value

        return self._check("tuplet3", value, z.ravel(), self._tuplet_analytic(z, margins))

    def check_adaptive(self, rng):
        c = self.config.num_classes
        table = _random_table(rng, c)
        class_p, class_n = (int(v) for v in rng.choice(c, size=2, replace=False))
        margin = table.jaccard_margin(class_p, class_n, self.config.margin)
        z = _draw_members(rng, 3, self.config.embed_dim, (margin,))

        def value(flat):
            d = _distances(flat.reshape(z.shape))
            return adaptive_triplet(d[0], d[1], table, class_p, class_n, self.config.margin).value

        return self._check("adaptive", value, z.ravel(), self._tuplet_analytic(z, (margin,)))

    @staticmethod
    def _tuplet_analytic(z, margins):
        y = _normalize(z)
        d_ref, d_comp = tuplet_embedding_grads(y[0], y[1:], margins).grads
        return _through_normalization(z, np.vstack([d_ref[None, :], d_comp]))

    def check_network(self, rng, structure, lambda_s):
        name = f"network-{'tuplet' if structure == 'hierarchy' else 'adaptive'}[lambda={lambda_s:g}]"
        net_config = self.config.net_config()
        for _ in range(MAX_DRAWS):
            dataset = _gradcheck_dataset(rng, self.config)
            params = init_parameters(net_config, int(rng.integers(2 ** 31)))
            sampler = TupletSampler(
                dataset,
                SamplerConfig(structure=structure, seed=int(rng.integers(2 ** 31))),
                MarginSchedule.linear(dataset.num_levels if structure == "hierarchy" else 1, self.config.margin),
                self.config.margin,
            )
            batch = [t for _, t in sampler.epoch(0) if t is not None][: self.config.batch_size]
            if batch and _network_usable(params, dataset, batch):
                break
        else:
            raise RuntimeError("could not draw a kink-free network configuration")
        mode = "tuplet" if structure == "hierarchy" else "adaptive"
        similarity = StructuredLosses(sampler.schedule, dataset.attributes, self.config.margin).build_loss(mode)

        def value(flat):
            params.load_flat(flat)
            return batch_objective(params, batch, dataset, lambda_s, similarity).value

        theta = params.flat()
        analytic = batch_objective(params, batch, dataset, lambda_s, similarity).grads.flat()
        error = self._check(name, value, theta, analytic)
        params.load_flat(theta)
        return name, error

    def run(self):
        """Returns a GradcheckReport of the worst relative error per component."""
        report = GradcheckReport(tolerance=self.config.tolerance)
        loss_checks = OrderedDict(
            softmax=self.check_softmax,
            triplet=self.check_triplet,
            quadruplet=self.check_quadruplet,
            tuplet3=self.check_tuplet3,
            adaptive=self.check_adaptive,
        )
        for seed in range(self.config.seeds):
            rng = np.random.default_rng([self.seed, seed])
            for name, check in loss_checks.items():
                report.update(name, check(rng))
            for structure in ("hierarchy", "attributes"):
                for lambda_s in self.config.lambdas:
                    report.update(*self.check_network(rng, structure, lambda_s))
        for name, error in report.errors.items():
            logger.info("%-32s max relative error %.3e", name, error)
        return report


class GradcheckReport:
    def __init__(self, tolerance):
        self.tolerance = tolerance
        self.errors = OrderedDict()

    def update(self, name, error):
        # a NaN error sticks
        current = self.errors.get(name, 0.0)
        self.errors[name] = current if np.isnan(current) or error <= current else error

    def failures(self):
        return [name for name, error in self.errors.items() if not error <= self.tolerance]

    @property
    def passed(self):
        return not self.failures()

    def raise_for_failure(self):
        failures = self.failures()
        if failures:
            worst = max(failures, key=lambda name: self.errors[name])
            raise GradcheckError(worst, self.errors[worst], self.tolerance)

    def lines(self):
        return [
            f"{name:<32s} {error:.3e} {'ok' if error <= self.tolerance else 'FAIL'}"
            for name, error in self.errors.items()
        ]


def _random_table(rng, num_classes, num_attributes=6):
    sets = []
    for _ in range(num_classes):
        size = int(rng.integers(1, 4))
        sets.append(frozenset(int(a) for a in rng.choice(num_attributes, size=size, replace=False)))
    return AttributeTable(num_attributes, tuple(sets))


def _gradcheck_dataset(rng, config):
    hierarchy = Hierarchy(np.array(GRADCHECK_PATHS, dtype=np.int64))
    n = config.num_classes * config.samples_per_class
    fine = np.repeat(np.arange(config.num_classes), config.samples_per_class)
    features = rng.standard_normal((n, config.input_dim))
    return Dataset(
        np.arange(n), ["train"] * n, features, fine, hierarchy, _random_table(rng, config.num_classes)
    )


def _network_usable(params, dataset, batch):
    """Kink-free ReLUs and hinges, with at least one active hinge."""
    rows = sorted({r for t in batch for r in t.members()})
    try:
        trace = forward(params, dataset.features[rows])
    except DegenerateEmbeddingError:
        return False
    # a row with a dead trunk has an embedding that is the bias alone
    if params.num_hidden and not np.any(trace.trunk > 0.0, axis=1).all():
        return False
    if any(np.min(np.abs(pre)) <= KINK_GAP for pre in trace.pre_activations):
        return False
    y = dict(zip(rows, trace.embedding))
    any_active = False
    for t in batch:
        diffs = y[t.reference] - np.stack([y[c] for c in t.companions])
        d = np.sum(diffs * diffs, axis=1)
        gaps = np.array([d[j] - d[j + 1] + m for j, m in enumerate(t.margins)])
        if np.any(np.abs(gaps) <= KINK_GAP):
            return False
        any_active = any_active or bool(np.any(gaps > 0))
    return any_active


def run_gradcheck(config=None, seed=0, corrupt=None):
    """Run the suite; raises GradcheckError naming the worst failing component."""
    report = GradcheckSuite(config, seed, corrupt).run()
    report.raise_for_failure()
    return report
