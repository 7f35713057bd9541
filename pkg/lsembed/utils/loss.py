"""Softmax and structure-aware triplet losses with their gradients.

Per-sample terms carry no 1/N or 1/(2N) prefactor; batch averaging is the
trainer's job.
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

from lsembed.exp_data import BASE_MARGIN
from lsembed.labelspace import MarginSchedule, jaccard_margin, triplet_margins
from lsembed.utils.errors import InputError, ValidationError


@dataclass
class LossValue:
    value: float
    grads: tuple

    def __iter__(self):
        yield self.value
        yield self.grads


def _hinge(d_near, d_far, margin):
    activation = d_near - d_far + margin
    if activation > 0.0:
        return activation, True
    return 0.0, False


def _check_distances(*distances):
    for d in distances:
        if not np.isfinite(d) or d < 0:
            raise InputError(f"distances must be finite and non-negative, got {d}")


def _squared(a, b):
    diff = a - b
    return float(np.dot(diff, diff))


def _unit_vectors(*vectors):
    out = []
    for v in vectors:
        v = np.asarray(v, dtype=np.float64)
        norm = np.sqrt(np.dot(v, v))
        if v.ndim != 1 or abs(norm - 1.0) > 1e-6:
            raise ValidationError(f"embedding is not a unit vector (norm {norm:.9f})")
        out.append(v)
    if len({v.shape for v in out}) != 1:
        raise InputError("embeddings have different dimensions")
    return out


def softmax_nll(logits, label):
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1:
        raise InputError(f"logits must be a vector, got shape {logits.shape}")
    if isinstance(label, (bool, np.bool_)) or not 0 <= int(label) < logits.size or int(label) != label:
        raise InputError(f"label {label} out of range 0..{logits.size - 1}")
    if not np.isfinite(logits).all():
        raise InputError("logits contain non-finite values")
    label = int(label)
    value = float(logsumexp(logits) - logits[label])
    grad = softmax(logits)
    grad[label] -= 1.0
    return LossValue(max(value, 0.0), (grad,))


def batch_softmax_nll(logits, labels):
    """Per-row NLL values and gradients for a (n, C) logits matrix."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    rows = np.arange(logits.shape[0])
    values = logsumexp(logits, axis=1) - logits[rows, labels]
    grads = softmax(logits, axis=1)
    grads[rows, labels] -= 1.0
    return np.maximum(values, 0.0), grads


def triplet_hinge(d_rp, d_rn, m):
    _check_distances(d_rp, d_rn)
    if m < 0:
        raise ValidationError(f"margin must be non-negative, got {m}")
    value, active = _hinge(d_rp, d_rn, m)
    grad = np.array([1.0, -1.0]) if active else np.zeros(2)
    return LossValue(value, (grad,))


def triplet_embedding_grads(y_r, y_p, y_n, m):
    y_r, y_p, y_n = _unit_vectors(y_r, y_p, y_n)
    loss = triplet_hinge(_squared(y_r, y_p), _squared(y_r, y_n), m)
    if loss.value > 0.0:
        grads = (2.0 * (y_n - y_p), -2.0 * (y_r - y_p), 2.0 * (y_r - y_n))
    else:
        grads = (np.zeros_like(y_r), np.zeros_like(y_p), np.zeros_like(y_n))
    return LossValue(loss.value, grads)


def quadruplet_loss(d_rp_plus, d_rp_minus, d_rn, m1, m2):
    if not m1 > m2 > 0:
        raise ValidationError(f"quadruplet margins need m1 > m2 > 0, got m1={m1}, m2={m2}")
    _check_distances(d_rp_plus, d_rp_minus, d_rn)
    return generalized_triplets((d_rp_plus, d_rp_minus, d_rn), (m1 - m2, m2))


def generalized_triplets(distances, margins):
    """Sum of hinges over adjacent (inner, outer) distance pairs.

    ``distances[j]`` is the distance from the reference to its level-j
    companion, innermost first; ``margins[j]`` belongs to the pair (j, j+1).
    """
    distances = np.asarray(distances, dtype=np.float64)
    if distances.ndim != 1 or distances.size != len(margins) + 1:
        raise InputError(
            f"need {len(margins) + 1} distances for {len(margins)} margins, got {distances.shape}"
        )
    _check_distances(*distances)
    value = 0.0
    grad = np.zeros_like(distances)
    for j, margin in enumerate(margins):
        if margin < 0:
            raise ValidationError(f"margin must be non-negative, got {margin}")
        term, active = _hinge(distances[j], distances[j + 1], margin)
        value = value + term
        if active:
            grad[j] += 1.0
            grad[j + 1] -= 1.0
    return LossValue(float(value), (grad,))


def tuplet_loss(distances, schedule):
    if len(distances) != schedule.num_levels + 1:
        raise InputError(
            f"an {schedule.num_levels}-level tuplet needs {schedule.num_levels + 1} "
            f"distances, got {len(distances)}"
        )
    return generalized_triplets(distances, triplet_margins(schedule))


def tuplet_embedding_grads(y_r, companions, margins):
    """Loss and embedding gradients for one tuplet.

    companions: (k, D) embeddings ordered innermost to outermost.
    Returns grads (d/dy_r, d/dcompanions).
    """
    y_r = np.asarray(y_r, dtype=np.float64)
    companions = np.asarray(companions, dtype=np.float64)
    diffs = y_r[None, :] - companions
    distances = np.sum(diffs * diffs, axis=1)
    loss = generalized_triplets(distances, margins)
    (d_dist,) = loss.grads
    d_companions = -2.0 * d_dist[:, None] * diffs
    d_ref = 2.0 * (d_dist[:, None] * diffs).sum(axis=0)
    return LossValue(loss.value, (d_ref, d_companions))


def adaptive_triplet(d_rp, d_rn, table, class_p, class_n, m_b=BASE_MARGIN):
    return triplet_hinge(d_rp, d_rn, jaccard_margin(table, class_p, class_n, m_b))


def combined_loss(e_s, e_t, lambda_s):
    if not 0.0 <= lambda_s <= 1.0:
        raise ValidationError(f"lambda_s must be in [0, 1], got {lambda_s}")
    if e_s < 0 or e_t < 0:
        raise InputError(f"loss terms must be non-negative, got e_s={e_s}, e_t={e_t}")
    return lambda_s * e_s + (1.0 - lambda_s) * e_t


class StructuredLosses:
    """Picks the similarity loss for a label structure.

    The built callable maps (reference embedding, companion embeddings,
    TupletIndices) to a LossValue with embedding gradients.
    """

    def __init__(self, schedule=None, table=None, base_margin=BASE_MARGIN):
        self.schedule = schedule or MarginSchedule((base_margin,), base_margin)
        self.table = table
        self.base_margin = base_margin

    def build_loss(self, mode="tuplet"):
        """Choices: ['triplet', 'tuplet' or 'adaptive']"""
        if mode == "triplet":
            return self.TripletLoss
        elif mode == "tuplet":
            return self.TupletLoss
        elif mode == "adaptive":
            if self.table is None:
                raise ValidationError("adaptive margins need an attribute table")
            return self.AdaptiveLoss
        else:
            raise NotImplementedError(mode)

    def TripletLoss(self, y_r, companions, tuplet):
        return tuplet_embedding_grads(y_r, companions[:2], (self.schedule.margins[0],))

    def TupletLoss(self, y_r, companions, tuplet):
        return tuplet_embedding_grads(y_r, companions, tuplet.margins)

    def AdaptiveLoss(self, y_r, companions, tuplet):
        margin = jaccard_margin(self.table, tuplet.class_p, tuplet.class_n, self.base_margin)
        return tuplet_embedding_grads(y_r, companions, (margin,))
