"""Retrieval precision@k, classification accuracy and the PCA export."""
import csv
import json
import logging
import re
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh
from tqdm import tqdm

from lsembed.exp_data import K_ATTRIBUTE, K_COARSE, K_FINE
from lsembed.labelspace import Hierarchy
from lsembed.modeling.mlp import embed, predict_logits
from lsembed.utils.errors import InputError, ValidationError
from lsembed.utils.loss import batch_softmax_nll

logger = logging.getLogger(__name__)

_PREDICATE = re.compile(r"^(fine|attribute|level(\d+))(?:@(\d+))?$")


@dataclass(frozen=True)
class RelevancePredicate:
    """When a retrieved sample counts as relevant to a query.

    ``fine``: same fine class. ``level``: labels agree on the first ``level``
    hierarchy levels. ``attribute``: the classes share at least one attribute.
    """

    kind: str
    level: int = None

    def __post_init__(self):
        if self.kind not in ("fine", "level", "attribute"):
            raise ValidationError(f"unknown relevance predicate '{self.kind}'")
        if self.kind == "level" and (self.level is None or self.level < 1):
            raise ValidationError("level predicates need a level >= 1")

    @classmethod
    def parse(cls, text):
        """``fine``, ``level2`` or ``attribute``, optionally suffixed ``@K``.

        Returns (predicate, k_max or None).
        """
        match = _PREDICATE.match(text.strip())
        if match is None:
            raise ValidationError(f"cannot parse relevance predicate '{text}'")
        name, level, k = match.groups()
        predicate = cls("level", int(level)) if level else cls(name)
        return predicate, int(k) if k else None

    @property
    def name(self):
        return f"level{self.level}" if self.kind == "level" else self.kind

    def default_k(self):
        return {"fine": K_FINE, "level": K_COARSE, "attribute": K_ATTRIBUTE}[self.kind]

    def relevance(self, query_fine, gallery_fine, hierarchy=None, attributes=None):
        """Boolean (n_query, n_gallery) relevance matrix."""
        query_fine = np.asarray(query_fine, dtype=np.int64)
        gallery_fine = np.asarray(gallery_fine, dtype=np.int64)
        if self.kind == "fine":
            return query_fine[:, None] == gallery_fine[None, :]
        if self.kind == "level":
            if hierarchy is None:
                raise InputError("level predicates need a hierarchy")
            if self.level > hierarchy.num_levels:
                raise InputError(
                    f"level {self.level} exceeds the hierarchy depth {hierarchy.num_levels}"
                )
            depth = hierarchy.depth_matrix()
            return depth[np.ix_(query_fine, gallery_fine)] >= self.level
        if attributes is None:
            raise InputError("attribute predicates need an attribute table")
        members = attributes.as_matrix().astype(np.int64)
        shares = (members @ members.T) > 0
        return shares[np.ix_(query_fine, gallery_fine)]


def extract_embeddings(params, dataset):
    if len(dataset) == 0:
        raise InputError("cannot embed an empty split")
    return embed(params, dataset.features)


def per_query_precision(
    embeddings, fine, predicate, k_max, hierarchy=None, attributes=None, ids=None, gallery=None, quiet=True
):
    """(n_query, k_max) matrix of precision@k for every query.

    ``gallery`` is an optional ``(embeddings, fine, ids)`` triple; without it
    the queries double as the gallery and each query is left out of its own
    ranking. Ties in squared distance go to the smaller sample id.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    fine = np.asarray(fine, dtype=np.int64)
    n = embeddings.shape[0]
    ids = np.arange(n) if ids is None else np.asarray(ids, dtype=np.int64)
    if hierarchy is None:
        hierarchy = Hierarchy.flat(int(fine.max()) + 1 if n else 1)
    same_set = gallery is None
    if same_set:
        g_emb, g_fine, g_ids = embeddings, fine, ids
        candidates = n - 1
    else:
        g_emb, g_fine, g_ids = (np.asarray(a) for a in gallery)
        g_ids = g_ids.astype(np.int64)
        candidates = g_emb.shape[0]
    if n == 0 or candidates < 1:
        raise InputError("precision@k needs at least one query and one gallery sample")
    if not 1 <= k_max <= candidates:
        raise InputError(f"k_max must lie in 1..{candidates}, got {k_max}")

    relevant = predicate.relevance(fine, g_fine, hierarchy, attributes)
    ks = np.arange(1, k_max + 1, dtype=np.float64)
    table = np.empty((n, k_max), dtype=np.float64)
    for q in tqdm(range(n), disable=quiet, leave=False):
        diff = g_emb - embeddings[q]
        d = np.sum(diff * diff, axis=1)
        order = np.lexsort((g_ids, d))
        if same_set:
            order = order[order != q]
        hits = relevant[q, order[:k_max]]
        table[q] = np.cumsum(hits) / ks
    return table


def precision_at_k(embeddings, fine, predicate, k_max, hierarchy=None, attributes=None, ids=None, gallery=None):
    """Mean precision@k over queries for k = 1..k_max."""
    table = per_query_precision(embeddings, fine, predicate, k_max, hierarchy, attributes, ids, gallery)
    return table.mean(axis=0)


class Evaluator:
    """Confusion-matrix accumulator for fine-class predictions."""

    def __init__(self, num_class):
        self.num_class = num_class
        self.confusion_matrix = np.zeros((self.num_class,) * 2, dtype=np.int64)

    def _generate_matrix(self, gt, pred):
        label = self.num_class * gt.astype(np.int64) + pred
        count = np.bincount(label, minlength=self.num_class ** 2)
        return count.reshape(self.num_class, self.num_class)

    def add_batch(self, gt, pred):
        gt = np.asarray(gt, dtype=np.int64)
        pred = np.asarray(pred, dtype=np.int64)
        if gt.shape != pred.shape:
            raise InputError(f"label and prediction shapes differ: {gt.shape} vs {pred.shape}")
        self.confusion_matrix += self._generate_matrix(gt, pred)

    def accuracy(self):
        total = self.confusion_matrix.sum()
        return float(np.diag(self.confusion_matrix).sum() / total) if total else 0.0

    def accuracy_by_class(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.diag(self.confusion_matrix) / self.confusion_matrix.sum(axis=1)

    def reset(self):
        self.confusion_matrix[...] = 0


def classification_accuracy(params, dataset):
    """Fraction of samples whose argmax logit (lowest index on ties) is the fine label."""
    if len(dataset) == 0:
        raise InputError("cannot score an empty split")
    evaluator = Evaluator(params.config.num_classes)
    evaluator.add_batch(dataset.fine, np.argmax(predict_logits(params, dataset.features), axis=1))
    return evaluator.accuracy()


def linear_probe_accuracy(
    train_emb, train_labels, test_emb, test_labels, num_classes, learning_rate=0.5, steps=500
):
    """Test accuracy of a softmax classifier fitted on frozen embeddings.

    Full-batch gradient descent from zero weights, so the result is deterministic.
    """
    train_emb = np.asarray(train_emb, dtype=np.float64)
    test_emb = np.asarray(test_emb, dtype=np.float64)
    train_labels = np.asarray(train_labels, dtype=np.int64)
    if train_emb.shape[0] == 0 or np.asarray(test_emb).shape[0] == 0:
        raise InputError("linear probe needs non-empty train and test embeddings")
    weight = np.zeros((num_classes, train_emb.shape[1]))
    bias = np.zeros(num_classes)
    n = train_emb.shape[0]
    for _ in range(steps):
        _, d_logits = batch_softmax_nll(train_emb @ weight.T + bias, train_labels)
        d_logits /= n
        weight -= learning_rate * (d_logits.T @ train_emb)
        bias -= learning_rate * d_logits.sum(axis=0)
    evaluator = Evaluator(num_classes)
    evaluator.add_batch(test_labels, np.argmax(test_emb @ weight.T + bias, axis=1))
    return evaluator.accuracy()


@dataclass
class RetrievalReport:
    curves: OrderedDict = field(default_factory=OrderedDict)
    accuracy: float = None
    probe_accuracy: float = None
    gallery: str = "test"
    num_queries: int = 0
    per_query: dict = None

    def precision(self, name, k):
        return float(self.curves[name][k - 1])

    def to_dict(self):
        report = {
            "accuracy": self.accuracy,
            "gallery": self.gallery,
            "num_queries": self.num_queries,
            "precision": {name: [float(v) for v in curve] for name, curve in self.curves.items()},
            "k_max": {name: len(curve) for name, curve in self.curves.items()},
        }
        if self.probe_accuracy is not None:
            report["probe_accuracy"] = self.probe_accuracy
        if self.per_query is not None:
            report["per_query"] = {name: table.tolist() for name, table in self.per_query.items()}
        return report

    def to_json(self, filename):
        with open(filename, "w") as f:
            f.write(json.dumps(self.to_dict(), indent=2) + "\n")
        return filename

    def to_csv(self, filename):
        """Columns k then one per predicate; shorter curves leave blank cells."""
        names = list(self.curves)
        longest = max((len(c) for c in self.curves.values()), default=0)
        with open(filename, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["k"] + names)
            for k in range(1, longest + 1):
                row = [k]
                for name in names:
                    curve = self.curves[name]
                    row.append(format(float(curve[k - 1]), ".17g") if k <= len(curve) else "")
                writer.writerow(row)
        return filename


def resolve_predicates(specs, num_candidates):
    """Parse predicate specs; default K values are clipped to the gallery size."""
    resolved = []
    for spec in specs:
        predicate, k = RelevancePredicate.parse(spec)
        if k is None:
            k = min(predicate.default_k(), num_candidates)
            if k < predicate.default_k():
                logger.warning("clipping %s k_max to %d gallery candidates", predicate.name, k)
        resolved.append((predicate, k))
    return resolved


def evaluate_retrieval(params, dataset, predicates, gallery="test", probe=False, per_query=False, quiet=True):
    """Embed the test split and score every predicate.

    ``gallery="test"`` uses the test split as queries and gallery; ``"train"``
    ranks the training split for each test query.
    """
    if gallery not in ("test", "train"):
        raise ValidationError(f"gallery must be 'test' or 'train', got '{gallery}'")
    test = dataset.subset("test")
    train = dataset.subset("train")
    query_emb = extract_embeddings(params, test)
    gallery_triple = None
    candidates = len(test) - 1
    if gallery == "train":
        gallery_triple = (extract_embeddings(params, train), train.fine, train.ids)
        candidates = len(train)

    report = RetrievalReport(gallery=gallery, num_queries=len(test))
    report.accuracy = classification_accuracy(params, test)
    tables = OrderedDict()
    for predicate, k in resolve_predicates(predicates, candidates):
        table = per_query_precision(
            query_emb, test.fine, predicate, k, dataset.hierarchy, dataset.attributes,
            test.ids, gallery_triple, quiet,
        )
        tables[predicate.name] = table
        report.curves[predicate.name] = table.mean(axis=0)
        logger.info("%s: P@1=%.4f P@%d=%.4f", predicate.name, report.curves[predicate.name][0], k,
                    report.curves[predicate.name][-1])
    if per_query:
        report.per_query = tables
    if probe:
        train_emb = gallery_triple[0] if gallery_triple else extract_embeddings(params, train)
        report.probe_accuracy = linear_probe_accuracy(
            train_emb, train.fine, query_emb, test.fine, dataset.num_classes
        )
    return report


@dataclass
class PrincipalAxes:
    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    total_variance: float

    @property
    def explained_variance_ratio(self):
        if self.total_variance == 0.0:
            return np.zeros_like(self.explained_variance)
        return self.explained_variance / self.total_variance

    def transform(self, data):
        return (np.asarray(data, dtype=np.float64) - self.mean) @ self.components.T


def principal_axes(data, out_dim=2):
    """Top principal directions of the centered data.

    Each direction is flipped so that its largest-magnitude coordinate is
    positive (first such coordinate on ties).
    """
    data = np.asarray(data, dtype=np.float64)
    n, dim = data.shape
    if n < 2:
        raise InputError("PCA needs at least two samples")
    if not 1 <= out_dim <= dim:
        raise InputError(f"out_dim must lie in 1..{dim}, got {out_dim}")
    mean = data.mean(axis=0)
    centered = data - mean
    scatter = centered.T @ centered / (n - 1)
    values, vectors = eigh(scatter, subset_by_index=[dim - out_dim, dim - 1])
    order = np.argsort(-values, kind="stable")
    values = np.maximum(values[order], 0.0)
    components = vectors[:, order].T
    pivots = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(out_dim), pivots])
    components *= np.where(signs == 0, 1.0, signs)[:, None]
    return PrincipalAxes(mean, components, values, float(np.trace(scatter)))


def pca_export(embeddings, out_dim=2):
    return principal_axes(embeddings, out_dim).transform(embeddings)


def write_pca_csv(filename, projection, dataset):
    """id, split, fine, coarse label and the projected coordinates per row."""
    coarse = dataset.hierarchy.level_labels(1)[dataset.fine]
    with open(filename, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["id", "split", "fine", "coarse"] + [f"pc{i + 1}" for i in range(projection.shape[1])])
        for i in range(len(dataset)):
            writer.writerow(
                [int(dataset.ids[i]), dataset.splits[i], int(dataset.fine[i]), int(coarse[i])]
                + [format(float(v), ".17g") for v in projection[i]]
            )
    return filename
