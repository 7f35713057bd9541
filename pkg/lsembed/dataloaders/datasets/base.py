import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from lsembed.exp_data import META_NAME, RECORDS_NAME
from lsembed.labelspace import AttributeTable, Hierarchy
from lsembed.utils.errors import InputError, ValidationError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
SPLITS = ("train", "test")


@dataclass(frozen=True)
class Sample:
    id: int
    split: str
    x: np.ndarray
    fine: int
    path: tuple
    attrs: tuple


class Dataset:
    """Feature vectors with fine labels and the label structure they live in.

    Every dataset carries a hierarchy (a flat one when no coarser levels
    exist); attribute datasets additionally carry an AttributeTable.
    """

    def __init__(self, ids, splits, features, fine, hierarchy, attributes=None, meta=None):
        self.ids = np.asarray(ids, dtype=np.int64)
        self.splits = np.asarray(splits, dtype=object)
        self.features = np.asarray(features, dtype=np.float64)
        self.fine = np.asarray(fine, dtype=np.int64)
        self.hierarchy = hierarchy
        self.attributes = attributes
        self.meta = dict(meta or {})
        self.validate()

    def validate(self):
        n = self.ids.shape[0]
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise ValidationError(f"features must be ({n}, F), got {self.features.shape}")
        if self.fine.shape != (n,) or self.splits.shape != (n,):
            raise ValidationError("ids, splits and fine labels must have equal length")
        if np.unique(self.ids).size != n:
            raise ValidationError("sample ids are not unique")
        if not np.isfinite(self.features).all():
            raise ValidationError("features contain non-finite values")
        bad_splits = set(self.splits.tolist()) - set(SPLITS)
        if bad_splits:
            raise ValidationError(f"unknown split names {sorted(bad_splits)}")
        if n and not (0 <= self.fine.min() and self.fine.max() < self.num_classes):
            raise ValidationError(
                f"fine labels must lie in 0..{self.num_classes - 1}"
            )
        if self.attributes is not None and self.attributes.num_classes != self.num_classes:
            raise ValidationError("attribute table and hierarchy disagree on the class count")

    def __len__(self):
        return self.ids.shape[0]

    def __getitem__(self, index):
        c = int(self.fine[index])
        attrs = tuple(sorted(self.attributes.sets[c])) if self.attributes is not None else ()
        return Sample(
            id=int(self.ids[index]),
            split=str(self.splits[index]),
            x=self.features[index],
            fine=c,
            path=self.hierarchy.path(c),
            attrs=attrs,
        )

    @property
    def input_dim(self):
        return self.features.shape[1]

    @property
    def num_classes(self):
        return self.hierarchy.num_classes

    @property
    def num_levels(self):
        return self.hierarchy.num_levels

    @property
    def num_attributes(self):
        return self.attributes.num_attributes if self.attributes is not None else 0

    def subset(self, split):
        if split not in SPLITS:
            raise InputError(f"unknown split '{split}'")
        mask = self.splits == split
        return self.take(np.flatnonzero(mask))

    def take(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.ids[indices],
            self.splits[indices],
            self.features[indices],
            self.fine[indices],
            self.hierarchy,
            self.attributes,
            self.meta,
        )

    def counts(self):
        return {
            "total": len(self),
            "train": int(np.sum(self.splits == "train")),
            "test": int(np.sum(self.splits == "test")),
            "per_class": np.bincount(self.fine, minlength=self.num_classes).tolist(),
        }

    def class_indices(self):
        """Row indices of each fine class, in row order."""
        order = np.argsort(self.fine, kind="stable")
        bounds = np.searchsorted(self.fine[order], np.arange(self.num_classes + 1))
        return [order[bounds[c]:bounds[c + 1]] for c in range(self.num_classes)]


def _format_float(value):
    return format(float(value), ".17g")


def record_line(sample):
    """One JSON-lines record with a fixed field order."""
    x = "[" + ",".join(_format_float(v) for v in sample.x) + "]"
    return (
        f'{{"id": {sample.id}, "split": {json.dumps(sample.split)}, "x": {x}, '
        f'"fine": {sample.fine}, "path": {json.dumps(list(sample.path))}, '
        f'"attrs": {json.dumps(list(sample.attrs))}}}'
    )


def write_manifest(dataset, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    counts = dataset.counts()
    meta = {
        "format_version": FORMAT_VERSION,
        "F": dataset.input_dim,
        "C": dataset.num_classes,
        "x": dataset.num_levels,
        "num_attributes": dataset.num_attributes,
        "counts": counts,
    }
    with open(directory / META_NAME, "w") as f:
        f.write(json.dumps(meta, indent=2) + "\n")
    with open(directory / RECORDS_NAME, "w") as f:
        for i in range(len(dataset)):
            f.write(record_line(dataset[i]) + "\n")
    logger.info("wrote %d records to %s", len(dataset), directory)
    return directory / META_NAME, directory / RECORDS_NAME


def _read_meta(meta_path):
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as e:
        raise ValidationError(f"{meta_path}:{e.lineno}:{e.colno}: {e.msg}")
    if not isinstance(meta, dict) or meta.get("format_version") != FORMAT_VERSION:
        version = meta.get("format_version") if isinstance(meta, dict) else None
        raise ValidationError(f"{meta_path}: unsupported manifest format_version {version!r}")
    try:
        return meta, int(meta["C"]), int(meta["x"]), int(meta["F"]), int(meta["counts"]["total"])
    except KeyError as e:
        raise ValidationError(f"{meta_path}: missing field {e}")
    except (TypeError, ValueError) as e:
        raise ValidationError(f"{meta_path}: malformed field ({e})")


def _parse_record(rec):
    """(id, split, x, fine, path, attrs) from one decoded record line."""
    return (
        int(rec["id"]),
        rec["split"],
        rec["x"],
        int(rec["fine"]),
        tuple(int(v) for v in rec["path"]),
        frozenset(int(a) for a in rec["attrs"]),
    )


def load_manifest(directory):
    directory = Path(directory)
    meta_path, records_path = directory / META_NAME, directory / RECORDS_NAME
    if not meta_path.is_file() or not records_path.is_file():
        raise InputError(f"no dataset manifest found at '{directory}'")
    meta, num_classes, num_levels, input_dim, total = _read_meta(meta_path)
    ids, splits, features, fine = [], [], [], []
    paths = [None] * num_classes
    attr_sets = [None] * num_classes
    with open(records_path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            where = f"{records_path}:{lineno}"
            try:
                rec_id, split, x, c, path, attrs = _parse_record(json.loads(line))
            except json.JSONDecodeError as e:
                raise ValidationError(f"{where}:{e.colno}: {e.msg}")
            except KeyError as e:
                raise ValidationError(f"{where}: record is missing field {e}")
            except (TypeError, ValueError) as e:
                raise ValidationError(f"{where}: malformed record ({e})")
            if not 0 <= c < num_classes:
                raise ValidationError(f"{where}: record {rec_id}: fine label {c} out of range")
            if len(path) != num_levels:
                raise ValidationError(f"{where}: record {rec_id}: path has {len(path)} levels, expected {num_levels}")
            if paths[c] is None:
                paths[c], attr_sets[c] = path, attrs
            elif paths[c] != path or attr_sets[c] != attrs:
                raise ValidationError(f"{where}: record {rec_id}: class {c} has inconsistent path or attributes")
            ids.append(rec_id)
            splits.append(split)
            features.append(x)
            fine.append(c)
    missing = [c for c, p in enumerate(paths) if p is None]
    if missing:
        raise ValidationError(f"classes without records: {missing}")
    hierarchy = Hierarchy(np.array(paths, dtype=np.int64))
    attributes = None
    if int(meta.get("num_attributes", 0)) > 0:
        attributes = AttributeTable(int(meta["num_attributes"]), tuple(attr_sets))
    try:
        features = np.array(features, dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise ValidationError(f"{records_path}: features are not a numeric matrix ({e})")
    if features.ndim != 2 or features.shape[1] != input_dim:
        raise ValidationError(f"features do not match F={input_dim}")
    dataset = Dataset(ids, splits, features, fine, hierarchy, attributes, meta)
    if dataset.counts()["total"] != total:
        raise ValidationError("record count disagrees with meta counts")
    logger.info("loaded %d records from %s", len(dataset), directory)
    return dataset
