"""Label structures: hierarchies, attribute tables and margin schedules."""
from dataclasses import dataclass

import numpy as np

from lsembed.exp_data import BASE_MARGIN
from lsembed.utils.errors import InputError, ValidationError


def _check_class(class_id, num_classes):
    if isinstance(class_id, (bool, np.bool_)) or not isinstance(
        class_id, (int, np.integer)
    ):
        raise InputError(f"class id must be an integer, got {class_id!r}")
    if not 0 <= class_id < num_classes:
        raise InputError(f"unknown class id {class_id} (num_classes={num_classes})")
    return int(class_id)


@dataclass(frozen=True, eq=False)
class Hierarchy:
    """Per-class label paths, coarsest level first.

    ``paths[c, l]`` is the id of class c's ancestor at level l + 1; the last
    column identifies the fine class itself. Node ids are unique per level, so
    equal ids at a level imply equal ancestors above it.
    """

    paths: np.ndarray

    def __post_init__(self):
        paths = np.array(self.paths, dtype=np.int64, copy=True)
        if paths.ndim != 2 or paths.shape[0] == 0 or paths.shape[1] == 0:
            raise ValidationError(
                f"hierarchy paths must be a non-empty (C, x) matrix, got shape {paths.shape}"
            )
        if (paths < 0).any():
            raise ValidationError("hierarchy path entries must be non-negative")
        finest = paths[:, -1]
        if np.unique(finest).size != finest.size:
            raise ValidationError("two classes share the same finest-level id")
        for level in range(1, paths.shape[1]):
            _, first = np.unique(paths[:, level], return_index=True)
            for node, row in zip(np.unique(paths[:, level]), first):
                members = paths[paths[:, level] == node, :level]
                if (members != paths[row, :level]).any():
                    raise ValidationError(
                        f"tree property violated: node {node} at level {level + 1} "
                        "has more than one parent path"
                    )
        paths.setflags(write=False)
        object.__setattr__(self, "paths", paths)

    @classmethod
    def flat(cls, num_classes):
        return cls(np.arange(num_classes, dtype=np.int64)[:, None])

    @property
    def num_levels(self):
        return self.paths.shape[1]

    @property
    def num_classes(self):
        return self.paths.shape[0]

    def path(self, class_id):
        return tuple(int(v) for v in self.paths[_check_class(class_id, self.num_classes)])

    def shared_depth(self, a, b):
        a = _check_class(a, self.num_classes)
        b = _check_class(b, self.num_classes)
        agree = self.paths[a] == self.paths[b]
        if agree.all():
            return self.num_levels
        return int(np.argmin(agree))

    def depth_matrix(self):
        """(C, C) matrix of shared depths."""
        agree = self.paths[:, None, :] == self.paths[None, :, :]
        # prefix length = number of leading True values
        return np.cumprod(agree, axis=2).sum(axis=2)

    def level_labels(self, level):
        if not 1 <= level <= self.num_levels:
            raise InputError(f"level must be in 1..{self.num_levels}, got {level}")
        return self.paths[:, level - 1]

    def to_lists(self):
        return self.paths.tolist()

    def __eq__(self, other):
        return isinstance(other, Hierarchy) and np.array_equal(self.paths, other.paths)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class AttributeTable:
    num_attributes: int
    sets: tuple

    def __post_init__(self):
        if self.num_attributes <= 0:
            raise ValidationError("num_attributes must be positive")
        sets = tuple(frozenset(int(a) for a in s) for s in self.sets)
        if not sets:
            raise ValidationError("attribute table has no classes")
        for c, attrs in enumerate(sets):
            if not attrs:
                raise ValidationError(f"class {c} has an empty attribute set")
            bad = [a for a in attrs if not 0 <= a < self.num_attributes]
            if bad:
                raise ValidationError(
                    f"class {c} has attribute ids out of range 0..{self.num_attributes - 1}: {sorted(bad)}"
                )
        object.__setattr__(self, "sets", sets)

    @property
    def num_classes(self):
        return len(self.sets)

    def attributes(self, class_id):
        return self.sets[_check_class(class_id, self.num_classes)]

    def jaccard(self, a, b):
        set_a, set_b = self.attributes(a), self.attributes(b)
        return len(set_a & set_b) / len(set_a | set_b)

    def jaccard_margin(self, class_p, class_n, base_margin=BASE_MARGIN):
        if base_margin <= 0:
            raise ValidationError(f"base margin must be positive, got {base_margin}")
        return base_margin * (1.0 - self.jaccard(class_p, class_n))

    def shares_attribute(self, a, b):
        return bool(self.attributes(a) & self.attributes(b))

    def as_matrix(self):
        """Boolean (C, A) membership matrix."""
        matrix = np.zeros((self.num_classes, self.num_attributes), dtype=bool)
        for c, attrs in enumerate(self.sets):
            matrix[c, sorted(attrs)] = True
        return matrix

    def to_lists(self):
        return [sorted(s) for s in self.sets]

    def __eq__(self, other):
        return (
            isinstance(other, AttributeTable)
            and self.num_attributes == other.num_attributes
            and self.sets == other.sets
        )

    __hash__ = None


@dataclass(frozen=True)
class MarginSchedule:
    """Per-level margins m_1 > m_2 > ... > m_x > 0."""

    margins: tuple
    base_margin: float = BASE_MARGIN

    def __post_init__(self):
        margins = tuple(float(m) for m in self.margins)
        object.__setattr__(self, "margins", margins)
        if not margins:
            raise ValidationError("margin schedule needs at least one level")
        if self.base_margin <= 0:
            raise ValidationError(f"base margin must be positive, got {self.base_margin}")
        if margins[-1] <= 0:
            raise ValidationError(f"margins must be positive, got {margins}")
        if any(a <= b for a, b in zip(margins, margins[1:])):
            raise ValidationError(f"margin schedule must be strictly decreasing, got {margins}")

    @classmethod
    def linear(cls, num_levels, base_margin=BASE_MARGIN):
        """m_l = m_b * (x - l + 1) / x."""
        if num_levels <= 0:
            raise ValidationError("num_levels must be positive")
        margins = tuple(
            base_margin * (num_levels - level + 1) / num_levels
            for level in range(1, num_levels + 1)
        )
        return cls(margins, base_margin)

    @property
    def num_levels(self):
        return len(self.margins)

    def triplet_margins(self):
        return triplet_margins(self)


def shared_depth(hierarchy, a, b):
    return hierarchy.shared_depth(a, b)


def jaccard_margin(table, class_p, class_n, base_margin=BASE_MARGIN):
    return table.jaccard_margin(class_p, class_n, base_margin)


def triplet_margins(schedule):
    """(m_1 - m_2, ..., m_{x-1} - m_x, m_x); entries telescope to m_1."""
    m = schedule.margins
    if any(a <= b for a, b in zip(m, m[1:])) or m[-1] <= 0:
        raise ValidationError(f"margin schedule must be strictly decreasing, got {m}")
    return tuple(a - b for a, b in zip(m, m[1:])) + (m[-1],)
