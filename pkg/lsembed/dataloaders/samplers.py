"""Epoch plans and tuplet sampling over a labelled training split."""
import logging
from dataclasses import dataclass

import numpy as np

from lsembed.exp_data import BASE_MARGIN, CANDIDATE_POOL, SAMPLER_MODES, STRUCTURES
from lsembed.labelspace import Hierarchy, MarginSchedule, jaccard_margin, triplet_margins
from lsembed.utils.errors import InputError, ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SamplerConfig:
    mode: str = "uniform"
    candidate_pool: int = CANDIDATE_POOL
    seed: int = 0
    structure: str = "hierarchy"

    def __post_init__(self):
        if self.mode not in SAMPLER_MODES:
            raise ValidationError(f"sampler mode must be one of {SAMPLER_MODES}, got '{self.mode}'")
        if self.structure not in STRUCTURES:
            raise ValidationError(f"structure must be one of {STRUCTURES}, got '{self.structure}'")
        if self.candidate_pool < 1:
            raise ValidationError("candidate_pool must be at least 1")


@dataclass(frozen=True)
class TupletIndices:
    """Row indices of a reference and its companions, innermost first.

    ``levels[j]`` is the shared depth between the reference and companion j;
    ``margins[j]`` belongs to the generalized triplet (companion j, companion j+1).
    """

    reference: int
    companions: tuple
    margins: tuple
    levels: tuple
    skipped: tuple = ()
    class_p: int = None
    class_n: int = None

    def members(self):
        return (self.reference,) + self.companions

    def to_dict(self):
        return {
            "reference": self.reference,
            "companions": list(self.companions),
            "margins": list(self.margins),
            "levels": list(self.levels),
            "skipped": list(self.skipped),
            "class_p": self.class_p,
            "class_n": self.class_n,
        }


def epoch_rng(seed, epoch):
    return np.random.default_rng([int(seed), int(epoch)])


def epoch_plan(dataset, config, epoch=0):
    """Every training row once, in a seed-determined order."""
    return epoch_rng(config.seed, epoch).permutation(len(dataset))


def _pairwise_sq(embeddings, ref, candidates):
    diff = embeddings[candidates] - embeddings[ref]
    return np.sum(diff * diff, axis=1)


def mine_negative(embeddings, ref, band, d_rp, margin, config, rng):
    """Pick a companion from ``band`` for reference row ``ref``.

    uniform: a uniform draw. semi-hard: among up to K sampled candidates the
    closest one still farther than the positive; if every candidate is at
    least as close as the positive, the farthest of them.
    """
    band = np.asarray(band, dtype=np.int64)
    if band.size == 0:
        raise InputError("cannot mine a negative from an empty band")
    if band.size == 1:
        return int(band[0])
    if config.mode == "uniform":
        return int(band[rng.integers(band.size)])
    if band.size > config.candidate_pool:
        candidates = np.sort(rng.choice(band, config.candidate_pool, replace=False))
    else:
        candidates = np.sort(band)
    d = _pairwise_sq(embeddings, ref, candidates)
    farther = d > d_rp
    if farther.any():
        pick = np.flatnonzero(farther)[np.argmin(d[farther])]
    else:
        pick = int(np.argmax(d))
    if logger.isEnabledFor(logging.DEBUG):
        logger.debug(
            "mined %d for ref %d: d=%.4f d_rp=%.4f active=%s",
            candidates[pick], ref, d[pick], d_rp, d[pick] < d_rp + margin,
        )
    return int(candidates[pick])


class TupletSampler:
    """Draws tuplets whose companion j shares exactly x - j levels with the reference.

    Structure ``flat`` uses fine labels only, ``hierarchy`` the dataset's
    hierarchy and ``attributes`` plain triplets with Jaccard-adaptive margins.
    """

    def __init__(self, dataset, config, schedule=None, base_margin=BASE_MARGIN):
        self.dataset = dataset
        self.config = config
        self.base_margin = base_margin
        if config.structure == "hierarchy":
            self.hierarchy = dataset.hierarchy
        else:
            self.hierarchy = Hierarchy.flat(dataset.num_classes)
        if config.structure == "attributes" and dataset.attributes is None:
            raise ValidationError("structure 'attributes' needs a dataset with an attribute table")
        x = self.hierarchy.num_levels
        self.schedule = schedule or MarginSchedule.linear(x, base_margin)
        if self.schedule.num_levels != x:
            raise ValidationError(
                f"margin schedule has {self.schedule.num_levels} levels, structure has {x}"
            )
        self.triplet_margins = triplet_margins(self.schedule)
        self.embeddings = None
        self._build_bands()

    def _build_bands(self):
        fine = self.dataset.fine
        depth = self.hierarchy.depth_matrix()
        x = self.hierarchy.num_levels
        self.class_rows = self.dataset.class_indices()
        # bands[c][j]: rows sharing exactly x - j levels with class c
        self.bands = []
        for c in range(self.dataset.num_classes):
            row_depth = depth[c][fine]
            self.bands.append([np.flatnonzero(row_depth == x - j) for j in range(x + 1)])

    def refresh(self, embeddings):
        """Embeddings used by semi-hard mining until the next refresh."""
        self.embeddings = np.asarray(embeddings, dtype=np.float64)

    def sample_tuplet(self, ref, rng):
        ref = int(ref)
        if not 0 <= ref < len(self.dataset):
            raise InputError(f"reference row {ref} out of range")
        c = int(self.dataset.fine[ref])
        same = self.bands[c][0]
        same = same[same != ref]
        if same.size == 0:
            return None
        positive = int(same[rng.integers(same.size)])
        if self.config.structure == "attributes":
            return self._attribute_triplet(ref, c, positive, rng)

        x = self.hierarchy.num_levels
        companions, margins, levels, skipped = [positive], [], [x], []
        pending = 0.0
        for j in range(1, x + 1):
            pending += self.triplet_margins[j - 1]
            band = self.bands[c][j]
            if band.size == 0:
                skipped.append(j)
                continue
            companions.append(self._draw(ref, companions[-1], band, pending, rng))
            margins.append(pending)
            levels.append(x - j)
            pending = 0.0
        if not margins:
            return None
        if pending:
            # trailing empty bands fold into the last triplet; sum(margins) stays m_1
            margins[-1] += pending
        if skipped:
            logger.debug("ref %d: skipped empty bands %s, margins merged", ref, skipped)
        return TupletIndices(ref, tuple(companions), tuple(margins), tuple(levels), tuple(skipped))

    def _attribute_triplet(self, ref, c, positive, rng):
        band = self.bands[c][1]
        if band.size == 0:
            return None
        # the margin depends on the pick, so mining uses the base margin
        negative = self._draw(ref, positive, band, self.base_margin, rng)
        class_n = int(self.dataset.fine[negative])
        margin = jaccard_margin(self.dataset.attributes, c, class_n, self.base_margin)
        return TupletIndices(ref, (positive, negative), (margin,), (1, 0), (), c, class_n)

    def _draw(self, ref, inner, band, margin, rng):
        if self.config.mode == "semi-hard" and self.embeddings is not None:
            diff = self.embeddings[inner] - self.embeddings[ref]
            d_rp = float(np.dot(diff, diff))
            return mine_negative(self.embeddings, ref, band, d_rp, margin, self.config, rng)
        return int(band[rng.integers(band.size)])

    def epoch(self, epoch):
        """Yield (reference, tuplet or None) pairs for one epoch."""
        rng = epoch_rng(self.config.seed, epoch)
        plan = rng.permutation(len(self.dataset))
        for ref in plan:
            yield int(ref), self.sample_tuplet(ref, rng)
