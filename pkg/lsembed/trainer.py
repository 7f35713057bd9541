"""Joint softmax + structured-triplet training with SGD and momentum."""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from lsembed.base_trainer import BaseTrainer
from lsembed.dataloaders.samplers import SamplerConfig, TupletSampler
from lsembed.exp_data import (
    BASE_MARGIN,
    BATCH_SIZE,
    DIVERGED_NAME,
    EPOCH_LOG_NAME,
    LAMBDA_S,
    LEARNING_RATE,
    MOMENTUM,
    STRATEGIES,
    TIMINGS_NAME,
)
from lsembed.labelspace import MarginSchedule
from lsembed.modeling.mlp import GradientBuffer, backward, embed, forward, init_parameters
from lsembed.utils.errors import InputError, TrainingDivergedError, ValidationError
from lsembed.utils.loss import StructuredLosses, batch_softmax_nll, combined_loss
from lsembed.utils.optimizer import SGD
from lsembed.utils.summaries import JsonLinesLog, TensorboardSummary

logger = logging.getLogger(__name__)

LOSS_MODES = {"flat": "triplet", "hierarchy": "tuplet", "attributes": "adaptive"}


@dataclass(frozen=True)
class TrainConfig:
    lambda_s: float = LAMBDA_S
    learning_rate: float = LEARNING_RATE
    momentum: float = MOMENTUM
    epochs: int = 200
    batch_size: int = BATCH_SIZE
    # per-level margins m_1 > ... > m_x; empty means the linear schedule
    margins: tuple = ()
    base_margin: float = BASE_MARGIN
    strategy: str = "joint"
    pretrain_epochs: int = 0
    softmax_all_branches: bool = False
    workers: int = 1
    seed: int = 0
    tensorboard: bool = False

    def __post_init__(self):
        object.__setattr__(self, "margins", tuple(float(m) for m in self.margins))
        if not 0.0 <= self.lambda_s <= 1.0:
            raise ValidationError(f"lambda_s must be in [0, 1], got {self.lambda_s}")
        if self.learning_rate < 0:
            raise ValidationError("learning_rate must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValidationError("momentum must be in [0, 1)")
        if self.epochs < 0 or self.batch_size < 1 or self.workers < 1:
            raise ValidationError("epochs must be >= 0, batch_size and workers >= 1")
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"strategy must be one of {STRATEGIES}, got '{self.strategy}'")
        if not 0 <= self.pretrain_epochs <= self.epochs:
            raise ValidationError("pretrain_epochs must lie in 0..epochs")

    def schedule(self, num_levels):
        if self.margins:
            return MarginSchedule(self.margins, self.base_margin)
        return MarginSchedule.linear(num_levels, self.base_margin)

    def lambda_for_epoch(self, epoch):
        """sequential: softmax-only pretraining, then triplet-only fine-tuning."""
        if self.strategy == "sequential":
            return 1.0 if epoch < self.pretrain_epochs else 0.0
        return self.lambda_s


@dataclass
class EpochLog:
    epoch: int
    combined_loss: float
    softmax_loss: float
    triplet_loss: float
    accuracy: float
    seconds: float
    steps: int = 0
    lambda_s: float = LAMBDA_S

    def to_record(self):
        """JSON record without wall-clock time, so logs reproduce bitwise."""
        record = asdict(self)
        record.pop("seconds")
        return record


@dataclass
class StepResult:
    value: float
    e_s: float
    e_t: float
    grads: GradientBuffer
    correct: int = 0


def _accumulate(params, tuplets, dataset, lambda_s, similarity, softmax_all, denominators, grads):
    """Add one chunk's share of the batch gradient to grads; returns raw sums."""
    s_denom, t_denom = denominators
    refs = np.array([t.reference for t in tuplets], dtype=np.int64)
    counts = [len(t.companions) for t in tuplets]
    comps = np.array([c for t in tuplets for c in t.companions], dtype=np.int64)
    ref_trace = forward(params, dataset.features[refs])
    comp_trace = forward(params, dataset.features[comps])
    for trace in (ref_trace, comp_trace):
        if not (np.isfinite(trace.logits).all() and np.isfinite(trace.embedding).all()):
            raise TrainingDivergedError("non-finite network outputs", payload={})

    values, d_ref_logits = batch_softmax_nll(ref_trace.logits, dataset.fine[refs])
    e_s_sum = float(values.sum())
    d_ref_logits /= s_denom
    d_comp_logits = None
    if softmax_all:
        comp_values, d_comp_logits = batch_softmax_nll(comp_trace.logits, dataset.fine[comps])
        e_s_sum += float(comp_values.sum())
        d_comp_logits /= s_denom
    correct = int(np.sum(np.argmax(ref_trace.logits, axis=1) == dataset.fine[refs]))

    d_ref_emb = np.zeros_like(ref_trace.embedding)
    d_comp_emb = np.zeros_like(comp_trace.embedding)
    e_t_sum = 0.0
    start = 0
    for i, (tuplet, k) in enumerate(zip(tuplets, counts)):
        loss = similarity(ref_trace.embedding[i], comp_trace.embedding[start:start + k], tuplet)
        e_t_sum += loss.value
        d_ref_emb[i] += loss.grads[0] / t_denom
        d_comp_emb[start:start + k] += loss.grads[1] / t_denom
        start += k

    use_softmax = lambda_s > 0.0
    use_triplet = lambda_s < 1.0
    backward(
        params,
        ref_trace,
        lambda_s * d_ref_logits if use_softmax else None,
        (1.0 - lambda_s) * d_ref_emb if use_triplet else None,
        grads,
    )
    comp_logits = lambda_s * d_comp_logits if (use_softmax and d_comp_logits is not None) else None
    comp_emb = (1.0 - lambda_s) * d_comp_emb if use_triplet else None
    if comp_logits is not None or comp_emb is not None:
        backward(params, comp_trace, comp_logits, comp_emb, grads)
    return e_s_sum, e_t_sum, correct


def batch_objective(params, batch, dataset, lambda_s, similarity, softmax_all_branches=False, pool=None, workers=1):
    """lambda_s * E_s + (1 - lambda_s) * E_t for a batch and its parameter gradient.

    E_s averages the softmax NLL over the B references (over every branch
    evaluation with softmax_all_branches); E_t is the tuplet loss sum over 2B.
    """
    if not batch:
        raise InputError("cannot take a step on an empty batch")
    batch_size = len(batch)
    rows = batch_size
    if softmax_all_branches:
        rows += sum(len(t.companions) for t in batch)
    denominators = (float(rows), 2.0 * batch_size)
    try:
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            if pool is None or workers < 2:
                grads = GradientBuffer(params.config)
                e_s_sum, e_t_sum, correct = _accumulate(
                    params, batch, dataset, lambda_s, similarity, softmax_all_branches, denominators, grads
                )
            else:
                chunks = [c for c in np.array_split(np.arange(batch_size), workers) if c.size]
                buffers = [GradientBuffer(params.config) for _ in chunks]
                futures = [
                    pool.submit(
                        _accumulate, params, [batch[i] for i in chunk], dataset, lambda_s,
                        similarity, softmax_all_branches, denominators, buf,
                    )
                    for chunk, buf in zip(chunks, buffers)
                ]
                sums = [f.result() for f in futures]
                # fixed merge order keeps the step deterministic
                grads = buffers[0]
                for buf in buffers[1:]:
                    grads.add_(buf)
                e_s_sum = sum(s[0] for s in sums)
                e_t_sum = sum(s[1] for s in sums)
                correct = sum(s[2] for s in sums)
    except TrainingDivergedError as e:
        e.payload.setdefault("batch", [t.to_dict() for t in batch])
        raise
    e_s = e_s_sum / denominators[0]
    e_t = e_t_sum / denominators[1]
    if not (math.isfinite(e_s) and math.isfinite(e_t) and grads.is_finite()):
        raise TrainingDivergedError(
            f"non-finite loss or gradient (E_s={e_s!r}, E_t={e_t!r})",
            payload={
                "e_s": repr(e_s),
                "e_t": repr(e_t),
                "batch": [t.to_dict() for t in batch],
            },
        )
    return StepResult(combined_loss(e_s, e_t, lambda_s), e_s, e_t, grads, correct)


def train_step(params, batch, dataset, lambda_s, similarity, optimizer, softmax_all_branches=False, pool=None, workers=1):
    result = batch_objective(params, batch, dataset, lambda_s, similarity, softmax_all_branches, pool, workers)
    optimizer.step(result.grads)
    if not params.is_finite():
        raise TrainingDivergedError(
            "parameters became non-finite after the update",
            payload={"batch": [t.to_dict() for t in batch]},
        )
    return result


class Trainer(BaseTrainer):
    def __init__(self, dataset, net_config, config, sampler_config=None, saver=None, quiet=False):
        self.config = config
        self.sampler_config = sampler_config or SamplerConfig(seed=config.seed)
        self.saver = saver
        self.quiet = quiet
        self.train_set = dataset.subset("train")
        if len(self.train_set) == 0:
            raise InputError("training split is empty")
        if net_config.input_dim != dataset.input_dim or net_config.num_classes != dataset.num_classes:
            raise ValidationError(
                f"network expects F={net_config.input_dim}, C={net_config.num_classes}; "
                f"dataset has F={dataset.input_dim}, C={dataset.num_classes}"
            )
        structure = self.sampler_config.structure
        num_levels = dataset.num_levels if structure == "hierarchy" else 1
        self.schedule = config.schedule(num_levels)
        self.sampler = TupletSampler(self.train_set, self.sampler_config, self.schedule, config.base_margin)
        self.similarity = StructuredLosses(
            self.schedule, dataset.attributes, config.base_margin
        ).build_loss(LOSS_MODES[structure])

        self.params = init_parameters(net_config, config.seed)
        self.optimizer = SGD(self.params, config.learning_rate, config.momentum)
        self.pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None

        self.writer = None
        if saver is not None and config.tensorboard:
            self.summary = TensorboardSummary(saver.experiment_dir)
            self.writer = self.summary.create_summary()
        self.epoch_log = JsonLinesLog(saver.path(EPOCH_LOG_NAME)) if saver else None
        self.timings = JsonLinesLog(saver.path(TIMINGS_NAME)) if saver else None
        self._lambda = config.lambda_s

    def batches(self, epoch):
        if self.sampler_config.mode == "semi-hard":
            self.sampler.refresh(embed(self.params, self.train_set.features))
        batch = []
        for _, tuplet in self.sampler.epoch(epoch):
            if tuplet is None:
                continue
            batch.append(tuplet)
            if len(batch) == self.config.batch_size:
                yield batch
                batch = []
        if batch:
            yield batch

    def train_step(self, batch, epoch, step):
        try:
            return train_step(
                self.params, batch, self.train_set, self._lambda, self.similarity,
                self.optimizer, self.config.softmax_all_branches, self.pool, self.config.workers,
            )
        except TrainingDivergedError as e:
            e.payload.update({"epoch": epoch, "step": step})
            if self.saver is not None:
                self.saver.save_json(DIVERGED_NAME, e.payload)
            raise

    def make_epoch_log(self, epoch, totals, steps, seconds):
        seen = max(totals["seen"], 1)
        return EpochLog(
            epoch=epoch,
            combined_loss=totals["combined"] / seen,
            softmax_loss=totals["softmax"] / seen,
            triplet_loss=totals["triplet"] / seen,
            accuracy=totals["correct"] / seen,
            seconds=seconds,
            steps=steps,
            lambda_s=self._lambda,
        )

    def fit(self):
        logs = []
        try:
            for epoch in range(self.config.epochs):
                self._lambda = self.config.lambda_for_epoch(epoch)
                epoch_log = self.training(epoch)
                logs.append(epoch_log)
                if self.epoch_log is not None:
                    self.epoch_log.write(epoch_log.to_record())
                    self.timings.write({"epoch": epoch, "seconds": epoch_log.seconds})
                logger.info(
                    "[Epoch: %d] E=%.4f E_s=%.4f E_t=%.4f acc=%.3f",
                    epoch, epoch_log.combined_loss, epoch_log.softmax_loss,
                    epoch_log.triplet_loss, epoch_log.accuracy,
                )
        finally:
            if self.pool is not None:
                self.pool.shutdown()
            if self.writer is not None:
                self.writer.close()
        if self.saver is not None:
            self.saver.save_checkpoint(
                self.params, meta={"epochs": self.config.epochs, "seed": self.config.seed}
            )
        return self.params, logs


def train(dataset, net_config, config, sampler_config=None, saver=None, quiet=True):
    """Run config.epochs epochs and return (final params, epoch logs)."""
    if len(dataset) == 0:
        raise InputError("cannot train on an empty dataset")
    trainer = Trainer(dataset, net_config, config, sampler_config, saver, quiet)
    return trainer.fit()
