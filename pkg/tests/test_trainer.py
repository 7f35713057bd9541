import json
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from lsembed.dataloaders.samplers import SamplerConfig, TupletSampler
from lsembed.exp_data import CHECKPOINT_NAME, DIVERGED_NAME, EPOCH_LOG_NAME
from lsembed.labelspace import MarginSchedule
from lsembed.modeling.mlp import GradientBuffer, NetConfig, backward, forward, init_parameters
from lsembed.trainer import TrainConfig, Trainer, batch_objective, train, train_step
from lsembed.utils.errors import InputError, TrainingDivergedError, ValidationError
from lsembed.utils.gradcheck import central_difference, relative_error
from lsembed.utils.loss import StructuredLosses, batch_softmax_nll
from lsembed.utils.optimizer import SGD
from lsembed.utils.saver import Saver, load_checkpoint


@pytest.fixture
def hier_net():
    return NetConfig(input_dim=8, embed_dim=4, num_classes=6, hidden_dims=(12,))


@pytest.fixture
def train_set(hier_dataset):
    return hier_dataset.subset("train")


@pytest.fixture
def batch(train_set):
    sampler = TupletSampler(train_set, SamplerConfig(seed=0))
    return [t for _, t in sampler.epoch(0)][:4]


@pytest.fixture
def similarity():
    return StructuredLosses(MarginSchedule.linear(2)).build_loss("tuplet")


class TestTrainConfig:
    def test_invalid(self):
        with pytest.raises(ValidationError):
            TrainConfig(lambda_s=1.5)
        with pytest.raises(ValidationError):
            TrainConfig(momentum=1.0)
        with pytest.raises(ValidationError):
            TrainConfig(strategy="alternating")
        with pytest.raises(ValidationError):
            TrainConfig(epochs=2, pretrain_epochs=3)

    def test_sequential_schedule(self):
        config = TrainConfig(strategy="sequential", epochs=4, pretrain_epochs=2)
        assert [config.lambda_for_epoch(e) for e in range(4)] == [1.0, 1.0, 0.0, 0.0]
        assert TrainConfig(lambda_s=0.3).lambda_for_epoch(5) == 0.3

    def test_margin_schedule(self):
        assert TrainConfig().schedule(2).margins == pytest.approx((0.2, 0.1))
        assert TrainConfig(margins=(0.5, 0.2)).schedule(2).margins == (0.5, 0.2)


class TestBatchObjective:
    def test_softmax_only_gradient(self, hier_net, train_set, batch, similarity):
        params = init_parameters(hier_net, 1)
        result = batch_objective(params, batch, train_set, 1.0, similarity)

        refs = np.array([t.reference for t in batch])
        trace = forward(params, train_set.features[refs])
        values, d_logits = batch_softmax_nll(trace.logits, train_set.fine[refs])
        expected = GradientBuffer(hier_net)
        backward(params, trace, d_logits / len(batch), None, expected)

        assert result.value == pytest.approx(values.mean())
        assert result.value == result.e_s
        assert result.grads.array_equal(expected)
        assert not result.grads["embed.weight"].any()

    def test_triplet_only_gradient(self, hier_net, train_set, batch, similarity):
        params = init_parameters(hier_net, 1)
        result = batch_objective(params, batch, train_set, 0.0, similarity)

        refs = np.array([t.reference for t in batch])
        comps = np.array([c for t in batch for c in t.companions])
        ref_trace = forward(params, train_set.features[refs])
        comp_trace = forward(params, train_set.features[comps])
        d_ref = np.zeros_like(ref_trace.embedding)
        d_comp = np.zeros_like(comp_trace.embedding)
        start = 0
        for i, tuplet in enumerate(batch):
            k = len(tuplet.companions)
            loss = similarity(ref_trace.embedding[i], comp_trace.embedding[start:start + k], tuplet)
            d_ref[i] += loss.grads[0] / (2.0 * len(batch))
            d_comp[start:start + k] += loss.grads[1] / (2.0 * len(batch))
            start += k
        expected = GradientBuffer(hier_net)
        backward(params, ref_trace, None, d_ref, expected)
        backward(params, comp_trace, None, d_comp, expected)

        assert result.value == result.e_t
        assert result.grads.array_equal(expected)
        assert not result.grads["logits.weight"].any()
        assert not result.grads["logits.bias"].any()

    def test_matches_finite_differences(self, hier_net, train_set, batch, similarity):
        params = init_parameters(hier_net, 2)
        result = batch_objective(params, batch, train_set, 0.5, similarity)
        theta = params.flat()

        def value(flat):
            params.load_flat(flat)
            return batch_objective(params, batch, train_set, 0.5, similarity).value

        numeric = central_difference(value, theta, eps=1e-6)
        params.load_flat(theta)
        assert relative_error(result.grads.flat(), numeric) < 1e-5

    def test_workers_agree(self, hier_net, train_set, batch, similarity):
        params = init_parameters(hier_net, 3)
        serial = batch_objective(params, batch, train_set, 0.8, similarity)
        with ThreadPoolExecutor(2) as pool:
            parallel = batch_objective(params, batch, train_set, 0.8, similarity, pool=pool, workers=2)
        assert parallel.value == pytest.approx(serial.value, rel=1e-12)
        assert parallel.grads.allclose(serial.grads, rtol=1e-10, atol=1e-14)
        assert parallel.correct == serial.correct

    def test_empty_batch(self, hier_net, train_set, similarity):
        with pytest.raises(InputError):
            batch_objective(init_parameters(hier_net, 0), [], train_set, 0.5, similarity)

    def test_non_finite_outputs(self, hier_net, train_set, batch, similarity):
        params = init_parameters(hier_net, 0)
        params["embed.bias"][:] = np.inf
        with pytest.raises(TrainingDivergedError) as info:
            batch_objective(params, batch, train_set, 0.5, similarity)
        assert len(info.value.payload["batch"]) == len(batch)


class TestTrainStep:
    def test_zero_learning_rate(self, hier_net, train_set, batch, similarity):
        params = init_parameters(hier_net, 4)
        before = params.copy()
        train_step(params, batch, train_set, 0.8, similarity, SGD(params, 0.0, 0.9))
        assert params.array_equal(before)

    def test_plain_gradient_descent(self, hier_net, train_set, batch, similarity):
        params = init_parameters(hier_net, 4)
        before = params.copy()
        result = train_step(params, batch, train_set, 0.8, similarity, SGD(params, 0.1, 0.0))
        for name, value in params.items():
            np.testing.assert_allclose(value, before[name] - 0.1 * result.grads[name], rtol=0, atol=1e-15)

    def test_small_step_descends(self, hier_net, train_set, batch, similarity):
        params = init_parameters(hier_net, 5)
        first = train_step(params, batch, train_set, 0.5, similarity, SGD(params, 1e-4, 0.0))
        second = batch_objective(params, batch, train_set, 0.5, similarity)
        assert second.value < first.value


class TestTrainer:
    def config(self, **kwargs):
        defaults = dict(epochs=2, batch_size=4, learning_rate=0.05, seed=0)
        defaults.update(kwargs)
        return TrainConfig(**defaults)

    def test_zero_epochs_saves_initial_parameters(self, tmp_path, hier_dataset, hier_net):
        params, logs = train(hier_dataset, hier_net, self.config(epochs=0), saver=Saver(tmp_path))
        assert logs == []
        loaded, meta = load_checkpoint(tmp_path / CHECKPOINT_NAME)
        assert loaded.array_equal(init_parameters(hier_net, 0))
        assert meta == {"epochs": 0, "seed": 0}
        assert (tmp_path / EPOCH_LOG_NAME).read_text() == ""

    def test_reproducible(self, tmp_path, hier_dataset, hier_net):
        for name in ("a", "b"):
            train(hier_dataset, hier_net, self.config(), saver=Saver(tmp_path / name))
        for name in (CHECKPOINT_NAME, EPOCH_LOG_NAME):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_epoch_log(self, tmp_path, hier_dataset, hier_net):
        _, logs = train(hier_dataset, hier_net, self.config(epochs=3), saver=Saver(tmp_path))
        assert [log.epoch for log in logs] == [0, 1, 2]
        # 18 training references in batches of 4
        assert all(log.steps == 5 for log in logs)
        records = [json.loads(line) for line in (tmp_path / EPOCH_LOG_NAME).read_text().splitlines()]
        assert records[0] == logs[0].to_record()
        assert "seconds" not in records[0]

    def test_loss_decreases(self, hier_dataset, hier_net):
        _, logs = train(hier_dataset, hier_net, self.config(epochs=15))
        assert logs[-1].combined_loss < logs[0].combined_loss

    def test_sequential_strategy_logs_lambda(self, hier_dataset, hier_net):
        config = self.config(epochs=3, strategy="sequential", pretrain_epochs=1)
        _, logs = train(hier_dataset, hier_net, config)
        assert [log.lambda_s for log in logs] == [1.0, 0.0, 0.0]

    def test_semi_hard_and_workers(self, hier_dataset, hier_net):
        params, logs = train(
            hier_dataset, hier_net, self.config(workers=2), SamplerConfig(mode="semi-hard", seed=0)
        )
        assert len(logs) == 2
        assert params.is_finite()

    def test_attribute_structure(self, attr_dataset):
        net = NetConfig(input_dim=8, embed_dim=4, num_classes=6, hidden_dims=(12,))
        _, logs = train(attr_dataset, net, self.config(), SamplerConfig(structure="attributes", seed=0))
        assert all(np.isfinite(log.combined_loss) for log in logs)

    def test_divergence_dumps_batch(self, tmp_path, hier_dataset, hier_net):
        trainer = Trainer(hier_dataset, hier_net, self.config(), saver=Saver(tmp_path), quiet=True)
        trainer.params["embed.bias"][:] = np.inf
        with pytest.raises(TrainingDivergedError):
            trainer.fit()
        payload = json.loads((tmp_path / DIVERGED_NAME).read_text())
        assert (payload["epoch"], payload["step"]) == (0, 0)
        assert len(payload["batch"]) == 4

    def test_tensorboard(self, tmp_path, hier_dataset, hier_net):
        train(hier_dataset, hier_net, self.config(epochs=1, tensorboard=True), saver=Saver(tmp_path))
        assert any((tmp_path / "tb").iterdir())

    def test_empty_training_split(self, dataset_factory, rng):
        dataset = dataset_factory([[0], [1]], [0, 0, 1, 1], rng.standard_normal((4, 3)), splits=["test"] * 4)
        net = NetConfig(input_dim=3, embed_dim=2, num_classes=2)
        with pytest.raises(InputError):
            train(dataset, net, self.config())

    def test_network_mismatch(self, hier_dataset):
        net = NetConfig(input_dim=5, embed_dim=2, num_classes=6)
        with pytest.raises(ValidationError):
            train(hier_dataset, net, self.config())
