import numpy as np
import pytest

from lsembed.modeling.mlp import (
    GradientBuffer,
    NetConfig,
    Parameters,
    backward,
    embed,
    forward,
    init_parameters,
    squared_distance,
)
from lsembed.utils.errors import DegenerateEmbeddingError, InputError, ValidationError
from lsembed.utils.gradcheck import central_difference, relative_error


def _objective(params, x, g_logits, g_embed):
    trace = forward(params, x)
    return float(np.sum(g_logits * trace.logits) + np.sum(g_embed * trace.embedding))


class TestInit:
    def test_xavier_bounds_and_zero_biases(self, net_config):
        params = init_parameters(net_config, seed=0)
        for name, value in params.items():
            if name.endswith(".bias"):
                assert not value.any()
            else:
                fan_out, fan_in = value.shape
                assert np.abs(value).max() <= np.sqrt(6.0 / (fan_in + fan_out))

    def test_seeded(self, net_config):
        assert init_parameters(net_config, 3).array_equal(init_parameters(net_config, 3))
        assert not init_parameters(net_config, 3).array_equal(init_parameters(net_config, 4))

    def test_invalid_config(self):
        with pytest.raises(ValidationError):
            NetConfig(input_dim=0, embed_dim=4, num_classes=2)
        with pytest.raises(ValidationError):
            NetConfig(input_dim=3, embed_dim=4, num_classes=2, activation="tanh")


class TestForward:
    def test_single_vector(self, params, rng):
        trace = forward(params, rng.standard_normal(10))
        assert trace.embedding.shape == (8,)
        assert trace.logits.shape == (5,)
        assert np.linalg.norm(trace.embedding) == pytest.approx(1.0, abs=1e-12)

    def test_batch_rows_match_single_calls(self, params, rng):
        x = rng.standard_normal((6, 10))
        batch = forward(params, x)
        for i in range(6):
            single = forward(params, x[i])
            np.testing.assert_allclose(batch.embedding[i], single.embedding, rtol=0, atol=1e-13)
            np.testing.assert_allclose(batch.logits[i], single.logits, rtol=0, atol=1e-13)

    def test_duplicate_inputs(self, params, rng):
        x = rng.standard_normal(10)
        rows = embed(params, np.stack([x, x]))
        np.testing.assert_allclose(rows[0], rows[1], rtol=0, atol=1e-15)

    def test_rejects_bad_input(self, params):
        with pytest.raises(InputError):
            forward(params, np.zeros(9))
        x = np.zeros(10)
        x[3] = np.nan
        with pytest.raises(InputError):
            forward(params, x)

    def test_zero_embedding_is_degenerate(self, params, rng):
        params["embed.weight"] = 0.0
        params["embed.bias"] = 0.0
        with pytest.raises(DegenerateEmbeddingError):
            forward(params, rng.standard_normal(10))

    def test_identity_head(self):
        params = Parameters(NetConfig(input_dim=4, embed_dim=2, num_classes=2))
        params["embed.weight"] = np.eye(2, 4)
        e_1 = np.array([1.0, 0.0, 0.0, 0.0])
        np.testing.assert_allclose(forward(params, e_1).embedding, [1.0, 0.0], rtol=0, atol=1e-15)
        np.testing.assert_allclose(forward(params, 2.0 * e_1).embedding, [1.0, 0.0], rtol=0, atol=1e-15)

    def test_no_hidden_layers(self, rng):
        config = NetConfig(input_dim=4, embed_dim=3, num_classes=2)
        params = init_parameters(config, 0)
        assert forward(params, rng.standard_normal(4)).embedding.shape == (3,)


class TestSquaredDistance:
    def test_range(self, unit_vectors):
        a, b = unit_vectors(2, 5)
        assert squared_distance(a, a) == 0.0
        assert squared_distance(a, -a) == pytest.approx(4.0)
        assert 0.0 <= squared_distance(a, b) <= 4.0

    def test_inner_product_form(self, unit_vectors):
        for a, b in zip(unit_vectors(20, 6), unit_vectors(20, 6)):
            assert squared_distance(a, b) == pytest.approx(2.0 - 2.0 * np.dot(a, b), abs=1e-9)

    def test_orthogonal(self):
        assert squared_distance(np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0])) == 2.0

    def test_non_unit(self):
        with pytest.raises(ValidationError):
            squared_distance(np.array([1.0, 1.0]), np.array([1.0, 0.0]))


class TestBackward:
    def test_matches_finite_differences(self, params, rng):
        x = rng.standard_normal((3, 10))
        g_logits = rng.standard_normal((3, 5))
        g_embed = rng.standard_normal((3, 8))
        grads = GradientBuffer(params.config)
        backward(params, forward(params, x), g_logits, g_embed, grads)

        theta = params.flat()

        def value(flat):
            params.load_flat(flat)
            return _objective(params, x, g_logits, g_embed)

        numeric = central_difference(value, theta, eps=1e-6)
        params.load_flat(theta)
        assert relative_error(grads.flat(), numeric) < 1e-6

    def test_radial_upstream_vanishes(self, params, rng):
        trace = forward(params, rng.standard_normal((4, 10)))
        grads = GradientBuffer(params.config)
        backward(params, trace, None, trace.embedding, grads)
        assert np.abs(grads.flat()).max() < 1e-9

    def test_single_linear_layer(self, rng):
        config = NetConfig(input_dim=4, embed_dim=2, num_classes=3)
        params = init_parameters(config, 0)
        x = rng.standard_normal(4)
        grads = GradientBuffer(config)
        backward(params, forward(params, x), np.array([0.0, 1.0, 0.0]), None, grads)
        np.testing.assert_array_equal(grads["logits.weight"][1], x)
        assert not grads["logits.weight"][[0, 2]].any()
        np.testing.assert_array_equal(grads["logits.bias"], [0.0, 1.0, 0.0])

    def test_missing_upstream_leaves_head_untouched(self, params, rng):
        x = rng.standard_normal((2, 10))
        grads = GradientBuffer(params.config)
        backward(params, forward(params, x), rng.standard_normal((2, 5)), None, grads)
        assert not grads["embed.weight"].any()
        assert grads["logits.weight"].any()

    def test_accumulates(self, params, rng):
        x = rng.standard_normal((2, 10))
        g = rng.standard_normal((2, 8))
        trace = forward(params, x)
        once = GradientBuffer(params.config)
        backward(params, trace, None, g, once)
        twice = GradientBuffer(params.config)
        backward(params, trace, None, g, twice)
        backward(params, trace, None, g, twice)
        assert twice.allclose(once.copy().add_(once), rtol=0, atol=1e-14)

    def test_shape_mismatch(self, params, rng):
        trace = forward(params, rng.standard_normal((2, 10)))
        with pytest.raises(InputError):
            backward(params, trace, np.zeros((3, 5)), None, GradientBuffer(params.config))

    def test_matches_torch_autograd(self, params, rng):
        torch = pytest.importorskip("torch")
        x = rng.standard_normal((4, 10))
        g_logits = rng.standard_normal((4, 5))
        g_embed = rng.standard_normal((4, 8))
        grads = GradientBuffer(params.config)
        backward(params, forward(params, x), g_logits, g_embed, grads)

        tensors = {
            name: torch.tensor(value, dtype=torch.float64, requires_grad=True)
            for name, value in params.items()
        }
        h = torch.tensor(x, dtype=torch.float64)
        for i in range(params.num_hidden):
            h = torch.relu(h @ tensors[f"trunk.{i}.weight"].T + tensors[f"trunk.{i}.bias"])
        logits = h @ tensors["logits.weight"].T + tensors["logits.bias"]
        z = h @ tensors["embed.weight"].T + tensors["embed.bias"]
        y = z / z.norm(dim=1, keepdim=True)
        objective = (torch.tensor(g_logits) * logits).sum() + (torch.tensor(g_embed) * y).sum()
        objective.backward()
        for name, tensor in tensors.items():
            np.testing.assert_allclose(grads[name], tensor.grad.numpy(), rtol=1e-10, atol=1e-12)
