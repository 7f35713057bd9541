"""Shared-trunk MLP with a logits head f_s and a unit-norm embedding head f_t.

Forward and backward passes are written out by hand in float64. Weights use
the ``(out_features, in_features)`` layout, so a layer computes ``h @ W.T + b``.
"""
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np

from lsembed.utils.errors import DegenerateEmbeddingError, InputError, ValidationError

UNIT_TOLERANCE = 1e-6


@dataclass(frozen=True)
class NetConfig:
    input_dim: int
    embed_dim: int
    num_classes: int
    hidden_dims: tuple = ()
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, self.embed_dim, self.num_classes) + self.hidden_dims
        if any(int(d) != d or d <= 0 for d in dims):
            raise ValidationError(f"network dimensions must be positive integers, got {dims}")
        if self.activation != "relu":
            raise ValidationError(f"unsupported activation '{self.activation}'")

    @property
    def trunk_dim(self):
        return self.hidden_dims[-1] if self.hidden_dims else self.input_dim

    def layer_shapes(self):
        """Ordered ``name -> shape`` for every parameter tensor."""
        shapes = OrderedDict()
        fan_in = self.input_dim
        for i, width in enumerate(self.hidden_dims):
            shapes[f"trunk.{i}.weight"] = (width, fan_in)
            shapes[f"trunk.{i}.bias"] = (width,)
            fan_in = width
        shapes["logits.weight"] = (self.num_classes, fan_in)
        shapes["logits.bias"] = (self.num_classes,)
        shapes["embed.weight"] = (self.embed_dim, fan_in)
        shapes["embed.bias"] = (self.embed_dim,)
        return shapes

    def to_dict(self):
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d


class ParameterSet:
    """Ordered named float64 tensors shaped by a NetConfig."""

    def __init__(self, config, tensors=None):
        self.config = config
        shapes = config.layer_shapes()
        if tensors is None:
            tensors = {name: np.zeros(shape) for name, shape in shapes.items()}
        self.tensors = OrderedDict()
        for name, shape in shapes.items():
            if name not in tensors:
                raise InputError(f"missing parameter tensor '{name}'")
            value = np.array(tensors[name], dtype=np.float64)
            if value.shape != tuple(shape):
                raise InputError(
                    f"parameter '{name}' has shape {value.shape}, expected {tuple(shape)}"
                )
            self.tensors[name] = value
        extra = set(tensors) - set(shapes)
        if extra:
            raise InputError(f"unexpected parameter tensors {sorted(extra)}")

    def __getitem__(self, name):
        return self.tensors[name]

    def __setitem__(self, name, value):
        self.tensors[name][...] = value

    def __iter__(self):
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def names(self):
        return list(self.tensors)

    @property
    def num_hidden(self):
        return len(self.config.hidden_dims)

    def copy(self):
        return type(self)(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def zeros_like(self, cls=None):
        return (cls or type(self))(self.config)

    def flat(self):
        return np.concatenate([v.ravel() for v in self.tensors.values()])

    def load_flat(self, vector):
        vector = np.asarray(vector, dtype=np.float64)
        offset = 0
        for value in self.tensors.values():
            size = value.size
            value[...] = vector[offset:offset + size].reshape(value.shape)
            offset += size
        if offset != vector.size:
            raise InputError(f"flat vector has {vector.size} entries, expected {offset}")

    def is_finite(self):
        return all(np.isfinite(v).all() for v in self.tensors.values())

    def allclose(self, other, **kwargs):
        return all(np.allclose(self[k], other[k], **kwargs) for k in self.tensors)

    def array_equal(self, other):
        return all(np.array_equal(self[k], other[k]) for k in self.tensors)


class Parameters(ParameterSet):
    pass


class GradientBuffer(ParameterSet):
    def zero_(self):
        for value in self.tensors.values():
            value.fill(0.0)
        return self

    def add_(self, other, scale=1.0):
        for name, value in self.tensors.items():
            value += scale * other[name]
        return self


def init_parameters(config, seed=0):
    """Xavier-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = Parameters(config)
    for name, shape in config.layer_shapes().items():
        if name.endswith(".weight"):
            fan_out, fan_in = shape
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-bound, bound, size=shape)
    return params


@dataclass
class ForwardTrace:
    inputs: np.ndarray
    pre_activations: list = field(default_factory=list)
    activations: list = field(default_factory=list)
    trunk: np.ndarray = None
    z: np.ndarray = None
    norms: np.ndarray = None
    embedding: np.ndarray = None
    logits: np.ndarray = None
    single: bool = False


def _as_batch(params, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.ndim != 2 or batch.shape[1] != params.config.input_dim:
        raise InputError(
            f"input has shape {x.shape}, expected ({params.config.input_dim},) "
            f"or (n, {params.config.input_dim})"
        )
    if not np.isfinite(batch).all():
        raise InputError("input contains non-finite values")
    return batch, single


def forward(params, x):
    """Run x (a vector or a batch of rows) through the trunk and both heads."""
    h, single = _as_batch(params, x)
    trace = ForwardTrace(inputs=h, single=single)
    for i in range(params.num_hidden):
        trace.activations.append(h)
        pre = h @ params[f"trunk.{i}.weight"].T + params[f"trunk.{i}.bias"]
        trace.pre_activations.append(pre)
        h = np.maximum(pre, 0.0)
    trace.trunk = h
    trace.logits = h @ params["logits.weight"].T + params["logits.bias"]
    z = h @ params["embed.weight"].T + params["embed.bias"]
    norms = np.sqrt(np.sum(z * z, axis=1))
    if (norms == 0.0).any():
        rows = np.flatnonzero(norms == 0.0).tolist()
        raise DegenerateEmbeddingError(f"zero pre-normalization embedding for rows {rows}")
    trace.z = z
    trace.norms = norms
    trace.embedding = z / norms[:, None]
    if single:
        trace.embedding = trace.embedding[0]
        trace.logits = trace.logits[0]
    return trace


def _upstream(grad, expected, name):
    if grad is None:
        return None
    grad = np.asarray(grad, dtype=np.float64)
    if grad.ndim == 1:
        grad = grad[None, :]
    if grad.shape != expected:
        raise InputError(f"{name} has shape {grad.shape}, expected {expected}")
    return grad


def backward(params, trace, d_logits, d_embedding, grads):
    """Accumulate d(d_logits . logits + d_embedding . y)/d(params) into grads.

    Either upstream may be None, in which case that head contributes nothing.
    """
    n = trace.inputs.shape[0]
    d_logits = _upstream(d_logits, (n, params.config.num_classes), "d_logits")
    d_embedding = _upstream(d_embedding, (n, params.config.embed_dim), "d_embedding")
    if grads.config != params.config:
        raise InputError("gradient buffer does not match the network config")
    h = trace.trunk
    d_h = np.zeros_like(h)
    if d_logits is not None:
        grads["logits.weight"] += d_logits.T @ h
        grads["logits.bias"] += d_logits.sum(axis=0)
        d_h += d_logits @ params["logits.weight"]
    if d_embedding is not None:
        y = trace.embedding if trace.embedding.ndim == 2 else trace.embedding[None, :]
        # unit-normalization Jacobian (I - y y^T) / ||z||
        radial = np.sum(y * d_embedding, axis=1, keepdims=True)
        d_z = (d_embedding - y * radial) / trace.norms[:, None]
        grads["embed.weight"] += d_z.T @ h
        grads["embed.bias"] += d_z.sum(axis=0)
        d_h += d_z @ params["embed.weight"]
    for i in reversed(range(params.num_hidden)):
        d_pre = d_h * (trace.pre_activations[i] > 0.0)
        grads[f"trunk.{i}.weight"] += d_pre.T @ trace.activations[i]
        grads[f"trunk.{i}.bias"] += d_pre.sum(axis=0)
        if i > 0:
            d_h = d_pre @ params[f"trunk.{i}.weight"]


def squared_distance(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise InputError(f"distance operands must be equal-length vectors, got {a.shape} and {b.shape}")
    for name, v in (("a", a), ("b", b)):
        norm = np.sqrt(np.dot(v, v))
        if abs(norm - 1.0) > UNIT_TOLERANCE:
            raise ValidationError(f"operand {name} is not unit-norm (||{name}|| = {norm:.9f})")
    diff = a - b
    return float(np.dot(diff, diff))


def embed(params, features, batch_size=1024):
    """Unit embeddings for a feature matrix, computed in chunks."""
    features = np.asarray(features, dtype=np.float64)
    rows = [
        forward(params, features[start:start + batch_size]).embedding
        for start in range(0, features.shape[0], batch_size)
    ]
    return np.concatenate(rows, axis=0) if rows else np.zeros((0, params.config.embed_dim))


def predict_logits(params, features, batch_size=1024):
    features = np.asarray(features, dtype=np.float64)
    rows = [
        forward(params, features[start:start + batch_size]).logits
        for start in range(0, features.shape[0], batch_size)
    ]
    return np.concatenate(rows, axis=0) if rows else np.zeros((0, params.config.num_classes))
