"""Small feed-forward classifier: linear -> batch-norm -> Mish hidden layers, sigmoid output.

Everything is float64 numpy. Parameters are kept as plain arrays and exposed
as a flat list in a fixed order (per linear layer: weight, bias; then per
batch-norm: gamma, beta), which is also the order of the gradients returned by
:func:`mlp_backward`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from thzq.errors import (
    BatchTooSmallError,
    InvalidDimsError,
    ShapeMismatchError,
    StaleCacheError,
)

SCORE_CLAMP = 1e-7


@dataclass
class TrainConfig:
    epochs: int = 1000
    base_lr: float = 5.0
    decay_factor: float = 0.5
    decay_every: int = 10
    batch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.decay_every < 1 or self.batch_size < 1:
            raise ValueError("epochs, decay_every and batch_size must be positive")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must lie in (0, 1]")


def lr_at(config: TrainConfig, epoch: int) -> float:
    """Step-decayed learning rate ``base_lr * decay_factor ** (epoch // decay_every)``."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return config.base_lr * config.decay_factor ** (epoch // config.decay_every)


def sgd_step(params, grads, lr: float):
    """Plain SGD, ``p - lr * g`` for each pair; returns new values and leaves inputs alone."""
    if lr <= 0:
        raise ValueError("lr must be positive")
    if isinstance(params, (list, tuple)):
        if len(params) != len(grads):
            raise ShapeMismatchError(f"{len(params)} parameters but {len(grads)} gradients")
        return [sgd_step(p, g, lr) for p, g in zip(params, grads)]
    p = np.asarray(params, dtype=np.float64)
    g = np.asarray(grads, dtype=np.float64)
    if p.shape != g.shape:
        raise ShapeMismatchError(f"parameter shape {p.shape} vs gradient shape {g.shape}")
    out = p - lr * g
    return float(out) if out.ndim == 0 else out


def softplus(x):
    return np.logaddexp(0.0, x)


def mish(x):
    return x * np.tanh(softplus(x))


def mish_grad(x):
    sp = softplus(x)
    t = np.tanh(sp)
    # d softplus / dx = sigmoid(x); overflow-safe via tanh
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))
    return t + x * (1.0 - t * t) * sig


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def halving_dims(input_dim: int, output_dim: int, n_linear: int) -> list[int]:
    dims = [input_dim]
    for _ in range(n_linear - 1):
        dims.append(dims[-1] // 2)
    dims.append(output_dim)
    return dims


@dataclass
class BatchNorm:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-8

    @classmethod
    def fresh(cls, width: int) -> "BatchNorm":
        return cls(np.ones(width), np.zeros(width), np.zeros(width), np.ones(width))


@dataclass
class Mlp:
    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    norms: list[BatchNorm]
    mode: str = "train"
    version: int = field(default=0, compare=False)

    @property
    def n_linear(self) -> int:
        return len(self.weights)

    def parameters(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        for bn in self.norms:
            out += [bn.gamma, bn.beta]
        return out

    def set_parameters(self, params) -> None:
        params = list(params)
        expected = self.parameters()
        if len(params) != len(expected):
            raise ShapeMismatchError(f"expected {len(expected)} arrays, got {len(params)}")
        for new, old in zip(params, expected):
            if np.shape(new) != old.shape:
                raise ShapeMismatchError(f"shape {np.shape(new)} vs {old.shape}")
        it = iter(np.asarray(p, dtype=np.float64).copy() for p in params)
        for i in range(self.n_linear):
            self.weights[i] = next(it)
            self.biases[i] = next(it)
        for bn in self.norms:
            bn.gamma = next(it)
            bn.beta = next(it)
        self.version += 1

    def param_count(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def train(self) -> "Mlp":
        self.mode = "train"
        return self

    def eval(self) -> "Mlp":
        self.mode = "eval"
        return self

    def copy(self) -> "Mlp":
        return Mlp(
            list(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            [
                BatchNorm(bn.gamma.copy(), bn.beta.copy(), bn.running_mean.copy(),
                          bn.running_var.copy(), bn.momentum, bn.eps)
                for bn in self.norms
            ],
            self.mode,
            self.version,
        )


def mlp_init(input_dim: int, output_dim: int, n_linear: int, seed: int) -> Mlp:
    """Build an MLP whose hidden widths halve (floor) from ``input_dim``.

    Weights are uniform in ``+-1/sqrt(fan_in)``, biases zero, batch-norm at identity.
    ``n_linear=1`` is plain logistic regression.
    """
    if n_linear < 1 or output_dim < 1 or input_dim < output_dim:
        raise InvalidDimsError(
            f"need input_dim >= output_dim >= 1 and n_linear >= 1, got "
            f"({input_dim}, {output_dim}, {n_linear})"
        )
    dims = halving_dims(input_dim, output_dim, n_linear)
    if min(dims) < 1:
        raise InvalidDimsError(f"halving chain {dims} reaches zero width")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    norms = [BatchNorm.fresh(width) for width in dims[1:-1]]
    return Mlp(dims, weights, biases, norms)


@dataclass
class ForwardCache:
    version: int
    mode: str
    inputs: list[np.ndarray]  # input to each linear layer
    pre: list[np.ndarray]  # linear outputs of hidden layers
    xhat: list[np.ndarray]  # normalized pre-activations
    inv_std: list[np.ndarray]
    bn_out: list[np.ndarray]  # inputs to Mish
    scores: np.ndarray


def mlp_forward(model: Mlp, batch) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.layer_dims[0] or x.shape[0] == 0:
        raise ShapeMismatchError(
            f"expected a nonempty (B, {model.layer_dims[0]}) batch, got {x.shape}"
        )
    training = model.mode == "train"
    if training and model.norms and x.shape[0] < 2:
        raise BatchTooSmallError("train-mode batch norm needs at least 2 samples")
    cache = ForwardCache(model.version, model.mode, [], [], [], [], [], None)
    h = x
    for i, bn in enumerate(model.norms):
        cache.inputs.append(h)
        z = h @ model.weights[i] + model.biases[i]
        if training:
            mean = z.mean(axis=0)
            var = z.var(axis=0)
            n = z.shape[0]
            bn.running_mean = (1 - bn.momentum) * bn.running_mean + bn.momentum * mean
            bn.running_var = (1 - bn.momentum) * bn.running_var + bn.momentum * var * n / (n - 1)
        else:
            mean, var = bn.running_mean, bn.running_var
        inv_std = 1.0 / np.sqrt(var + bn.eps)
        xhat = (z - mean) * inv_std
        a = bn.gamma * xhat + bn.beta
        cache.pre.append(z)
        cache.xhat.append(xhat)
        cache.inv_std.append(inv_std)
        cache.bn_out.append(a)
        h = mish(a)
    cache.inputs.append(h)
    scores = sigmoid(h @ model.weights[-1] + model.biases[-1])
    cache.scores = scores
    return scores, cache


def bce_loss(scores, labels) -> float:
    """Mean binary cross-entropy over batch and outputs, scores clamped to [1e-7, 1 - 1e-7]."""
    p = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise ShapeMismatchError(f"scores {p.shape} vs labels {y.shape}")
    p = np.clip(p, SCORE_CLAMP, 1.0 - SCORE_CLAMP)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


@dataclass
class Gradients:
    params: list[np.ndarray]
    inputs: np.ndarray


def mlp_backward(model: Mlp, cache: ForwardCache, labels) -> Gradients:
    """Exact gradients of :func:`bce_loss` for the batch in ``cache``.

    The sigmoid/BCE pair is differentiated jointly (``(p - y) / (B * outputs)``
    at the logits); clamping is ignored there, which matches the loss except for
    scores already within 1e-7 of 0 or 1.

    Raises:
        StaleCacheError: the model changed since the forward pass, or the
            forward pass ran in eval mode.
    """
    if cache.version != model.version:
        raise StaleCacheError("model parameters changed after this forward pass")
    if cache.mode != "train":
        raise StaleCacheError("backward needs a train-mode forward cache")
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != cache.scores.shape:
        raise ShapeMismatchError(f"labels {y.shape} vs scores {cache.scores.shape}")
    batch = y.shape[0]
    delta = (cache.scores - y) / y.size

    w_grads = [None] * model.n_linear
    b_grads = [None] * model.n_linear
    gamma_grads = [None] * len(model.norms)
    beta_grads = [None] * len(model.norms)

    w_grads[-1] = cache.inputs[-1].T @ delta
    b_grads[-1] = delta.sum(axis=0)
    upstream = delta @ model.weights[-1].T
    for i in reversed(range(len(model.norms))):
        bn = model.norms[i]
        d_a = upstream * mish_grad(cache.bn_out[i])
        xhat = cache.xhat[i]
        gamma_grads[i] = np.sum(d_a * xhat, axis=0)
        beta_grads[i] = d_a.sum(axis=0)
        d_xhat = d_a * bn.gamma
        d_z = cache.inv_std[i] * (
            d_xhat - d_xhat.mean(axis=0) - xhat * np.mean(d_xhat * xhat, axis=0)
        )
        w_grads[i] = cache.inputs[i].T @ d_z
        b_grads[i] = d_z.sum(axis=0)
        upstream = d_z @ model.weights[i].T
    assert upstream.shape[0] == batch

    grads: list[np.ndarray] = []
    for gw, gb in zip(w_grads, b_grads):
        grads += [gw, gb]
    for gg, gbeta in zip(gamma_grads, beta_grads):
        grads += [gg, gbeta]
    return Gradients(grads, upstream)
