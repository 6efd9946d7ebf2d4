"""Finite-difference oracles for the circuit, the classifier head, and the hybrid model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from thzq import vqc
from thzq.nn import Mlp, bce_loss, mlp_backward, mlp_forward, mlp_init


@dataclass
class CircuitInstance:
    layout: vqc.AnsatzLayout
    thetas: np.ndarray
    waveform: np.ndarray
    upstream: np.ndarray


def random_circuit_instance(rng: np.random.Generator, max_qubits: int = 6) -> CircuitInstance:
    n = int(rng.choice(np.arange(2, max_qubits + 1, 2)))
    layers = int(rng.integers(1, 4))
    layout = vqc.build_layout(n, layers)
    dim = 2**n
    length = int(rng.integers(1, dim + 1))
    feature_len = int(rng.integers(1, dim + 1))
    waveform = rng.normal(size=length)
    waveform[0] += 0.1  # keeps the norm away from zero
    return CircuitInstance(
        layout,
        vqc.init_thetas(layout, rng),
        waveform,
        rng.normal(size=feature_len),
    )


def relative_error(analytic, numeric, floor: float = 1e-5) -> float:
    """Largest elementwise ``|a - f| / max(|a|, |f|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    f = np.asarray(numeric, dtype=np.float64)
    return float(np.max(np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)))


def mlp_loss(model: Mlp, params, inputs, labels) -> float:
    """Train-mode loss for ``params`` without touching ``model``'s running statistics."""
    probe = model.copy().train()
    probe.set_parameters(params)
    scores, _ = mlp_forward(probe, inputs)
    return bce_loss(scores, labels)


def hybrid_loss(layout, thetas, model: Mlp, params, waveforms, labels, feature_len, scale) -> float:
    feats = vqc.vqc_features(layout, thetas, waveforms, feature_len, scale)
    return mlp_loss(model, params, feats, labels)


def hybrid_gradients(layout, thetas, model: Mlp, waveforms, labels, feature_len, scale):
    """Analytic gradients (angles, head parameters) of the train-mode hybrid loss."""
    probe = model.copy().train()
    states = vqc.final_states(layout, thetas, waveforms)
    feats = vqc.features_from_states(states, feature_len, scale)
    _, cache = mlp_forward(probe, feats)
    grads = mlp_backward(probe, cache, labels)
    theta_grad = vqc.grad_adjoint(layout, thetas, None, grads.inputs, scale, states=states)
    return theta_grad, grads.params


def end_to_end_check(
    seed: int = 0,
    batch: int = 4,
    n_head_coords: int = 300,
    h: float = 1e-5,
) -> float:
    """Max relative error of the hybrid gradient against central differences.

    Uses the default 8-qubit, 2-layer circuit and 196 -> ... -> 6 head. All 28
    angles are checked; head parameters are checked at ``n_head_coords``
    randomly chosen coordinates (there are 26,101).
    """
    rng = np.random.default_rng([seed, 77])
    layout = vqc.build_layout()
    thetas = vqc.init_thetas(layout, rng)
    model = mlp_init(vqc.DEFAULT_FEATURE_LEN, 6, 5, seed)
    # move off the zero-bias / unit-gamma initialization
    model.set_parameters([p + rng.normal(scale=0.1, size=p.shape) for p in model.parameters()])
    waveforms = rng.normal(size=(batch, 196))
    labels = rng.integers(0, 2, size=(batch, 6)).astype(np.float64)
    scale = float(layout.dim)
    feature_len = vqc.DEFAULT_FEATURE_LEN
    params = [p.copy() for p in model.parameters()]

    theta_grad, head_grads = hybrid_gradients(layout, thetas, model, waveforms, labels, feature_len, scale)

    def loss(th, ps):
        return hybrid_loss(layout, th, model, ps, waveforms, labels, feature_len, scale)

    fd_theta = np.empty_like(thetas)
    for k in range(len(thetas)):
        plus, minus = thetas.copy(), thetas.copy()
        plus[k] += h
        minus[k] -= h
        fd_theta[k] = (loss(plus, params) - loss(minus, params)) / (2 * h)
    worst = relative_error(theta_grad, fd_theta)

    sizes = np.array([p.size for p in params])
    flat_choices = rng.choice(sizes.sum(), size=min(n_head_coords, sizes.sum()), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    analytic, numeric = [], []
    for flat in flat_choices:
        which = int(np.searchsorted(offsets, flat, side="right") - 1)
        idx = np.unravel_index(flat - offsets[which], params[which].shape)
        plus = [p.copy() for p in params]
        minus = [p.copy() for p in params]
        plus[which][idx] += h
        minus[which][idx] -= h
        numeric.append((loss(thetas, plus) - loss(thetas, minus)) / (2 * h))
        analytic.append(head_grads[which][idx])
    return max(worst, relative_error(analytic, numeric))
