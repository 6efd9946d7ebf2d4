"""Staggered RY/CZ ansatz, waveform-to-feature forward pass, and exact gradients.

Each ansatz layer is an even sub-layer over pairs (0,1), (2,3), ... followed
by an odd sub-layer over pairs (1,2), (3,4), ...; every pair contributes one
CZ and then one RY per member. There is no leading rotation column, so a
layout has ``n_layers * (2 * n_qubits - 2)`` angles (28 for 8 qubits, 2 layers).

Features are the first ``feature_len`` computational-basis probabilities of
the evolved state, multiplied by a constant ``scale`` (``2**n_qubits`` by
default).

The forward and gradient routines accept either one waveform ``(L,)`` or a
batch ``(B, L)``. Gradients of a batch are summed over samples with
``np.sum(axis=0)``, which fixes the reduction order.

The circuit uses only real gates, so batched evaluation keeps amplitudes in
float64; :mod:`thzq.statevector` holds the complex reference path.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from thzq.errors import (
    FeatureLenExceedsRegisterError,
    NonPositiveLayersError,
    OddQubitCountError,
    ShapeMismatchError,
)
from thzq.statevector import _cz_inplace, _ry_inplace, normalized_padded

DEFAULT_QUBITS = 8
DEFAULT_LAYERS = 2
DEFAULT_FEATURE_LEN = 196


class GateKind(str, Enum):
    CZ = "CZ"
    RY = "RY"


@dataclass(frozen=True)
class GateSpec:
    kind: GateKind
    wires: tuple[int, ...]
    param_index: int | None = None

    def __post_init__(self):
        if self.kind is GateKind.CZ:
            if len(self.wires) != 2 or self.param_index is not None:
                raise ValueError("CZ takes two wires and no parameter")
        elif len(self.wires) != 1 or self.param_index is None:
            raise ValueError("RY takes one wire and a parameter index")


@dataclass(frozen=True)
class AnsatzLayout:
    n_qubits: int
    n_layers: int
    gates: tuple[GateSpec, ...]

    @property
    def param_count(self) -> int:
        return sum(1 for g in self.gates if g.kind is GateKind.RY)

    @property
    def dim(self) -> int:
        return 2**self.n_qubits


@dataclass
class GateTally:
    """Counts gate applications (each on a whole batch of states)."""

    count: int = 0


@dataclass
class FeatureVector:
    values: np.ndarray
    scale: float


def build_layout(n_qubits: int = DEFAULT_QUBITS, n_layers: int = DEFAULT_LAYERS) -> AnsatzLayout:
    if n_qubits < 2 or n_qubits % 2:
        raise OddQubitCountError(f"n_qubits must be even and >= 2, got {n_qubits}")
    if n_layers < 1:
        raise NonPositiveLayersError(f"n_layers must be >= 1, got {n_layers}")
    gates: list[GateSpec] = []
    k = 0
    for _ in range(n_layers):
        for start in (0, 1):
            for a in range(start, n_qubits - 1, 2):
                gates.append(GateSpec(GateKind.CZ, (a, a + 1)))
                for q in (a, a + 1):
                    gates.append(GateSpec(GateKind.RY, (q,), k))
                    k += 1
    return AnsatzLayout(n_qubits, n_layers, tuple(gates))


def init_thetas(layout: AnsatzLayout, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-np.pi, np.pi, size=layout.param_count)


def _check_thetas(layout: AnsatzLayout, thetas) -> np.ndarray:
    thetas = np.asarray(thetas, dtype=np.float64)
    if thetas.shape != (layout.param_count,):
        raise ShapeMismatchError(
            f"layout has {layout.param_count} parameters, got thetas of shape {thetas.shape}"
        )
    return thetas


def _check_feature_len(layout: AnsatzLayout, feature_len: int) -> None:
    if not 1 <= feature_len <= layout.dim:
        raise FeatureLenExceedsRegisterError(
            f"feature_len {feature_len} not in 1..{layout.dim}"
        )


def run_circuit(
    layout: AnsatzLayout, thetas, states: np.ndarray, tally: GateTally | None = None
) -> np.ndarray:
    """Evolve ``states`` (last axis ``2**n``) through the layout, in place; returns ``states``."""
    thetas = _check_thetas(layout, thetas)
    n = layout.n_qubits
    for g in layout.gates:
        if g.kind is GateKind.CZ:
            _cz_inplace(states, n, *g.wires)
        else:
            _ry_inplace(states, n, g.wires[0], thetas[g.param_index])
    if tally is not None:
        tally.count += len(layout.gates)
    return states


def final_states(layout: AnsatzLayout, thetas, waveforms, tally: GateTally | None = None) -> np.ndarray:
    states = normalized_padded(waveforms, layout.n_qubits)
    return run_circuit(layout, thetas, states, tally)


def features_from_states(states: np.ndarray, feature_len: int, scale: float) -> np.ndarray:
    return scale * states[..., :feature_len] ** 2


def vqc_features(
    layout: AnsatzLayout,
    thetas,
    waveforms,
    feature_len: int = DEFAULT_FEATURE_LEN,
    scale: float | None = None,
    tally: GateTally | None = None,
) -> np.ndarray:
    """Feature array ``scale * p[:feature_len]`` for one waveform or a batch."""
    _check_feature_len(layout, feature_len)
    if scale is None:
        scale = float(layout.dim)
    return features_from_states(final_states(layout, thetas, waveforms, tally), feature_len, scale)


def vqc_forward(
    layout: AnsatzLayout,
    thetas,
    waveform,
    feature_len: int = DEFAULT_FEATURE_LEN,
    scale: float | None = None,
) -> FeatureVector:
    if scale is None:
        scale = float(layout.dim)
    return FeatureVector(vqc_features(layout, thetas, waveform, feature_len, scale), scale)


def _upstream_observable(layout: AnsatzLayout, upstream: np.ndarray, batch_shape, scale: float):
    upstream = np.asarray(upstream, dtype=np.float64)
    feature_len = upstream.shape[-1]
    _check_feature_len(layout, feature_len)
    if upstream.shape[:-1] != batch_shape:
        raise ShapeMismatchError(
            f"upstream batch shape {upstream.shape[:-1]} does not match waveforms {batch_shape}"
        )
    diag = np.zeros(batch_shape + (layout.dim,), dtype=np.float64)
    diag[..., :feature_len] = scale * upstream
    return diag


def grad_parameter_shift(
    layout: AnsatzLayout,
    thetas,
    waveforms,
    upstream,
    scale: float | None = None,
    tally: GateTally | None = None,
) -> np.ndarray:
    """Gradient of ``sum(upstream * features)`` by the two-term shift rule at +-pi/2."""
    thetas = _check_thetas(layout, thetas)
    if scale is None:
        scale = float(layout.dim)
    upstream = np.asarray(upstream, dtype=np.float64)
    feature_len = upstream.shape[-1]
    start = normalized_padded(waveforms, layout.n_qubits)
    if upstream.shape[:-1] != start.shape[:-1]:
        raise ShapeMismatchError("upstream and waveforms disagree on batch shape")
    _check_feature_len(layout, feature_len)

    def weighted(shifted: np.ndarray) -> float:
        states = run_circuit(layout, shifted, start.copy(), tally)
        return float(np.sum(upstream * features_from_states(states, feature_len, scale)))

    grad = np.empty(layout.param_count)
    for k in range(layout.param_count):
        plus = thetas.copy()
        plus[k] += np.pi / 2
        minus = thetas.copy()
        minus[k] -= np.pi / 2
        grad[k] = (weighted(plus) - weighted(minus)) / 2.0
    return grad


def _ry_derivative_overlap(bra: np.ndarray, ket: np.ndarray, n_qubits: int, q: int, theta: float) -> float:
    """``2 <bra| dRY(theta)/dtheta |ket>`` on wire ``q``, summed over any batch axes.

    With ``dRY/dt = RY(t + pi) / 2`` this is
    ``cos(t/2) * sum(b1 a0 - b0 a1) - sin(t/2) * sum(b0 a0 + b1 a1)``.
    """
    shape = (-1, 2 ** (n_qubits - q - 1), 2, 2**q)
    b = bra.reshape(shape)
    a = ket.reshape(shape)
    cross = np.sum(b[:, :, 1, :] * a[:, :, 0, :]) - np.sum(b[:, :, 0, :] * a[:, :, 1, :])
    return float(np.cos(theta / 2.0) * cross - np.sin(theta / 2.0) * np.vdot(bra, ket))


def grad_adjoint(
    layout: AnsatzLayout,
    thetas,
    waveforms,
    upstream,
    scale: float | None = None,
    tally: GateTally | None = None,
    states: np.ndarray | None = None,
) -> np.ndarray:
    """Same gradient as :func:`grad_parameter_shift` from one forward and one reverse sweep.

    Pass ``states`` (final states of the forward pass) to skip the recomputation;
    they are consumed.
    """
    thetas = _check_thetas(layout, thetas)
    if scale is None:
        scale = float(layout.dim)
    n = layout.n_qubits
    if states is None:
        ket = final_states(layout, thetas, waveforms, tally)
    else:
        ket = states
    batch_shape = ket.shape[:-1]
    bra = _upstream_observable(layout, upstream, batch_shape, scale) * ket

    grad = np.zeros(layout.param_count)
    applied = 0
    for g in reversed(layout.gates):
        if g.kind is GateKind.CZ:
            _cz_inplace(ket, n, *g.wires)
            _cz_inplace(bra, n, *g.wires)
            applied += 2
            continue
        q = g.wires[0]
        theta = thetas[g.param_index]
        _ry_inplace(ket, n, q, -theta)
        grad[g.param_index] = _ry_derivative_overlap(bra, ket, n, q, theta)
        _ry_inplace(bra, n, q, -theta)
        applied += 3
    if tally is not None:
        tally.count += applied
    return grad


def finite_difference_grad(
    layout: AnsatzLayout,
    thetas,
    waveforms,
    upstream,
    scale: float | None = None,
    h: float = 1e-5,
) -> np.ndarray:
    """Central differences of ``sum(upstream * features)``; a slow oracle for tests."""
    thetas = _check_thetas(layout, thetas)
    upstream = np.asarray(upstream, dtype=np.float64)
    feature_len = upstream.shape[-1]
    grad = np.empty(layout.param_count)
    for k in range(layout.param_count):
        plus = thetas.copy()
        plus[k] += h
        minus = thetas.copy()
        minus[k] -= h
        fp = np.sum(upstream * vqc_features(layout, plus, waveforms, feature_len, scale))
        fm = np.sum(upstream * vqc_features(layout, minus, waveforms, feature_len, scale))
        grad[k] = (fp - fm) / (2 * h)
    return grad
