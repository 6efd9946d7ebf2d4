"""Dense statevector simulation for the RY/CZ gate family.

Basis indices are little-endian: qubit ``q`` is bit ``q`` of the basis index,
so qubit 0 is the least-significant bit.

The ``*_inplace`` kernels work on any array whose last axis has length
``2**n_qubits``; leading axes are treated as a batch of independent states.
They never build gate matrices, only strided views of the amplitude array.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from thzq.errors import (
    IndexOutOfRangeError,
    LengthExceedsRegisterError,
    SameQubitError,
    ZeroNormWaveformError,
)

MAX_QUBITS = 12


@dataclass
class Statevector:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        if not 1 <= self.n_qubits <= MAX_QUBITS:
            raise ValueError(f"n_qubits must be in 1..{MAX_QUBITS}, got {self.n_qubits}")
        amps = np.asarray(self.amplitudes, dtype=np.complex128)
        if amps.shape != (2**self.n_qubits,):
            raise ValueError(
                f"expected {2**self.n_qubits} amplitudes, got shape {amps.shape}"
            )
        self.amplitudes = amps

    @classmethod
    def basis(cls, n_qubits: int, index: int = 0) -> "Statevector":
        amps = np.zeros(2**n_qubits, dtype=np.complex128)
        amps[index] = 1.0
        return cls(n_qubits, amps)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def copy(self) -> "Statevector":
        return Statevector(self.n_qubits, self.amplitudes.copy())


def _check_qubit(q: int, n_qubits: int) -> None:
    if not 0 <= q < n_qubits:
        raise IndexOutOfRangeError(f"qubit {q} out of range for {n_qubits} qubits")


def normalized_padded(waveforms: np.ndarray, n_qubits: int) -> np.ndarray:
    """Normalize real waveforms along the last axis and zero-pad the tail to 2**n_qubits.

    Works for a single waveform ``(L,)`` or a batch ``(B, L)``; returns float64.
    """
    w = np.asarray(waveforms, dtype=np.float64)
    length = w.shape[-1]
    dim = 2**n_qubits
    if length < 1:
        raise LengthExceedsRegisterError("waveform must have at least one sample")
    if length > dim:
        raise LengthExceedsRegisterError(
            f"waveform of length {length} does not fit {n_qubits} qubits ({dim} amplitudes)"
        )
    norms = np.linalg.norm(w, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise ZeroNormWaveformError("cannot embed a waveform with zero norm")
    out = np.zeros(w.shape[:-1] + (dim,), dtype=np.float64)
    out[..., :length] = w / norms
    return out


def embed_amplitude(waveform, n_qubits: int) -> Statevector:
    """Amplitude-embed a real waveform: ``amplitudes[j] = w[j] / ||w||``, zero beyond ``len(w)``.

    Raises:
        ZeroNormWaveformError: the waveform is identically zero.
        LengthExceedsRegisterError: ``len(w) > 2**n_qubits``.
    """
    w = np.asarray(waveform, dtype=np.float64)
    if w.ndim != 1:
        raise ValueError("embed_amplitude takes a single 1-D waveform")
    return Statevector(n_qubits, normalized_padded(w, n_qubits).astype(np.complex128))


def _ry_inplace(amps: np.ndarray, n_qubits: int, q: int, theta: float) -> None:
    c = np.cos(theta / 2.0)
    s = np.sin(theta / 2.0)
    view = amps.reshape(amps.shape[:-1] + (2 ** (n_qubits - q - 1), 2, 2**q))
    a0 = view[..., 0, :]
    a1 = view[..., 1, :]
    old0 = a0.copy()
    a0 *= c
    a0 -= s * a1
    a1 *= c
    a1 += s * old0


def _cz_inplace(amps: np.ndarray, n_qubits: int, a: int, b: int) -> None:
    lo, hi = min(a, b), max(a, b)
    view = amps.reshape(
        amps.shape[:-1] + (2 ** (n_qubits - hi - 1), 2, 2 ** (hi - lo - 1), 2, 2**lo)
    )
    view[..., 1, :, 1, :] *= -1


def ry_inplace(amps: np.ndarray, n_qubits: int, q: int, theta: float) -> None:
    """Apply RY(theta) on wire ``q`` to ``amps`` (last axis = basis index) in place."""
    _check_qubit(q, n_qubits)
    _ry_inplace(amps, n_qubits, q, theta)


def cz_inplace(amps: np.ndarray, n_qubits: int, a: int, b: int) -> None:
    """Apply CZ between wires ``a`` and ``b`` in place."""
    _check_qubit(a, n_qubits)
    _check_qubit(b, n_qubits)
    if a == b:
        raise SameQubitError(f"CZ needs two distinct qubits, got {a} twice")
    _cz_inplace(amps, n_qubits, a, b)


def apply_ry(state: Statevector, q: int, theta: float) -> Statevector:
    """Return ``state`` rotated by ``[[cos t/2, -sin t/2], [sin t/2, cos t/2]]`` on wire ``q``."""
    out = state.copy()
    ry_inplace(out.amplitudes, out.n_qubits, q, theta)
    return out


def apply_cz(state: Statevector, a: int, b: int) -> Statevector:
    """Return ``state`` with the sign of every basis state having bits ``a`` and ``b`` set flipped."""
    out = state.copy()
    cz_inplace(out.amplitudes, out.n_qubits, a, b)
    return out


def measure_probabilities(state: Statevector) -> np.ndarray:
    amps = state.amplitudes
    return amps.real**2 + amps.imag**2
