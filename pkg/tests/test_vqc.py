import numpy as np
import pytest

from thzq import vqc
from thzq.errors import (
    FeatureLenExceedsRegisterError,
    NonPositiveLayersError,
    OddQubitCountError,
    ShapeMismatchError,
    ZeroNormWaveformError,
)
from thzq.gradcheck import random_circuit_instance
from thzq.statevector import Statevector, apply_cz, apply_ry, measure_probabilities
from thzq.vqc import GateKind, GateSpec


def enumerated_param_count(n, layers):
    even = len(range(0, n - 1, 2))
    odd = len(range(1, n - 1, 2))
    return layers * 2 * (even + odd)


def single_ry_layout():
    return vqc.AnsatzLayout(1, 1, (GateSpec(GateKind.RY, (0,), 0),))


def reference_features(layout, thetas, waveform, feature_len, scale):
    """Gate-by-gate evolution through the complex Statevector API."""
    w = np.asarray(waveform, dtype=float)
    amps = np.zeros(layout.dim, dtype=complex)
    amps[: len(w)] = w / np.linalg.norm(w)
    s = Statevector(layout.n_qubits, amps)
    for g in layout.gates:
        s = apply_cz(s, *g.wires) if g.kind is GateKind.CZ else apply_ry(s, g.wires[0], thetas[g.param_index])
    return scale * measure_probabilities(s)[:feature_len]


@pytest.mark.parametrize(
    "n, layers, expected", [(8, 2, 28), (8, 1, 14), (2, 1, 2), (4, 3, 18)]
)
def test_param_count_examples(n, layers, expected):
    assert vqc.build_layout(n, layers).param_count == expected


def test_param_count_enumeration():
    for n in range(2, 13, 2):
        for layers in range(1, 5):
            layout = vqc.build_layout(n, layers)
            assert layout.param_count == layers * (2 * n - 2) == enumerated_param_count(n, layers)


def test_layout_structure():
    layout = vqc.build_layout(4, 1)
    program = [(g.kind.value, g.wires, g.param_index) for g in layout.gates]
    assert program == [
        ("CZ", (0, 1), None), ("RY", (0,), 0), ("RY", (1,), 1),
        ("CZ", (2, 3), None), ("RY", (2,), 2), ("RY", (3,), 3),
        ("CZ", (1, 2), None), ("RY", (1,), 4), ("RY", (2,), 5),
    ]
    indices = [g.param_index for g in vqc.build_layout(8, 2).gates if g.kind is GateKind.RY]
    assert indices == list(range(28))


def test_layout_errors():
    with pytest.raises(OddQubitCountError):
        vqc.build_layout(7, 2)
    with pytest.raises(OddQubitCountError):
        vqc.build_layout(0, 1)
    with pytest.raises(NonPositiveLayersError):
        vqc.build_layout(4, 0)


def test_layout_deterministic():
    assert vqc.build_layout(6, 3) == vqc.build_layout(6, 3)


def test_forward_matches_statevector_path():
    rng = np.random.default_rng(0)
    layout = vqc.build_layout(6, 2)
    thetas = vqc.init_thetas(layout, rng)
    w = rng.normal(size=50)
    fv = vqc.vqc_forward(layout, thetas, w, feature_len=40)
    np.testing.assert_allclose(fv.values, reference_features(layout, thetas, w, 40, 64.0), atol=1e-12)
    assert fv.scale == 64.0


def test_zero_angle_identity():
    rng = np.random.default_rng(1)
    layout = vqc.build_layout()
    w = rng.normal(size=196)
    fv = vqc.vqc_forward(layout, np.zeros(28), w)
    assert fv.values.shape == (196,)
    np.testing.assert_allclose(fv.values, 256 * w**2 / np.sum(w**2), atol=1e-12)


def test_feature_bounds_and_determinism():
    rng = np.random.default_rng(2)
    layout = vqc.build_layout()
    for _ in range(10):
        thetas = vqc.init_thetas(layout, rng)
        w = rng.normal(size=196)
        a = vqc.vqc_forward(layout, thetas, w)
        b = vqc.vqc_forward(layout, thetas, w)
        assert np.array_equal(a.values, b.values)
        assert np.all(a.values >= 0)
        assert a.values.sum() / a.scale <= 1 + 1e-12


def test_batch_matches_single():
    rng = np.random.default_rng(3)
    layout = vqc.build_layout()
    thetas = vqc.init_thetas(layout, rng)
    w = rng.normal(size=(5, 196))
    batch = vqc.vqc_features(layout, thetas, w)
    for i in range(5):
        np.testing.assert_allclose(batch[i], vqc.vqc_features(layout, thetas, w[i]), atol=1e-14)


def test_forward_errors():
    layout = vqc.build_layout(2, 1)
    with pytest.raises(FeatureLenExceedsRegisterError):
        vqc.vqc_forward(layout, np.zeros(2), [1.0, 2.0], feature_len=5)
    with pytest.raises(ZeroNormWaveformError):
        vqc.vqc_forward(layout, np.zeros(2), [0.0, 0.0], feature_len=2)
    with pytest.raises(ShapeMismatchError):
        vqc.vqc_forward(layout, np.zeros(3), [1.0], feature_len=2)


class TestGradients:
    def test_single_rotation_closed_form(self):
        # p0(theta) = cos^2(theta/2), so dp0/dtheta = -sin(theta)/2
        layout = single_ry_layout()
        for theta, expected in [(np.pi / 2, -0.5), (0.0, 0.0), (1.3, -np.sin(1.3) / 2)]:
            args = (layout, [theta], [1.0], [1.0], 1.0)
            assert vqc.grad_parameter_shift(*args)[0] == pytest.approx(expected, abs=1e-14)
            assert vqc.grad_adjoint(*args)[0] == pytest.approx(expected, abs=1e-14)

    def test_random_n4_l2(self):
        rng = np.random.default_rng(4)
        layout = vqc.build_layout(4, 2)
        thetas = vqc.init_thetas(layout, rng)
        w, up = rng.normal(size=16), rng.normal(size=16)
        ps = vqc.grad_parameter_shift(layout, thetas, w, up)
        adj = vqc.grad_adjoint(layout, thetas, w, up)
        np.testing.assert_allclose(ps, adj, atol=1e-9, rtol=0)

    def test_zero_angles_sum_of_values(self):
        layout = vqc.build_layout(6, 2)
        w = np.random.default_rng(5).normal(size=64)
        up = np.ones(64)
        ps = vqc.grad_parameter_shift(layout, np.zeros(layout.param_count), w, up)
        adj = vqc.grad_adjoint(layout, np.zeros(layout.param_count), w, up)
        np.testing.assert_allclose(adj, ps, atol=1e-9, rtol=0)
        # sum of all probabilities is constant, so its gradient vanishes
        np.testing.assert_allclose(adj, 0.0, atol=1e-12)

    def test_triple_agreement_random(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            inst = random_circuit_instance(rng)
            args = (inst.layout, inst.thetas, inst.waveform, inst.upstream)
            ps = vqc.grad_parameter_shift(*args)
            adj = vqc.grad_adjoint(*args)
            fd = vqc.finite_difference_grad(*args, h=1e-5)
            np.testing.assert_allclose(ps, adj, atol=1e-9, rtol=0)
            np.testing.assert_allclose(ps, fd, atol=1e-5, rtol=0)
            np.testing.assert_allclose(adj, fd, atol=1e-5, rtol=0)

    def test_batch_gradient_is_sum_of_sample_gradients(self):
        rng = np.random.default_rng(7)
        layout = vqc.build_layout(4, 2)
        thetas = vqc.init_thetas(layout, rng)
        w, up = rng.normal(size=(3, 10)), rng.normal(size=(3, 12))
        total = vqc.grad_adjoint(layout, thetas, w, up)
        parts = sum(vqc.grad_adjoint(layout, thetas, w[i], up[i]) for i in range(3))
        np.testing.assert_allclose(total, parts, atol=1e-12)

    def test_adjoint_uses_fewer_gate_applications(self):
        rng = np.random.default_rng(8)
        for n, layers in [(2, 2), (4, 1), (8, 2)]:
            layout = vqc.build_layout(n, layers)
            thetas = vqc.init_thetas(layout, rng)
            w, up = rng.normal(size=layout.dim), rng.normal(size=layout.dim)
            shift, adjoint = vqc.GateTally(), vqc.GateTally()
            vqc.grad_parameter_shift(layout, thetas, w, up, tally=shift)
            vqc.grad_adjoint(layout, thetas, w, up, tally=adjoint)
            assert layout.param_count > 2
            assert shift.count == 2 * layout.param_count * len(layout.gates)
            assert adjoint.count < shift.count

    def test_upstream_shape_checked(self):
        layout = vqc.build_layout(2, 1)
        with pytest.raises(ShapeMismatchError):
            vqc.grad_adjoint(layout, np.zeros(2), np.ones((2, 4)), np.ones((3, 4)))
