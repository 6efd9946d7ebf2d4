import dataclasses

import numpy as np
import pytest

from thzq.errors import DegenerateClassError, EmptySplitError
from thzq.gradcheck import end_to_end_check
from thzq.nn import TrainConfig, lr_at
from thzq.pipeline import (
    epochs_to_fraction,
    evaluate,
    fit_intensity,
    metrics_from_scores,
    param_counts,
    pixel_means,
    predict_scores,
    reconstruct_images,
    train,
)
from thzq.synth import SceneConfig, synth_dataset
from thzq.vqc import build_layout, init_thetas

FAST = TrainConfig(epochs=3, batch_size=64, seed=5)


def initial_thetas(seed):
    return init_thetas(build_layout(), np.random.default_rng([seed, 1]))


def mutual_information(x, y) -> float:
    """Plug-in mutual information (bits) between two binary arrays."""
    x = np.asarray(x, dtype=int)
    y = np.asarray(y, dtype=int)
    joint = np.zeros((2, 2))
    np.add.at(joint, (x, y), 1)
    joint /= joint.sum()
    px, py = joint.sum(axis=1), joint.sum(axis=0)
    mi = 0.0
    for i in range(2):
        for j in range(2):
            if joint[i, j] > 0:
                mi += joint[i, j] * np.log2(joint[i, j] / (px[i] * py[j]))
    return mi


class TestParamCounts:
    def test_qml_dnn(self):
        assert param_counts("qml-dnn") == {"vqc": 28, "head": 26101, "total": 26129}

    def test_others(self):
        assert param_counts("dnn")["total"] == 26101
        assert param_counts("logreg")["total"] == 1182
        assert param_counts("intensity")["total"] == 6

    def test_trained_model_matches(self, small_dataset):
        ckpt, _ = train("qml-dnn", small_dataset, dataclasses.replace(FAST, epochs=1))
        assert len(ckpt.thetas) == 28
        assert ckpt.mlp.param_count() == 26101


class TestMetrics:
    def test_perfect(self):
        labels = np.random.default_rng(0).integers(0, 2, size=(50, 6))
        m = metrics_from_scores(labels.astype(float), labels)
        assert m.mean_accuracy == 1.0 and m.exact_match_rate == 1.0

    def test_uniform_random_scores(self):
        rng = np.random.default_rng(1)
        labels = rng.integers(0, 2, size=(2000, 6))
        m = metrics_from_scores(rng.random((2000, 6)), labels)
        assert abs(m.mean_accuracy - 0.5) <= 0.03

    def test_invariants(self):
        rng = np.random.default_rng(2)
        labels = rng.integers(0, 2, size=(300, 6))
        scores = np.clip(labels + rng.normal(scale=0.4, size=labels.shape), 0, 1)
        m = metrics_from_scores(scores, labels)
        assert m.mean_accuracy == pytest.approx(np.mean(m.per_surface_accuracy))
        assert m.exact_match_rate <= m.per_surface_accuracy.min()

    def test_empty(self):
        with pytest.raises(EmptySplitError):
            metrics_from_scores(np.zeros((0, 6)), np.zeros((0, 6)))


class TestIntensity:
    def test_shadow_free_is_perfect(self):
        cfg = SceneConfig(seed=4, depth_jitter_std=0.0, noise_std=0.0, transmit_drawn=0.95)
        ds = synth_dataset(cfg)
        ckpt, _ = train("intensity", ds, TrainConfig(seed=0))
        m = evaluate(ckpt, ds, "test")
        assert np.all(m.per_surface_accuracy == 1.0)

    def test_gate_windows(self, default_dataset):
        model = fit_intensity(default_dataset)
        cfg = default_dataset.config
        for (lo, hi), tau in zip(model.windows, cfg.surface_delays):
            assert (lo, hi) == (tau - cfg.pulse_width, tau + cfg.pulse_width)

    def test_shadowing_hurts_deep_surfaces(self, default_dataset):
        ckpt, _ = train("intensity", default_dataset, TrainConfig(seed=0))
        acc = evaluate(ckpt, default_dataset, "test").per_surface_accuracy
        assert max(acc[4], acc[5]) < min(acc[0], acc[1])

    def test_shadow_visible_in_layer2_errors(self, default_dataset):
        ckpt, _ = train("intensity", default_dataset, TrainConfig(seed=0))
        idx = default_dataset.indices("test")
        scores = predict_scores(ckpt, default_dataset.waveforms[idx])
        labels = default_dataset.labels[idx]
        errors = (scores[:, 2] > 0.5) != labels[:, 2].astype(bool)
        assert errors.any()
        assert mutual_information(labels[:, 0], errors) > 0.01

    def test_zero_waveforms_flagged(self, small_dataset):
        ds = dataclasses.replace(small_dataset, waveforms=np.zeros_like(small_dataset.waveforms))
        with pytest.raises(DegenerateClassError):
            fit_intensity(ds)

    def test_single_class_flagged(self, small_dataset):
        ds = dataclasses.replace(small_dataset, labels=np.zeros_like(small_dataset.labels))
        with pytest.raises(DegenerateClassError):
            fit_intensity(ds)


class TestTraining:
    def test_history_follows_schedule(self, small_dataset):
        cfg = TrainConfig(epochs=12, batch_size=64, decay_every=5, seed=1)
        ckpt, metrics = train("logreg", small_dataset, cfg)
        assert [r.epoch for r in ckpt.history] == list(range(12))
        assert [r.lr for r in ckpt.history] == [lr_at(cfg, e) for e in range(12)]
        assert metrics.history == ckpt.history
        best = max(r.valid_mean_acc for r in ckpt.history)
        assert ckpt.history[ckpt.best_epoch].valid_mean_acc == best
        assert metrics.mean_accuracy == best

    @pytest.mark.parametrize("kind", ["logreg", "dnn", "qml-dnn"])
    def test_deterministic(self, small_dataset, kind):
        a, ma = train(kind, small_dataset, FAST)
        b, mb = train(kind, small_dataset, FAST)
        assert all(np.array_equal(p, q) for p, q in zip(a.mlp.parameters(), b.mlp.parameters()))
        if kind == "qml-dnn":
            assert np.array_equal(a.thetas, b.thetas)
        assert ma == mb

    def test_joint_training_moves_angles(self, small_dataset):
        ckpt, _ = train("qml-dnn", small_dataset, FAST)
        assert not np.array_equal(ckpt.thetas, initial_thetas(FAST.seed))

    def test_freeze_vqc(self, small_dataset):
        frozen, _ = train("qml-dnn", small_dataset, FAST, freeze_vqc=True)
        assert np.array_equal(frozen.thetas, initial_thetas(FAST.seed))
        assert frozen.freeze_vqc

    def test_empty_split(self, small_dataset):
        ds = dataclasses.replace(small_dataset, split=np.zeros_like(small_dataset.split))
        with pytest.raises(EmptySplitError):
            train("dnn", ds, FAST)
        with pytest.raises(EmptySplitError):
            evaluate(train("intensity", small_dataset, FAST)[0], ds, "test")

    def test_end_to_end_gradient(self):
        assert end_to_end_check(seed=0) <= 1e-4


class TestReconstruction:
    def test_perfect_scores_reproduce_scene(self, small_dataset):
        side = small_dataset.config.pixels_per_side
        maps = pixel_means(small_dataset.labels.astype(float), small_dataset.pixels, side)
        assert np.array_equal(maps, small_dataset.scene.bitmaps.astype(float))

    def test_constant_scores_are_gray(self, small_dataset):
        side = small_dataset.config.pixels_per_side
        maps = pixel_means(np.full(small_dataset.labels.shape, 0.5), small_dataset.pixels, side)
        assert np.all(maps == 0.5)

    def test_reconstruct_shape_and_range(self, small_dataset):
        ckpt, _ = train("intensity", small_dataset, FAST)
        maps = reconstruct_images(ckpt, small_dataset)
        assert maps.shape == (6, 4, 4)
        assert np.all((maps >= 0) & (maps <= 1))


def test_epochs_to_fraction():
    from thzq.pipeline import HistoryRow

    hist = [HistoryRow(e, 1.0, 0.0, acc) for e, acc in enumerate([0.5, 0.8, 0.95, 0.99, 1.0])]
    assert epochs_to_fraction(hist) == 3


@pytest.mark.slow
def test_capacity_ordering_on_deep_surfaces(trained_models, default_dataset):
    deep = {}
    for kind, (ckpt, _) in trained_models.items():
        deep[kind] = evaluate(ckpt, default_dataset, "test").per_surface_accuracy[4:6].mean()
    assert min(deep["qml-dnn"], deep["dnn"]) >= deep["logreg"] >= deep["intensity"]


@pytest.mark.slow
def test_convergence_speed_observation(trained_models):
    """QML+DNN vs DNN epochs to 99% of final validation accuracy, recorded only.

    On this synthetic data both heads saturate within a few epochs, so the
    ordering is reported rather than asserted.
    """
    qml = epochs_to_fraction(trained_models["qml-dnn"][0].history)
    dnn = epochs_to_fraction(trained_models["dnn"][0].history)
    print(f"epochs to 99% of final validation accuracy: qml-dnn={qml} dnn={dnn}")
    assert qml >= 0 and dnn >= 0
