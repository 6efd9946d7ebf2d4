"""Training and evaluation of the four surface classifiers.

* ``intensity``: time-gated echo energy per surface, thresholded at the
  midpoint of the two class means.
* ``logreg``: one linear layer + sigmoid on the raw waveform.
* ``dnn``: five-layer batch-normalized Mish MLP on the raw waveform.
* ``qml-dnn``: the variational circuit turns each waveform into 196
  probability features, which feed the same MLP; circuit angles and head
  weights are trained jointly (or with the angles frozen).

Learned models are fit by minibatch SGD on mean binary cross-entropy with a
step-decayed learning rate; the checkpoint keeps the parameters of the epoch
with the best validation mean accuracy (first one on ties).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from thzq import vqc
from thzq.errors import DegenerateClassError, EmptySplitError
from thzq.nn import (
    Mlp,
    TrainConfig,
    bce_loss,
    lr_at,
    mlp_backward,
    mlp_forward,
    mlp_init,
    sgd_step,
)
from thzq.synth import Dataset, SceneConfig, gate_window, gated_energy

log = logging.getLogger(__name__)

N_LINEAR = 5


class ModelKind(str, Enum):
    INTENSITY = "intensity"
    LOGREG = "logreg"
    DNN = "dnn"
    QML_DNN = "qml-dnn"


@dataclass
class IntensityModel:
    windows: np.ndarray  # (S, 2) ps
    thresholds: np.ndarray  # (S,)


@dataclass
class HistoryRow:
    epoch: int
    lr: float
    train_loss: float
    valid_mean_acc: float


@dataclass
class Checkpoint:
    kind: ModelKind
    seed: int
    scene_config: SceneConfig
    train_config: TrainConfig | None = None
    mlp: Mlp | None = None
    thetas: np.ndarray | None = None
    n_qubits: int = vqc.DEFAULT_QUBITS
    n_layers: int = vqc.DEFAULT_LAYERS
    feature_len: int = vqc.DEFAULT_FEATURE_LEN
    feature_scale: float = float(2**vqc.DEFAULT_QUBITS)
    freeze_vqc: bool = False
    intensity: IntensityModel | None = None
    best_epoch: int = -1
    history: list[HistoryRow] = field(default_factory=list)

    @property
    def layout(self) -> vqc.AnsatzLayout:
        return vqc.build_layout(self.n_qubits, self.n_layers)


@dataclass
class Metrics:
    per_surface_accuracy: np.ndarray
    mean_accuracy: float
    exact_match_rate: float
    n_samples: int
    history: list[HistoryRow] = field(default_factory=list)

    def __eq__(self, other):
        if not isinstance(other, Metrics):
            return NotImplemented
        return (
            np.array_equal(self.per_surface_accuracy, other.per_surface_accuracy)
            and self.mean_accuracy == other.mean_accuracy
            and self.exact_match_rate == other.exact_match_rate
            and self.n_samples == other.n_samples
            and self.history == other.history
        )


def param_counts(kind: ModelKind | str, input_len: int = 196, n_surfaces: int = 6) -> dict[str, int]:
    """Trainable-parameter counts by component, without building a dataset."""
    kind = ModelKind(kind)
    if kind is ModelKind.INTENSITY:
        counts = {"thresholds": n_surfaces}
    elif kind is ModelKind.LOGREG:
        counts = {"head": mlp_init(input_len, n_surfaces, 1, 0).param_count()}
    elif kind is ModelKind.DNN:
        counts = {"head": mlp_init(input_len, n_surfaces, N_LINEAR, 0).param_count()}
    else:
        layout = vqc.build_layout()
        counts = {
            "vqc": layout.param_count,
            "head": mlp_init(vqc.DEFAULT_FEATURE_LEN, n_surfaces, N_LINEAR, 0).param_count(),
        }
    counts["total"] = sum(counts.values())
    return counts


def metrics_from_scores(scores, labels, history=None) -> Metrics:
    """Threshold scores at 0.5 (strictly above means drawn) and score each surface."""
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise EmptySplitError("no samples to evaluate")
    correct = (scores > 0.5) == labels.astype(bool)
    per_surface = correct.mean(axis=0)
    return Metrics(
        per_surface_accuracy=per_surface,
        mean_accuracy=float(per_surface.mean()),
        exact_match_rate=float(correct.all(axis=1).mean()),
        n_samples=int(len(labels)),
        history=list(history or []),
    )


def fit_intensity(dataset: Dataset) -> IntensityModel:
    """Per-surface gate ``[tau - w, tau + w]`` and class-mean-midpoint energy threshold.

    Raises:
        EmptySplitError: no training samples.
        DegenerateClassError: a surface has one class only, or both classes
            have the same mean gated energy.
    """
    config = dataset.config
    idx = dataset.indices("train")
    if len(idx) == 0:
        raise EmptySplitError("train split is empty")
    energy = gated_energy(dataset.waveforms[idx], config)
    labels = dataset.labels[idx].astype(bool)
    thresholds = np.empty(config.n_surfaces)
    for s in range(config.n_surfaces):
        drawn, blank = energy[labels[:, s], s], energy[~labels[:, s], s]
        if len(drawn) == 0 or len(blank) == 0:
            raise DegenerateClassError(f"surface {s + 1} has a single class in the train split")
        if drawn.mean() == blank.mean():
            raise DegenerateClassError(f"surface {s + 1}: both classes have the same gated energy")
        thresholds[s] = 0.5 * (drawn.mean() + blank.mean())
    windows = np.array([gate_window(config, s) for s in range(config.n_surfaces)])
    return IntensityModel(windows, thresholds)


def _intensity_scores(model: IntensityModel, waveforms, config: SceneConfig) -> np.ndarray:
    t = config.time_grid()
    y = np.asarray(waveforms, dtype=np.float64)
    energy = np.empty((len(y), len(model.thresholds)))
    for s, (lo, hi) in enumerate(model.windows):
        mask = (t >= lo) & (t <= hi)
        energy[:, s] = np.sum(y[:, mask] ** 2, axis=1)
    # monotone map of energy to [0, 1) that crosses 0.5 exactly at the threshold
    return energy / (energy + model.thresholds)


def _head_inputs(ckpt: Checkpoint, waveforms) -> np.ndarray:
    if ckpt.kind is ModelKind.QML_DNN:
        return vqc.vqc_features(
            ckpt.layout, ckpt.thetas, waveforms, ckpt.feature_len, ckpt.feature_scale
        )
    return np.asarray(waveforms, dtype=np.float64)


def predict_scores(ckpt: Checkpoint, waveforms) -> np.ndarray:
    """Per-surface scores in [0, 1] for a batch of waveforms; never mutates the checkpoint."""
    if ckpt.kind is ModelKind.INTENSITY:
        return _intensity_scores(ckpt.intensity, waveforms, ckpt.scene_config)
    model = ckpt.mlp.copy().eval()
    scores, _ = mlp_forward(model, _head_inputs(ckpt, waveforms))
    return scores


def evaluate(ckpt: Checkpoint, dataset: Dataset, split: str = "test") -> Metrics:
    idx = dataset.indices(split)
    if len(idx) == 0:
        raise EmptySplitError(f"split {split!r} is empty")
    scores = predict_scores(ckpt, dataset.waveforms[idx])
    return metrics_from_scores(scores, dataset.labels[idx], ckpt.history)


def reconstruct_images(ckpt: Checkpoint, dataset: Dataset, split: str = "test") -> np.ndarray:
    """Mean predicted score per surface and pixel over that pixel's ``split`` waveforms.

    Returns an array of shape ``(n_surfaces, side, side)``.
    """
    idx = dataset.indices(split)
    if len(idx) == 0:
        raise EmptySplitError(f"split {split!r} is empty")
    scores = predict_scores(ckpt, dataset.waveforms[idx])
    return pixel_means(scores, dataset.pixels[idx], dataset.config.pixels_per_side)


def pixel_means(scores, pixels, side: int) -> np.ndarray:
    """Average ``(N, S)`` scores per ``(row, col)`` pixel into ``(S, side, side)`` maps."""
    scores = np.asarray(scores, dtype=np.float64)
    pixels = np.asarray(pixels)
    flat = pixels[:, 0] * side + pixels[:, 1]
    counts = np.bincount(flat, minlength=side * side)
    if np.any(counts == 0):
        raise EmptySplitError("some pixels have no samples")
    maps = np.empty((scores.shape[1], side * side))
    for s in range(scores.shape[1]):
        maps[s] = np.bincount(flat, weights=scores[:, s], minlength=side * side) / counts
    return maps.reshape(-1, side, side)


def _snapshot(ckpt: Checkpoint) -> tuple:
    return (
        ckpt.mlp.copy() if ckpt.mlp is not None else None,
        None if ckpt.thetas is None else ckpt.thetas.copy(),
    )


def train(
    kind: ModelKind | str,
    dataset: Dataset,
    config: TrainConfig,
    freeze_vqc: bool = False,
    n_qubits: int = vqc.DEFAULT_QUBITS,
    n_layers: int = vqc.DEFAULT_LAYERS,
    on_epoch: Callable[[HistoryRow], None] | None = None,
) -> tuple[Checkpoint, Metrics]:
    """Fit one model and return the best-validation checkpoint with its validation metrics.

    Randomness comes from ``config.seed`` only: head weights use the seed
    directly, circuit angles and the epoch shuffles use generators derived from
    it. A trailing minibatch of one sample is skipped (batch norm needs two).
    """
    kind = ModelKind(kind)
    train_idx = dataset.indices("train")
    valid_idx = dataset.indices("valid")
    if len(train_idx) == 0 or len(valid_idx) == 0:
        raise EmptySplitError("training needs nonempty train and valid splits")
    n_out = dataset.labels.shape[1]
    ckpt = Checkpoint(kind, config.seed, dataset.config, config, freeze_vqc=freeze_vqc)

    if kind is ModelKind.INTENSITY:
        ckpt.intensity = fit_intensity(dataset)
        return ckpt, evaluate(ckpt, dataset, "valid")

    waveforms = dataset.waveforms
    labels = dataset.labels.astype(np.float64)
    layout = None
    if kind is ModelKind.QML_DNN:
        layout = vqc.build_layout(n_qubits, n_layers)
        ckpt.n_qubits, ckpt.n_layers = n_qubits, n_layers
        ckpt.feature_scale = float(layout.dim)
        ckpt.thetas = vqc.init_thetas(layout, np.random.default_rng([config.seed, 1]))
        ckpt.mlp = mlp_init(ckpt.feature_len, n_out, N_LINEAR, config.seed)
    else:
        n_linear = 1 if kind is ModelKind.LOGREG else N_LINEAR
        ckpt.mlp = mlp_init(waveforms.shape[1], n_out, n_linear, config.seed)

    shuffle_rng = np.random.default_rng([config.seed, 2])
    best_acc, best = -1.0, _snapshot(ckpt)
    for epoch in range(config.epochs):
        lr = lr_at(config, epoch)
        order = shuffle_rng.permutation(train_idx)
        loss_sum, seen = 0.0, 0
        ckpt.mlp.train()
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            if len(batch) < 2:
                continue
            states = None
            if layout is not None:
                states = vqc.final_states(layout, ckpt.thetas, waveforms[batch])
                inputs = vqc.features_from_states(states, ckpt.feature_len, ckpt.feature_scale)
            else:
                inputs = waveforms[batch]
            scores, cache = mlp_forward(ckpt.mlp, inputs)
            loss_sum += bce_loss(scores, labels[batch]) * len(batch)
            seen += len(batch)
            grads = mlp_backward(ckpt.mlp, cache, labels[batch])
            if layout is not None and not freeze_vqc:
                theta_grad = vqc.grad_adjoint(
                    layout, ckpt.thetas, None, grads.inputs, ckpt.feature_scale, states=states
                )
                ckpt.thetas = sgd_step(ckpt.thetas, theta_grad, lr)
            ckpt.mlp.set_parameters(sgd_step(ckpt.mlp.parameters(), grads.params, lr))

        ckpt.mlp.eval()
        valid_scores, _ = mlp_forward(ckpt.mlp, _head_inputs(ckpt, waveforms[valid_idx]))
        valid_acc = metrics_from_scores(valid_scores, dataset.labels[valid_idx]).mean_accuracy
        row = HistoryRow(epoch, lr, loss_sum / max(seen, 1), valid_acc)
        ckpt.history.append(row)
        if on_epoch is not None:
            on_epoch(row)
        if valid_acc > best_acc:
            best_acc, best = valid_acc, _snapshot(ckpt)
            ckpt.best_epoch = epoch
        log.debug("epoch %d lr %.3g loss %.5f valid %.4f", epoch, lr, row.train_loss, valid_acc)

    ckpt.mlp, ckpt.thetas = best
    ckpt.mlp.eval()
    return ckpt, evaluate(ckpt, dataset, "valid")


def epochs_to_fraction(history: list[HistoryRow], fraction: float = 0.99) -> int:
    """First epoch whose validation accuracy reaches ``fraction`` of the final epoch's."""
    target = fraction * history[-1].valid_mean_acc
    for row in history:
        if row.valid_mean_acc >= target:
            return row.epoch
    return history[-1].epoch
