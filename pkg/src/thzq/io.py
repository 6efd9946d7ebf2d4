"""Persistence: binary datasets, JSON checkpoints, history CSV, metrics reports, PGM heatmaps.

Dataset file layout (all little-endian)::

    magic      4 bytes  b"THZD"
    version    uint32   1
    n_samples  uint32
    wave_len   uint32
    n_surfaces uint32
    meta_len   uint32
    meta       meta_len bytes of UTF-8 JSON {"config": ..., "scene": ...}
    records    n_samples x (wave_len float32, label uint8,
                            row, col, sub_row, sub_col, split uint8)

The label byte packs surface ``s`` into bit ``s``. Waveforms are stored as
float32; datasets produced by :func:`thzq.synth.synth_dataset` already sit on
that grid, so they round-trip exactly.

Checkpoints are JSON. Floats are written with ``repr``, the shortest decimal
that parses back to the same binary64 value, so parameters round-trip bit-exactly.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
import struct
from pathlib import Path

import numpy as np

from thzq.errors import (
    BadMagicError,
    CorruptFileError,
    IoFailureError,
    SchemaMismatchError,
    TruncatedFileError,
    UnsupportedVersionError,
)
from thzq.nn import BatchNorm, Mlp, TrainConfig
from thzq.pipeline import Checkpoint, HistoryRow, IntensityModel, Metrics, ModelKind
from thzq.synth import Dataset, Scene, SceneConfig, surface_names

MAGIC = b"THZD"
DATASET_VERSION = 1
CHECKPOINT_FORMAT = "thzq-checkpoint"
CHECKPOINT_VERSION = 1
HISTORY_HEADER = ["epoch", "lr", "train_loss", "valid_mean_acc"]

_HEADER = struct.Struct("<4sIIIII")


def _record_dtype(wave_len: int) -> np.dtype:
    return np.dtype(
        [
            ("waveform", "<f4", (wave_len,)),
            ("label", "u1"),
            ("row", "u1"),
            ("col", "u1"),
            ("sub_row", "u1"),
            ("sub_col", "u1"),
            ("split", "u1"),
        ]
    )


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IoFailureError(f"cannot read {path}: {exc}") from exc


def _write_bytes(path, data: bytes) -> None:
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise IoFailureError(f"cannot write {path}: {exc}") from exc


def _write_text(path, text: str) -> None:
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoFailureError(f"cannot write {path}: {exc}") from exc


def dataset_to_bytes(dataset: Dataset) -> bytes:
    n, wave_len = dataset.waveforms.shape
    n_surfaces = dataset.labels.shape[1]
    if n_surfaces > 8:
        raise ValueError("label byte holds at most 8 surfaces")
    meta = json.dumps(
        {"config": dataset.config.to_dict(), "scene": dataset.scene.bitmaps.tolist()},
        sort_keys=True,
    ).encode("utf-8")
    records = np.zeros(n, dtype=_record_dtype(wave_len))
    records["waveform"] = dataset.waveforms
    weights = (1 << np.arange(n_surfaces)).astype(np.uint16)
    records["label"] = (dataset.labels.astype(np.uint16) @ weights).astype(np.uint8)
    records["row"], records["col"] = dataset.pixels[:, 0], dataset.pixels[:, 1]
    records["sub_row"], records["sub_col"] = dataset.scans[:, 0], dataset.scans[:, 1]
    records["split"] = dataset.split
    header = _HEADER.pack(MAGIC, DATASET_VERSION, n, wave_len, n_surfaces, len(meta))
    return header + meta + records.tobytes()


def dataset_from_bytes(data: bytes) -> Dataset:
    if len(data) < 4:
        raise TruncatedFileError("file shorter than the magic number")
    if data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < _HEADER.size:
        raise TruncatedFileError("file shorter than the header")
    _, version, n, wave_len, n_surfaces, meta_len = _HEADER.unpack_from(data)
    if version != DATASET_VERSION:
        raise UnsupportedVersionError(f"dataset version {version} not supported")
    if not 1 <= n_surfaces <= 8 or wave_len == 0:
        raise CorruptFileError(f"implausible header: wave_len={wave_len}, surfaces={n_surfaces}")
    offset = _HEADER.size
    if len(data) < offset + meta_len:
        raise TruncatedFileError("file ends inside the metadata block")
    try:
        meta = json.loads(data[offset : offset + meta_len].decode("utf-8"))
        config = SceneConfig.from_dict(meta["config"])
        scene = Scene(np.array(meta["scene"], dtype=np.int64))
    except (UnicodeDecodeError, ValueError, KeyError, TypeError, OverflowError) as exc:
        raise CorruptFileError(f"unreadable dataset metadata: {exc}") from exc
    offset += meta_len

    dtype = _record_dtype(wave_len)
    expected = offset + n * dtype.itemsize
    if len(data) < expected:
        raise TruncatedFileError(f"expected {n} records, file ends early")
    if len(data) > expected:
        raise CorruptFileError("trailing bytes after the last record")
    records = np.frombuffer(data, dtype=dtype, count=n, offset=offset)

    if config.n_surfaces != n_surfaces or config.samples_per_waveform != wave_len:
        raise CorruptFileError("header disagrees with the stored scene config")
    side, n_scan = config.pixels_per_side, config.scans_per_pixel_side
    if scene.bitmaps.shape != (n_surfaces, side, side):
        raise CorruptFileError("stored scene does not match the config")
    if (
        np.any(records["row"] >= side)
        or np.any(records["col"] >= side)
        or np.any(records["sub_row"] >= n_scan)
        or np.any(records["sub_col"] >= n_scan)
        or np.any(records["split"] > 2)
        or np.any(records["label"] >> n_surfaces)
    ):
        raise CorruptFileError("record field out of range")
    if not np.all(np.isfinite(records["waveform"])):
        raise CorruptFileError("non-finite waveform values")
    waveforms = records["waveform"].astype(np.float64)
    labels = ((records["label"][:, None] >> np.arange(n_surfaces)) & 1).astype(np.uint8)
    return Dataset(
        waveforms=waveforms,
        labels=labels,
        pixels=np.stack([records["row"], records["col"]], axis=1).astype(np.int64),
        scans=np.stack([records["sub_row"], records["sub_col"]], axis=1).astype(np.int64),
        split=records["split"].copy(),
        config=config,
        scene=scene,
    )


def write_dataset(dataset: Dataset, path) -> None:
    _write_bytes(path, dataset_to_bytes(dataset))


def read_dataset(path) -> Dataset:
    """Load a dataset file.

    Raises:
        IoFailureError, BadMagicError, UnsupportedVersionError,
        TruncatedFileError, CorruptFileError.
    """
    return dataset_from_bytes(_read_bytes(path))


# checkpoints


def _mlp_to_dict(model: Mlp) -> dict:
    return {
        "layer_dims": list(model.layer_dims),
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "batchnorm": [
            {
                "gamma": bn.gamma.tolist(),
                "beta": bn.beta.tolist(),
                "running_mean": bn.running_mean.tolist(),
                "running_var": bn.running_var.tolist(),
                "momentum": bn.momentum,
                "eps": bn.eps,
            }
            for bn in model.norms
        ],
    }


def _array(value, shape) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if arr.shape != tuple(shape):
        raise SchemaMismatchError(f"array of shape {arr.shape}, expected {tuple(shape)}")
    return arr


def _mlp_from_dict(data: dict) -> Mlp:
    dims = [int(d) for d in data["layer_dims"]]
    n_linear = len(dims) - 1
    if n_linear < 1 or len(data["weights"]) != n_linear or len(data["biases"]) != n_linear:
        raise SchemaMismatchError("layer count does not match layer_dims")
    if len(data["batchnorm"]) != n_linear - 1:
        raise SchemaMismatchError("batch-norm count does not match hidden layers")
    weights = [_array(w, (a, b)) for w, a, b in zip(data["weights"], dims[:-1], dims[1:])]
    biases = [_array(b, (d,)) for b, d in zip(data["biases"], dims[1:])]
    norms = []
    for bn, width in zip(data["batchnorm"], dims[1:-1]):
        running_var = _array(bn["running_var"], (width,))
        if np.any(running_var <= 0):
            raise SchemaMismatchError("batch-norm running variance must be positive")
        norms.append(
            BatchNorm(
                _array(bn["gamma"], (width,)),
                _array(bn["beta"], (width,)),
                _array(bn["running_mean"], (width,)),
                running_var,
                float(bn["momentum"]),
                float(bn["eps"]),
            )
        )
    return Mlp(dims, weights, biases, norms, mode="eval")


def checkpoint_to_dict(ckpt: Checkpoint) -> dict:
    out = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_kind": ckpt.kind.value,
        "seed": ckpt.seed,
        "best_epoch": ckpt.best_epoch,
        "freeze_vqc": ckpt.freeze_vqc,
        "scene_config": ckpt.scene_config.to_dict(),
        "train_config": None if ckpt.train_config is None else vars(ckpt.train_config).copy(),
        "history": [
            [r.epoch, r.lr, r.train_loss, r.valid_mean_acc] for r in ckpt.history
        ],
    }
    if ckpt.kind is ModelKind.INTENSITY:
        out["intensity"] = {
            "windows": ckpt.intensity.windows.tolist(),
            "thresholds": ckpt.intensity.thresholds.tolist(),
        }
    else:
        out["mlp"] = _mlp_to_dict(ckpt.mlp)
    if ckpt.kind is ModelKind.QML_DNN:
        out["vqc"] = {
            "n_qubits": ckpt.n_qubits,
            "n_layers": ckpt.n_layers,
            "feature_len": ckpt.feature_len,
            "feature_scale": ckpt.feature_scale,
            "thetas": ckpt.thetas.tolist(),
        }
    return out


def checkpoint_from_dict(data: dict, expected_kind: ModelKind | str | None = None) -> Checkpoint:
    try:
        if data.get("format") != CHECKPOINT_FORMAT:
            raise SchemaMismatchError("not a thzq checkpoint")
        if data.get("version") != CHECKPOINT_VERSION:
            raise UnsupportedVersionError(f"checkpoint version {data.get('version')} not supported")
        kind = ModelKind(data["model_kind"])
        if expected_kind is not None and kind is not ModelKind(expected_kind):
            raise SchemaMismatchError(
                f"checkpoint holds a {kind.value!r} model, expected {ModelKind(expected_kind).value!r}"
            )
        tc = data["train_config"]
        ckpt = Checkpoint(
            kind=kind,
            seed=int(data["seed"]),
            scene_config=SceneConfig.from_dict(data["scene_config"]),
            train_config=None if tc is None else TrainConfig(**tc),
            freeze_vqc=bool(data["freeze_vqc"]),
            best_epoch=int(data["best_epoch"]),
            history=[
                HistoryRow(int(e), float(lr), float(loss), float(acc))
                for e, lr, loss, acc in data["history"]
            ],
        )
        n_surfaces = ckpt.scene_config.n_surfaces
        if kind is ModelKind.INTENSITY:
            ckpt.intensity = IntensityModel(
                _array(data["intensity"]["windows"], (n_surfaces, 2)),
                _array(data["intensity"]["thresholds"], (n_surfaces,)),
            )
            return ckpt
        ckpt.mlp = _mlp_from_dict(data["mlp"])
        if ckpt.mlp.layer_dims[-1] != n_surfaces:
            raise SchemaMismatchError("head output width does not match the surface count")
        n_linear = ckpt.mlp.n_linear
        if kind is ModelKind.LOGREG and n_linear != 1:
            raise SchemaMismatchError("logreg checkpoint must have exactly one linear layer")
        if kind in (ModelKind.DNN, ModelKind.QML_DNN) and n_linear < 2:
            raise SchemaMismatchError(f"{kind.value} checkpoint needs hidden layers")
        if kind is ModelKind.QML_DNN:
            q = data["vqc"]
            ckpt.n_qubits, ckpt.n_layers = int(q["n_qubits"]), int(q["n_layers"])
            ckpt.feature_len = int(q["feature_len"])
            ckpt.feature_scale = float(q["feature_scale"])
            ckpt.thetas = _array(q["thetas"], (ckpt.layout.param_count,))
            if ckpt.mlp.layer_dims[0] != ckpt.feature_len or ckpt.feature_len > 2**ckpt.n_qubits:
                raise SchemaMismatchError("feature length does not match head input")
        elif ckpt.mlp.layer_dims[0] != ckpt.scene_config.samples_per_waveform:
            raise SchemaMismatchError("head input width does not match the waveform length")
        return ckpt
    except CorruptFileError:
        raise
    except (KeyError, TypeError, ValueError, AttributeError, IndexError, OverflowError) as exc:
        raise SchemaMismatchError(f"malformed checkpoint: {exc}") from exc


def write_checkpoint(ckpt: Checkpoint, path) -> None:
    _write_text(path, json.dumps(checkpoint_to_dict(ckpt), indent=1) + "\n")


def read_checkpoint(path, expected_kind: ModelKind | str | None = None) -> Checkpoint:
    """Load a checkpoint, optionally insisting on its model kind.

    Raises:
        IoFailureError: unreadable path.
        SchemaMismatchError: wrong kind, malformed document, or inconsistent shapes.
    """
    raw = _read_bytes(path)
    try:
        data = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise SchemaMismatchError(f"checkpoint is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise SchemaMismatchError("checkpoint root must be an object")
    return checkpoint_from_dict(data, expected_kind)


# reports


def history_csv(history: list[HistoryRow]) -> str:
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HISTORY_HEADER)
    for r in history:
        writer.writerow([r.epoch, repr(r.lr), repr(r.train_loss), repr(r.valid_mean_acc)])
    return buf.getvalue()


def write_history_csv(history: list[HistoryRow], path) -> None:
    _write_text(path, history_csv(history))


def metrics_report(metrics: Metrics, **extra) -> str:
    """Key-value text report, one ``key=value`` per line."""
    lines = [f"{k}={v}" for k, v in extra.items()]
    lines.append(f"n_samples={metrics.n_samples}")
    lines.append(f"mean_accuracy={metrics.mean_accuracy!r}")
    lines.append(f"exact_match_rate={metrics.exact_match_rate!r}")
    names = surface_names(len(metrics.per_surface_accuracy) // 2)
    for name, acc in zip(names, metrics.per_surface_accuracy):
        lines.append(f"acc_{name}={float(acc)!r}")
    return "\n".join(lines) + "\n"


def to_gray(value: float) -> int:
    """Map a score in [0, 1] to 0..255, rounding halves up."""
    return int(math.floor(float(value) * 255.0 + 0.5))


def pgm_text(image) -> str:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError("heatmap must be 2-D")
    if np.any(~np.isfinite(image)) or image.min() < 0.0 or image.max() > 1.0:
        raise ValueError("heatmap values must lie in [0, 1]")
    rows, cols = image.shape
    lines = ["P2", f"{cols} {rows}", "255"]
    lines += [" ".join(str(to_gray(v)) for v in row) for row in image]
    return "\n".join(lines) + "\n"


def export_heatmaps(maps, path_prefix) -> list[Path]:
    """Write one P2 PGM per surface plus ``<prefix>_scores.csv`` with the raw scores."""
    maps = np.asarray(maps, dtype=np.float64)
    names = surface_names(len(maps) // 2)
    written = []
    for name, image in zip(names, maps):
        path = Path(f"{path_prefix}_{name}.pgm")
        _write_text(path, pgm_text(image))
        written.append(path)
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["surface", "row", "col", "score"])
    for name, image in zip(names, maps):
        for (r, c), v in np.ndenumerate(image):
            writer.writerow([name, r, c, repr(float(v))])
    csv_path = Path(f"{path_prefix}_scores.csv")
    _write_text(csv_path, buf.getvalue())
    written.append(csv_path)
    return written


def read_pgm(path) -> np.ndarray:
    """Parse a P2 PGM written by :func:`export_heatmaps` into an integer array."""
    tokens = Path(path).read_text().split()
    if not tokens or tokens[0] != "P2":
        raise CorruptFileError("not a P2 PGM")
    cols, rows = int(tokens[1]), int(tokens[2])
    values = np.array([int(v) for v in tokens[4:]], dtype=np.int64)
    if values.size != rows * cols:
        raise TruncatedFileError("pixel count does not match PGM header")
    return values.reshape(rows, cols)
