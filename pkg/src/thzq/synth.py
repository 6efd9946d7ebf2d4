"""Synthetic raster-scanned THz-TDS data for a laminated, double-sided sample.

Each of ``n_layers`` sheets has a front and a back surface, each carrying a
binary pencil drawing over a ``pixels_per_side`` square grid. A waveform is the
sum of one Ricker echo per surface::

    y(t) = sum_s T_s * r_s * pulse(t - tau_s - j) + noise

with reflectance ``r_s`` set by whether surface ``s`` is drawn at the pixel,
and ``T_s`` the two-pass transmission through all shallower surfaces. Drawn
graphite transmits less, so content on front sheets dims the echoes behind it
(the shadow effect). ``j`` is one depth-jitter draw per waveform.

Surfaces are ordered L1-front, L1-back, L2-front, ... throughout.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from thzq.errors import OutOfRangePixelError, SceneFormatError

SPLITS = ("train", "valid", "test")
SPLIT_FRACTIONS = (0.6, 0.1, 0.3)


def default_delays(n_layers: int = 3, pulse_width: float = 0.8) -> list[float]:
    """Front echoes 9 ps apart from 8 ps; each back echo trails its front by 4 pulse widths.

    At that spacing the Ricker side lobes of a sheet's two echoes still touch,
    but a plain time gate can separate the first sheet's surfaces.
    """
    out = []
    for k in range(n_layers):
        front = 8.0 + 9.0 * k
        out += [front, front + 4.0 * pulse_width]
    return out


@dataclass
class SceneConfig:
    n_layers: int = 3
    pixels_per_side: int = 8
    scans_per_pixel_side: int = 10
    samples_per_waveform: int = 196
    time_window: float = 40.0
    surface_delays: list[float] = field(default_factory=default_delays)
    pulse_width: float = 0.8
    reflect_blank: float = 0.15
    reflect_drawn: float = 0.45
    transmit_blank: float = 0.95
    transmit_drawn: float = 0.80
    depth_jitter_std: float = 0.15
    noise_std: float = 0.01
    seed: int = 0

    def __post_init__(self):
        self.surface_delays = [float(d) for d in self.surface_delays]
        if self.n_layers < 1 or self.pixels_per_side < 1 or self.scans_per_pixel_side < 1:
            raise ValueError("layer, pixel and scan counts must be positive")
        if self.pixels_per_side > 255 or self.scans_per_pixel_side > 255:
            raise ValueError("pixel and scan grids are limited to 255 per side")
        if self.samples_per_waveform < 1 or self.time_window <= 0 or self.pulse_width <= 0:
            raise ValueError("waveform length, time window and pulse width must be positive")
        if len(self.surface_delays) != self.n_surfaces:
            raise ValueError(
                f"need {self.n_surfaces} surface delays, got {len(self.surface_delays)}"
            )
        if any(b <= a for a, b in zip(self.surface_delays, self.surface_delays[1:])):
            raise ValueError("surface delays must be strictly increasing")
        if not (0.0 < self.reflect_blank < 1.0 and 0.0 < self.reflect_drawn < 1.0):
            raise ValueError("reflectances must lie in (0, 1)")
        if not (0.0 < self.transmit_blank <= 1.0 and 0.0 < self.transmit_drawn <= 1.0):
            raise ValueError("transmissions must lie in (0, 1]")
        # equality allowed: shadow-free control scenes
        if self.transmit_drawn > self.transmit_blank:
            raise ValueError("transmit_drawn must not exceed transmit_blank")
        if self.depth_jitter_std < 0 or self.noise_std < 0:
            raise ValueError("noise levels must be >= 0")

    @property
    def n_surfaces(self) -> int:
        return 2 * self.n_layers

    @property
    def dt(self) -> float:
        return self.time_window / self.samples_per_waveform

    def time_grid(self) -> np.ndarray:
        return np.arange(self.samples_per_waveform) * self.dt

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SceneConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown scene config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json_file(cls, path) -> "SceneConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def surface_names(n_layers: int = 3) -> list[str]:
    return [f"L{k + 1}_{side}" for k in range(n_layers) for side in ("front", "back")]


@dataclass
class Scene:
    bitmaps: np.ndarray  # (n_surfaces, side, side) uint8

    def __post_init__(self):
        self.bitmaps = np.asarray(self.bitmaps, dtype=np.uint8)
        if self.bitmaps.ndim != 3 or self.bitmaps.shape[1] != self.bitmaps.shape[2]:
            raise SceneFormatError(f"bitmaps must be (surfaces, side, side), got {self.bitmaps.shape}")
        if np.any(self.bitmaps > 1):
            raise SceneFormatError("bitmap values must be 0 or 1")

    def __eq__(self, other):
        return isinstance(other, Scene) and np.array_equal(self.bitmaps, other.bitmaps)

    def label(self, pixel: tuple[int, int]) -> np.ndarray:
        return self.bitmaps[:, pixel[0], pixel[1]].copy()


def make_scene(config: SceneConfig) -> Scene:
    """Random drawings, one per surface, each redrawn until 20-80% of pixels are filled."""
    rng = np.random.default_rng([config.seed, 0x5CE7E])
    side = config.pixels_per_side
    maps = []
    for _ in range(config.n_surfaces):
        while True:
            bits = rng.integers(0, 2, size=(side, side), dtype=np.uint8)
            fill = bits.mean()
            if 0.2 <= fill <= 0.8 and 0 < bits.sum() < bits.size:
                break
        maps.append(bits)
    return Scene(np.stack(maps))


def read_scene_file(path, n_surfaces: int = 6, side: int = 8) -> Scene:
    """Parse the text scene format: ``n_surfaces`` blocks of ``side`` lines of '0'/'1'."""
    text = Path(path).read_text()
    blocks = [b for b in text.replace("\r\n", "\n").strip().split("\n\n") if b.strip()]
    if len(blocks) != n_surfaces:
        raise SceneFormatError(f"expected {n_surfaces} blocks, found {len(blocks)}")
    maps = []
    for i, block in enumerate(blocks):
        rows = [line.strip() for line in block.strip().split("\n")]
        if len(rows) != side or any(len(r) != side for r in rows):
            raise SceneFormatError(f"block {i + 1} is not {side}x{side}")
        if any(ch not in "01" for r in rows for ch in r):
            raise SceneFormatError(f"block {i + 1} has characters other than 0/1")
        maps.append([[int(ch) for ch in r] for r in rows])
    return Scene(np.array(maps, dtype=np.uint8))


def write_scene_file(scene: Scene, path) -> None:
    blocks = ["\n".join("".join(str(int(v)) for v in row) for row in bitmap) for bitmap in scene.bitmaps]
    Path(path).write_text("\n\n".join(blocks) + "\n")


def pulse(t, width: float):
    """Ricker wavelet ``(1 - (t/w)^2) exp(-t^2 / (2 w^2))``, peak 1 at ``t = 0``."""
    if width <= 0:
        raise ValueError("pulse width must be positive")
    u = np.asarray(t, dtype=np.float64) / width
    return (1.0 - u * u) * np.exp(-0.5 * u * u)


def echo_amplitudes(label, config: SceneConfig) -> np.ndarray:
    """Per-surface peak amplitude ``T_s * r_s`` for one 0/1 label vector."""
    label = np.asarray(label, dtype=bool)
    r = np.where(label, config.reflect_drawn, config.reflect_blank)
    one_pass = np.where(label, config.transmit_drawn, config.transmit_blank)
    through = np.concatenate([[1.0], np.cumprod(one_pass[:-1] ** 2)])
    return through * r


def sample_rng(seed: int, pixel, scan) -> np.random.Generator:
    return np.random.default_rng([seed, pixel[0], pixel[1], scan[0], scan[1]])


def clean_waveform(label, config: SceneConfig, shift: float = 0.0) -> np.ndarray:
    t = config.time_grid()
    amps = echo_amplitudes(label, config)
    delays = np.asarray(config.surface_delays) + shift
    return pulse(t[None, :] - delays[:, None], config.pulse_width).T @ amps


@dataclass
class WaveformSample:
    waveform: np.ndarray
    label: np.ndarray
    pixel: tuple[int, int]
    scan: tuple[int, int]
    split: str = "train"


def synth_waveform(scene: Scene, config: SceneConfig, pixel, scan, rng: np.random.Generator | None = None) -> WaveformSample:
    """One waveform for a given pixel and sub-pixel scan position.

    Without ``rng`` the stream is derived from ``(config.seed, pixel, scan)``.
    Waveforms are rounded to float32 precision, the storage precision of datasets.
    """
    side = config.pixels_per_side
    row, col = pixel
    if not (0 <= row < side and 0 <= col < side):
        raise OutOfRangePixelError(f"pixel {pixel} outside {side}x{side} grid")
    n_scan = config.scans_per_pixel_side
    if not (0 <= scan[0] < n_scan and 0 <= scan[1] < n_scan):
        raise OutOfRangePixelError(f"scan {scan} outside {n_scan}x{n_scan} sub-grid")
    if rng is None:
        rng = sample_rng(config.seed, pixel, scan)
    label = scene.label((row, col))
    shift = rng.normal(0.0, config.depth_jitter_std) if config.depth_jitter_std > 0 else 0.0
    y = clean_waveform(label, config, shift)
    if config.noise_std > 0:
        y = y + rng.normal(0.0, config.noise_std, size=y.shape)
    y = y.astype(np.float32).astype(np.float64)
    return WaveformSample(y, label, (int(row), int(col)), (int(scan[0]), int(scan[1])))


@dataclass
class Dataset:
    """Column-oriented sample collection.

    ``split`` holds indices into :data:`SPLITS` (0 train, 1 valid, 2 test).
    """

    waveforms: np.ndarray  # (N, L) float64
    labels: np.ndarray  # (N, S) uint8
    pixels: np.ndarray  # (N, 2) int
    scans: np.ndarray  # (N, 2) int
    split: np.ndarray  # (N,) uint8
    config: SceneConfig
    scene: Scene

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> WaveformSample:
        return WaveformSample(
            self.waveforms[i].copy(),
            self.labels[i].copy(),
            tuple(int(v) for v in self.pixels[i]),
            tuple(int(v) for v in self.scans[i]),
            SPLITS[self.split[i]],
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def indices(self, split: str) -> np.ndarray:
        return np.flatnonzero(self.split == SPLITS.index(split))

    def subset(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        idx = self.indices(split)
        return self.waveforms[idx], self.labels[idx]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.config == other.config
            and self.scene == other.scene
            and all(
                np.array_equal(getattr(self, name), getattr(other, name))
                for name in ("waveforms", "labels", "pixels", "scans", "split")
            )
        )


def split_counts(n: int) -> tuple[int, int, int]:
    n_train = round(SPLIT_FRACTIONS[0] * n)
    n_valid = round(SPLIT_FRACTIONS[1] * n)
    return n_train, n_valid, n - n_train - n_valid


def synth_dataset(config: SceneConfig, scene: Scene | None = None, threads: int = 1) -> Dataset:
    """Raster-scan every pixel and split each pixel's waveforms 60/10/30 at random.

    Sample order is pixel-major (row, col), then scan (sub-row, sub-col).
    """
    if scene is None:
        scene = make_scene(config)
    side, n_scan = config.pixels_per_side, config.scans_per_pixel_side
    if scene.bitmaps.shape != (config.n_surfaces, side, side):
        raise SceneFormatError(
            f"scene shape {scene.bitmaps.shape} does not match config "
            f"({config.n_surfaces}, {side}, {side})"
        )
    jobs = [
        ((r, c), (sr, sc))
        for r in range(side)
        for c in range(side)
        for sr in range(n_scan)
        for sc in range(n_scan)
    ]

    def make(job):
        return synth_waveform(scene, config, *job)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            samples = list(pool.map(make, jobs))
    else:
        samples = [make(job) for job in jobs]

    per_pixel = n_scan * n_scan
    counts = split_counts(per_pixel)
    pattern = np.repeat(np.arange(3, dtype=np.uint8), counts)
    split_rng = np.random.default_rng([config.seed, 0x5B1D])
    split = np.concatenate([split_rng.permutation(pattern) for _ in range(side * side)])

    return Dataset(
        waveforms=np.stack([s.waveform for s in samples]),
        labels=np.stack([s.label for s in samples]).astype(np.uint8),
        pixels=np.array([s.pixel for s in samples], dtype=np.int64),
        scans=np.array([s.scan for s in samples], dtype=np.int64),
        split=split,
        config=config,
        scene=scene,
    )


def gate_window(config: SceneConfig, surface: int) -> tuple[float, float]:
    tau = config.surface_delays[surface]
    return tau - config.pulse_width, tau + config.pulse_width


def gated_energy(waveforms, config: SceneConfig) -> np.ndarray:
    """Sum of ``y(t)^2`` inside each surface's window ``[tau_s - w, tau_s + w]``; shape (N, S)."""
    y = np.atleast_2d(np.asarray(waveforms, dtype=np.float64))
    t = config.time_grid()
    out = np.empty((y.shape[0], config.n_surfaces))
    for s in range(config.n_surfaces):
        lo, hi = gate_window(config, s)
        mask = (t >= lo) & (t <= hi)
        out[:, s] = np.sum(y[:, mask] ** 2, axis=1)
    return out
