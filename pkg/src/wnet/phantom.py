"""Synthetic layered subcutaneous-tissue phantoms with RF, grey and label images.

Each tissue class has its own acoustic carrier. The RF is one shared complex
speckle field, band-limited along depth, modulated by a carrier whose phase
runs continuously across class boundaries and scaled by the class
echogenicity. Grey images are the log-compressed RMS envelope of that RF, so
two classes with equal echogenicity look alike in grey while staying separable
by frequency.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter1d
from scipy.signal import fftconvolve

from .data import Sample, assign_splits, save_dataset


class PhantomConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TissueSpec:
    class_id: int
    carrier_mhz: float
    echogenicity: float
    band_sigma_samples: float = 64.0


def default_tissues() -> tuple[TissueSpec, ...]:
    return (
        TissueSpec(1, 7.0, 8.0),  # skin
        TissueSpec(2, 5.0, 1.0),  # fat
        TissueSpec(3, 4.0, 6.0),  # fat fascia
        TissueSpec(4, 5.5, 1.0),  # muscle
        TissueSpec(5, 7.5, 6.0),  # muscle fascia
    )


@dataclass(frozen=True)
class PhantomConfig:
    rows: int = 256
    cols: int = 64
    fs_mhz: float = 20.0
    tissues: tuple[TissueSpec, ...] = field(default_factory=default_tissues)
    skin_depth: tuple[int, int] = (10, 24)
    fat_thickness: tuple[int, int] = (40, 140)
    min_muscle: int = 48
    fascia_thickness: tuple[int, int] = (3, 6)
    fascia_count: tuple[int, int] = (1, 3)
    undulation_px: float = 4.0
    noise_floor: float = 0.02
    attenuation_db_per_row: float = 0.0
    envelope_sigma: float = 2.0
    log_alpha: float = 20.0
    seed: int = 0
    split: tuple[float, float, float] = (0.6, 0.2, 0.2)
    # optional second "patient" imaged at a shorter native height, padded on load
    alt_rows: int | None = None
    alt_fraction: float = 0.5

    def __post_init__(self):
        self.validate()

    def tissue(self, class_id: int) -> TissueSpec:
        return self.tissues[class_id - 1]

    def validate(self) -> None:
        if len(self.tissues) != 5 or [t.class_id for t in self.tissues] != [1, 2, 3, 4, 5]:
            raise PhantomConfigError("tissue table must list classes 1..5 in order")
        for t in self.tissues:
            if not 0 < t.carrier_mhz < self.fs_mhz / 2:
                raise PhantomConfigError(f"class {t.class_id}: carrier must lie in (0, fs/2)")
            if t.echogenicity < 0 or t.band_sigma_samples <= 0:
                raise PhantomConfigError(f"class {t.class_id}: bad echogenicity/bandwidth")
        for name in ("skin_depth", "fat_thickness", "fascia_thickness", "fascia_count"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise PhantomConfigError(f"{name} range must satisfy 1 <= lo <= hi")
        if self.envelope_sigma < 0:
            raise PhantomConfigError("envelope_sigma must be >= 0")
        need = self.min_rows()
        for r in (self.rows, self.alt_rows):
            if r is not None and r < need:
                raise PhantomConfigError(f"{r} rows cannot fit the layer depths (need >= {need})")
        if self.cols < 1:
            raise PhantomConfigError("cols must be >= 1")

    def min_rows(self) -> int:
        amp = int(np.ceil(self.undulation_px))
        return self.skin_depth[1] + self.fat_thickness[1] + 4 * amp + self.min_muscle

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "PhantomConfig":
        doc = dict(doc)
        if "tissues" in doc:
            doc["tissues"] = tuple(TissueSpec(**t) for t in doc["tissues"])
        for k in ("skin_depth", "fat_thickness", "fascia_thickness", "fascia_count", "split"):
            if k in doc:
                doc[k] = tuple(doc[k])
        try:
            return cls(**doc)
        except TypeError as exc:
            raise PhantomConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "PhantomConfig":
        return cls.from_json(json.loads(Path(path).read_text()))


def _wave(rng, cols: int, amp: float) -> np.ndarray:
    """Smooth lateral undulation of a boundary."""
    x = np.arange(cols)
    period = rng.uniform(1.0, 2.5) * max(cols, 2)
    return amp * np.sin(2 * np.pi * x / period + rng.uniform(0, 2 * np.pi))


def _place_bands(rng, lo: np.ndarray, hi: np.ndarray, count: int, thick: tuple[int, int], out, cls):
    """Draw ``count`` non-overlapping bands between boundary curves ``lo``/``hi``.

    Each band gets its own undulation around a flat mean depth, so band shape
    says nothing about which layer it belongs to.
    """
    top_mean, bot_mean = float(np.mean(lo)), float(np.mean(hi))
    rel = np.sort(rng.uniform(0.12, 0.88, size=count))
    for i in range(1, count):  # keep bands apart
        rel[i] = max(rel[i], rel[i - 1] + 0.12)
    rel = np.minimum(rel, 0.92)
    for r in rel:
        t = int(rng.integers(thick[0], thick[1] + 1))
        centre = top_mean + r * (bot_mean - top_mean) + _wave(rng, out.shape[1], 1.5)
        top = np.rint(centre - t / 2).astype(int)
        for x in range(out.shape[1]):
            a = max(top[x], int(np.ceil(lo[x])) + 1)
            b = min(top[x] + t, int(np.floor(hi[x])) - 1)
            out[a:b, x] = cls


def generate_layer_map(config: PhantomConfig, rng, rows: int | None = None) -> np.ndarray:
    """Skin, fat (with fat-fascia bands), muscle (with muscle-fascia bands)."""
    rows = config.rows if rows is None else rows
    if rows < config.min_rows():
        raise PhantomConfigError(f"{rows} rows cannot fit the layer depths (need >= {config.min_rows()})")
    cols, amp = config.cols, config.undulation_px
    skin = rng.integers(config.skin_depth[0], config.skin_depth[1] + 1) + amp + _wave(rng, cols, amp)
    fat = skin + rng.integers(config.fat_thickness[0], config.fat_thickness[1] + 1) + amp + _wave(rng, cols, amp)
    y = np.arange(rows)[:, None]
    label = np.full((rows, cols), 4, dtype=np.uint8)
    label[y < fat[None, :]] = 2
    label[y < skin[None, :]] = 1
    n_fat = int(rng.integers(config.fascia_count[0], config.fascia_count[1] + 1))
    n_mus = int(rng.integers(config.fascia_count[0], config.fascia_count[1] + 1))
    _place_bands(rng, skin, fat, n_fat, config.fascia_thickness, label, 3)
    _place_bands(rng, fat, np.full(cols, rows - 1.0), n_mus, config.fascia_thickness, label, 5)
    return label


def _baseband(white: np.ndarray, sigma: float, rows: int) -> np.ndarray:
    """Unit-power complex speckle: ``white`` low-passed axially by a Gaussian of width ``sigma``."""
    half = int(np.ceil(4 * sigma))
    t = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(t**2) / (2 * sigma**2))
    g /= np.sqrt(np.sum(g**2))
    margin = (white.shape[0] - rows) // 2
    win = white[margin - half : margin + rows + half]
    return fftconvolve(win, g[:, None], mode="valid", axes=0)


def synthesize_rf(label: np.ndarray, config: PhantomConfig, rng) -> np.ndarray:
    """Echogenicity-scaled band-limited scatter on a per-class carrier.

    One complex white scatterer field is shared by every class. Inside class
    ``c`` the RF is ``e_c * Re(b_c * exp(i theta))``, where ``b_c`` is that field
    low-passed to the class bandwidth and ``theta`` accumulates the class
    carrier down each column. For one class this is white noise filtered by a
    Gaussian-windowed cosine at its carrier. Sharing the field and keeping the
    phase continuous means equal-echogenicity neighbours join without a
    visible seam in the envelope.
    """
    label = np.asarray(label)
    if np.any(label == 0):
        raise ValueError("label map for synthesis must not contain padding (0)")
    rows, cols = label.shape
    margin = int(np.ceil(4 * max(t.band_sigma_samples for t in config.tissues)))
    shape = (rows + 2 * margin, cols)
    white = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
    carrier = np.zeros(6)
    for t in config.tissues:
        carrier[t.class_id] = t.carrier_mhz / config.fs_mhz
    theta = 2 * np.pi * np.cumsum(carrier[label], axis=0)
    rf = np.zeros((rows, cols), dtype=np.float64)
    cache = {}
    for t in config.tissues:
        mask = label == t.class_id
        if not mask.any() or t.echogenicity == 0:
            continue
        if t.band_sigma_samples not in cache:
            cache[t.band_sigma_samples] = _baseband(white, t.band_sigma_samples, rows)
        b = cache[t.band_sigma_samples]
        rf += t.echogenicity * mask * np.sqrt(2) * np.real(b * np.exp(1j * theta))
    if config.attenuation_db_per_row > 0:
        gain = 10 ** (-config.attenuation_db_per_row * np.arange(rows) / 20.0)
        rf *= gain[:, None]
    if config.noise_floor > 0:
        rf += config.noise_floor * rng.standard_normal((rows, cols))
    return rf.astype(np.float32)


def envelope_to_grey(rf, sigma: float = 2.0, alpha: float = 20.0) -> np.ndarray:
    """RMS envelope along depth, then log compression to [0, 1].

    The envelope is the square root of a Gaussian-weighted moving average of
    ``rf**2``. Squaring moves every carrier to twice its frequency, where the
    Gaussian removes it, so the envelope tracks echo strength and not carrier.
    ``sigma=0`` gives ``|rf|``.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    a = np.asarray(rf, dtype=np.float64)
    env = np.sqrt(gaussian_filter1d(a * a, sigma, axis=0, mode="nearest")) if sigma > 0 else np.abs(a)
    peak = env.max() if env.size else 0.0
    if peak <= 0:
        return np.zeros(env.shape, dtype=np.float32)
    grey = np.log1p(alpha * env) / np.log1p(alpha * peak)
    return np.clip(grey, 0.0, 1.0).astype(np.float32)


def generate_sample(config: PhantomConfig, rng, sid: str, patient: str = "phantom", rows: int | None = None) -> Sample:
    label = generate_layer_map(config, rng, rows)
    rf = synthesize_rf(label, config, rng)
    grey = envelope_to_grey(rf, config.envelope_sigma, config.log_alpha)
    return Sample(sid, patient, rf, grey, label, label.shape[0])


def generate_samples(config: PhantomConfig, count: int) -> list[Sample]:
    """``count`` samples; sample i uses the i-th child of the master seed."""
    children = np.random.SeedSequence(config.seed).spawn(count)
    out = []
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        rows, patient = config.rows, "A"
        if config.alt_rows is not None and rng.uniform() < config.alt_fraction:
            rows, patient = config.alt_rows, "B"
        out.append(generate_sample(config, rng, f"ph{i:05d}", patient, rows))
    return out


def generate_dataset(config: PhantomConfig, count: int, out_dir):
    samples = generate_samples(config, count)
    splits = assign_splits([s.id for s in samples], config.split)
    manifest = save_dataset(samples, splits, out_dir)
    (Path(out_dir) / "phantom_config.json").write_text(json.dumps(config.to_json(), indent=1) + "\n")
    return manifest


def with_overrides(config: PhantomConfig, **kw) -> PhantomConfig:
    return replace(config, **{k: v for k, v in kw.items() if v is not None})
