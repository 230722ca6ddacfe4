"""Padding, normalisation and augmentation that keep RF waveforms continuous.

Crop, warp and resampling augmentations are deliberately absent: they break
the A-scan waveforms the RF branches analyse.
"""
from __future__ import annotations

import itertools
import logging

import numpy as np

from .data import Sample

log = logging.getLogger(__name__)

DEFAULT_SCALES = (0.8, 1.0, 1.1)
SCALE_RANGE = (0.8, 1.1)


def deepest_zero_crossing(ascan) -> int | None:
    """Largest index z with ascan[z] == 0 or a sign change between z-1 and z."""
    a = np.asarray(ascan, dtype=np.float64)
    if a.ndim != 1 or a.size < 2:
        raise ValueError("A-scan must be a vector of length >= 2")
    hits = (a == 0.0)
    hits[1:] |= (a[:-1] * a[1:]) < 0.0
    idx = np.flatnonzero(hits)
    return int(idx[-1]) if idx.size else None


def pad_ascan(ascan, target: int) -> np.ndarray:
    """Extend an A-scan to ``target`` samples by odd reflection.

    The signal is point-reflected about its deepest zero crossing z
    (``q[k] = -a[2z - k]`` for ``k > z``), overwriting whatever followed z.
    If that is still too short the rule is repeated on the result. When the
    signal never crosses zero the rest is zero-filled; when a repeat would not
    advance past the previous pivot, the result is mirrored (even reflection)
    at its end instead, which reuses the existing sample differences.
    """
    a = np.asarray(ascan)
    n = a.shape[0]
    if target < n:
        raise ValueError(f"target length {target} shorter than A-scan ({n})")
    if target == n:
        return a.copy()
    out = np.zeros(target, dtype=a.dtype)
    cur = a.copy()
    last_pivot = -1
    while True:
        z = deepest_zero_crossing(cur) if cur.size >= 2 else None
        if z is None:
            log.warning("A-scan never crosses zero; zero-filling %d samples", target - cur.size)
            m = min(cur.size, target)
            out[:m] = cur[:m]
            return out
        if z <= last_pivot:
            return _mirror_extend(cur, target)
        m = min(target, 2 * z + 1)
        nxt = np.empty(m, dtype=a.dtype)
        nxt[: z + 1] = cur[: z + 1]
        k = np.arange(z + 1, m)
        nxt[z + 1 :] = -cur[2 * z - k]
        if m == target:
            return nxt
        cur, last_pivot = nxt, z


def _mirror_extend(a: np.ndarray, target: int) -> np.ndarray:
    # ping-pong extension a0..am, am-1..a0, a1..am, ...
    period = np.concatenate([a, a[-2:0:-1]]) if a.size > 1 else a
    reps = -(-(target - 1) // period.size) + 1
    tiled = np.tile(period, reps)
    return tiled[:target].copy()


def pad_sample(sample: Sample, target_rows: int) -> Sample:
    rows, cols = sample.shape
    if target_rows < rows:
        raise ValueError(f"target_rows {target_rows} smaller than sample rows {rows}")
    if target_rows == rows:
        return sample
    extra = target_rows - rows
    grey = np.pad(sample.grey, ((0, extra), (0, 0)))
    label = np.pad(sample.label, ((0, extra), (0, 0)))
    rf = np.stack([pad_ascan(sample.rf[:, j], target_rows) for j in range(cols)], axis=1)
    return sample.with_(rf=rf, grey=grey, label=label)


def normalize_sample(sample: Sample) -> Sample:
    """Scale RF by its largest magnitude so it lies in [-1, 1]."""
    peak = float(np.max(np.abs(sample.rf)))
    if peak == 0.0:
        return sample
    return sample.with_(rf=(sample.rf / np.float32(peak)).astype(np.float32))


def augment_sample(sample: Sample, flip: bool, scale: float, scale_range=SCALE_RANGE) -> Sample:
    lo, hi = scale_range
    if not lo <= scale <= hi:
        raise ValueError(f"scale {scale} outside configured range [{lo}, {hi}]")
    rf, grey, label = sample.rf, sample.grey, sample.label
    if flip:
        rf, grey, label = rf[:, ::-1], grey[:, ::-1], label[:, ::-1]
    if scale != 1.0:
        s = np.float32(scale)
        rf = rf * s
        grey = np.clip(grey * s, 0.0, 1.0)
    return sample.with_(
        rf=np.ascontiguousarray(rf), grey=np.ascontiguousarray(grey), label=np.ascontiguousarray(label)
    )


def expand_dataset(samples, scales=DEFAULT_SCALES, flips=(False, True)) -> list[Sample]:
    """Every (sample, flip, scale) combination; ids get a variant suffix."""
    scales = list(scales)
    if not scales:
        raise ValueError("scales must be non-empty")
    out = []
    for s, flip, scale in itertools.product(samples, flips, scales):
        v = augment_sample(s, flip, scale)
        out.append(v.with_(id=f"{s.id}~{'f' if flip else 'n'}{scale:g}"))
    return out


def prepare_sample(sample: Sample, target_rows: int) -> Sample:
    """Normalise then pad; the order is fixed."""
    return pad_sample(normalize_sample(sample), target_rows)
