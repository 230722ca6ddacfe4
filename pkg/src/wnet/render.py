"""Colour rasters: class overlays, RF false colour, activation maps, Gabor sheets."""
from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np

from .data import PALETTE, _write_pgm_bytes


def write_ppm(rgb: np.ndarray, path) -> None:
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    rows, cols, _ = rgb.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{cols} {rows}\n255\n".encode("ascii"))
        f.write(rgb.tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    m = re.match(rb"P6\s+(\d+)\s+(\d+)\s+255\s", data)
    if not m:
        raise ValueError(f"{path}: not a binary PPM with maxval 255")
    cols, rows = int(m.group(1)), int(m.group(2))
    return np.frombuffer(data, dtype=np.uint8, count=rows * cols * 3, offset=m.end()).reshape(rows, cols, 3)


def grey_rgb(grey) -> np.ndarray:
    g = np.rint(np.clip(np.asarray(grey, dtype=np.float64), 0, 1) * 255).astype(np.uint8)
    return np.repeat(g[..., None], 3, axis=-1)


def render_overlay(grey, labels, palette=PALETTE, alpha: float = 0.5) -> np.ndarray:
    """Blend class colours over the grey image; label 0 stays plain grey."""
    labels = np.asarray(labels)
    if labels.shape != np.shape(grey):
        raise ValueError(f"grey {np.shape(grey)} and labels {labels.shape} differ in shape")
    palette = np.asarray(palette)
    if labels.size and labels.max() > len(palette):
        raise ValueError(f"label {int(labels.max())} has no palette colour ({len(palette)} colours)")
    base = grey_rgb(grey)
    out = base.copy()
    mask = labels > 0
    colour = palette[labels[mask].astype(int) - 1].astype(np.float64)
    out[mask] = np.rint((1 - alpha) * base[mask] + alpha * colour).astype(np.uint8)
    return out


def rf_false_color(rf) -> np.ndarray:
    """Diverging map: negative blue, zero white, positive red; extremes at max |rf|."""
    a = np.asarray(rf, dtype=np.float64)
    peak = np.max(np.abs(a)) if a.size else 0.0
    v = a / peak if peak > 0 else np.zeros_like(a)
    fade = np.rint(255 * (1 - np.abs(v))).astype(np.uint8)
    out = np.empty(a.shape + (3,), dtype=np.uint8)
    out[..., 0] = np.where(v >= 0, 255, fade)
    out[..., 1] = fade
    out[..., 2] = np.where(v <= 0, 255, fade)
    return out


def heat_rgb(v: np.ndarray) -> np.ndarray:
    """Black-red-yellow-white ramp for values in [0, 1]."""
    v = np.clip(v, 0, 1)
    r = np.clip(3 * v, 0, 1)
    g = np.clip(3 * v - 1, 0, 1)
    b = np.clip(3 * v - 2, 0, 1)
    return np.rint(np.stack([r, g, b], axis=-1) * 255).astype(np.uint8)


def minmax(a: np.ndarray) -> np.ndarray:
    lo, hi = float(a.min()), float(a.max())
    if hi <= lo:
        return np.zeros_like(a, dtype=np.float64)
    return (a - lo) / (hi - lo)


def activation_overlay(grey, activation, alpha: float = 0.5) -> np.ndarray:
    """Channel-mean activation, min-max normalised and upsampled, over the grey image."""
    act = np.asarray(activation, dtype=np.float64)
    if act.ndim == 3:
        act = act.mean(axis=0)
    h, w = np.shape(grey)
    fy, fx = h // act.shape[0], w // act.shape[1]
    act = np.kron(minmax(act), np.ones((fy, fx)))
    blended = (1 - alpha) * grey_rgb(grey) + alpha * heat_rgb(act)
    return np.rint(blended).astype(np.uint8)


BLOCK_ALIASES = {f"conv{i}": f"block{i}" for i in range(1, 5)}
BLOCK_ALIASES.update({f"conv-block-{i}": f"block{i}" for i in range(1, 5)})


def dump_activations(model, sample, block: str, out_dir) -> list[Path]:
    """One overlay per encoder branch for the named block of ``model``."""
    from .network import as_batch

    graph = model.graph
    name = BLOCK_ALIASES.get(block, block)
    valid = graph.block_names()
    if name not in valid:
        raise ValueError(f"unknown block {block!r}; valid names: {', '.join(valid)}")
    targets = {p: graph.block_output(p, name) for p in graph.prefixes}
    dtype = next(model.parameters()).dtype
    model.eval()
    import torch

    with torch.no_grad():
        _, _, kept = model.run(as_batch(sample.grey, dtype), as_batch(sample.rf, dtype), keep=set(targets.values()))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for prefix, node in targets.items():
        act = kept[node][0].numpy()
        path = out / f"{name}_{prefix}.ppm"
        write_ppm(activation_overlay(sample.grey, act), path)
        paths.append(path)
    return paths


def kernel_sheet(kernels, scale: int = 6, gap: int = 1) -> np.ndarray:
    """Kernels side by side as bytes, zero at mid-grey."""
    h, w = kernels[0].shape
    sheet = np.full((h * scale, len(kernels) * (w * scale + gap) - gap), 128, dtype=np.uint8)
    for i, k in enumerate(kernels):
        peak = np.max(np.abs(k)) or 1.0
        tile = np.rint(127.5 + 127.5 * k / peak).clip(0, 255).astype(np.uint8)
        x0 = i * (w * scale + gap)
        sheet[:, x0 : x0 + w * scale] = np.kron(tile, np.ones((scale, scale), dtype=np.uint8))
    return sheet


def dump_gabor_banks(out_dir, n_kernels: int = 4) -> list[Path]:
    from . import gabor

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table, paths = [], []
    for branch in gabor.BRANCHES:
        specs = gabor.bank_specs(branch, n_kernels)
        bank = gabor.build_branch_bank(branch, n_kernels)
        path = out / f"bank_{branch}.pgm"
        _write_pgm_bytes(kernel_sheet(bank), path)
        paths.append(path)
        for i, (s, k) in enumerate(zip(specs, bank)):
            table.append(
                {"branch": branch, "index": i, "freq": s.freq, "phase": s.phase,
                 "sigma_x": s.sigma_x, "sigma_y": s.sigma_y, "shape": list(k.shape)}
            )
    (out / "banks.json").write_text(json.dumps(table, indent=1) + "\n")
    return paths
