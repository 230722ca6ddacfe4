"""Vertically oscillating Gabor kernels for seeding the RF encoder branches."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FREQ_RANGE = (0.1, 0.85)

# branch id -> (sigma_x, sigma_y, support in sigmas); sigma_x runs along depth (rows)
BRANCHES = {
    "7x3": (3.0, 1.0, 1.0),
    "11x3": (5.0, 1.0, 2.0),  # 11x3 Gabor carried out to 2 sigma -> 21x5 kernel
    "21x5": (10.0, 2.0, 1.0),
    "51x9": (25.0, 4.0, 1.0),
}


@dataclass(frozen=True)
class GaborSpec:
    sigma_x: float
    sigma_y: float
    freq: float
    phase: float = 0.0
    support_sigmas: float = 1.0

    def __post_init__(self):
        if self.sigma_x <= 0 or self.sigma_y <= 0:
            raise ValueError("sigmas must be positive")
        lo, hi = FREQ_RANGE
        if not lo - 1e-12 <= self.freq <= hi + 1e-12:
            raise ValueError(f"freq {self.freq} outside [{lo}, {hi}]")
        if self.support_sigmas < 1:
            raise ValueError("support_sigmas must be >= 1")

    @property
    def half_size(self) -> tuple[int, int]:
        return (
            int(round(self.support_sigmas * self.sigma_x)),
            int(round(self.support_sigmas * self.sigma_y)),
        )

    @property
    def shape(self) -> tuple[int, int]:
        hu, hv = self.half_size
        return 2 * hu + 1, 2 * hv + 1


def raw_gabor(spec: GaborSpec) -> np.ndarray:
    """Gaussian envelope times cosine carrier along rows, no normalisation."""
    hu, hv = spec.half_size
    u = np.arange(-hu, hu + 1, dtype=np.float64)[:, None]
    v = np.arange(-hv, hv + 1, dtype=np.float64)[None, :]
    envelope = np.exp(-(u**2) / (2 * spec.sigma_x**2) - v**2 / (2 * spec.sigma_y**2))
    return envelope * np.cos(2 * np.pi * spec.freq * u + spec.phase)


def _zero_mean_unit_norm(k: np.ndarray) -> np.ndarray:
    k = k - k.mean()
    norm = np.linalg.norm(k)
    return k / norm if norm > 0 else k


def gabor_kernel(spec: GaborSpec) -> np.ndarray:
    """Zero-mean, unit-L2-norm Gabor kernel of shape ``spec.shape``."""
    return _zero_mean_unit_norm(raw_gabor(spec))


def embed_kernel(spec: GaborSpec) -> np.ndarray:
    """Carry a sigma_x=5, sigma_y=1 Gabor out to two sigmas (21x5 kernel)."""
    if (spec.sigma_x, spec.sigma_y) != (5.0, 1.0):
        raise ValueError("embed_kernel expects the sigma_x=5, sigma_y=1 family")
    wide = GaborSpec(spec.sigma_x, spec.sigma_y, spec.freq, spec.phase, support_sigmas=2.0)
    k = gabor_kernel(wide)
    if k.shape != (21, 5):
        raise RuntimeError(f"embedded kernel has shape {k.shape}, expected (21, 5)")
    return k


def bank_frequencies(n_kernels: int) -> np.ndarray:
    return np.linspace(FREQ_RANGE[0], FREQ_RANGE[1], n_kernels)


def bank_specs(branch: str, n_kernels: int = 4) -> list[GaborSpec]:
    if branch not in BRANCHES:
        raise KeyError(f"unknown branch {branch!r}; expected one of {sorted(BRANCHES)}")
    if n_kernels < 2:
        raise ValueError("a bank needs at least 2 kernels")
    sx, sy, support = BRANCHES[branch]
    return [
        GaborSpec(sx, sy, float(f), 0.0 if i % 2 == 0 else np.pi / 2, support)
        for i, f in enumerate(bank_frequencies(n_kernels))
    ]


def build_branch_bank(branch: str, n_kernels: int = 4) -> list[np.ndarray]:
    specs = bank_specs(branch, n_kernels)
    if branch == "11x3":
        return [embed_kernel(s) for s in specs]
    return [gabor_kernel(s) for s in specs]


def build_all_banks(n_kernels: int = 4) -> dict[str, list[np.ndarray]]:
    return {b: build_branch_bank(b, n_kernels) for b in BRANCHES}


def kernel_shape(branch: str) -> tuple[int, int]:
    sx, sy, support = BRANCHES[branch]
    return GaborSpec(sx, sy, FREQ_RANGE[0], 0.0, support).shape


def mhz_to_normalized(mhz: float, fs_mhz: float) -> float:
    """Carrier in MHz to cycles per sample at axial sampling rate ``fs_mhz``."""
    return mhz / fs_mhz


def dominant_bin(column) -> np.ndarray:
    """Full-length DFT magnitude of a kernel column."""
    return np.abs(np.fft.fft(np.asarray(column, dtype=np.float64)))


class InitError(ValueError):
    pass


def init_rf_branch_weights(graph, params, banks, blocks=(1, 2)):
    """Seed the convs of RF-branch blocks 1-2 by cycling through each branch's bank.

    Output channel ``o`` gets ``bank[o % len(bank)]`` on input channel 0 and the
    same pattern divided by the layer fan-in on every other input channel.
    Returns a new parameter set; other entries are shared, not copied.
    """
    import torch

    out = dict(params)
    for branch, bank in banks.items():
        prefix = f"rf{branch}"
        for i in blocks:
            for j in (1, 2):
                name = f"{prefix}.block{i}.conv{j}"
                if name not in graph:
                    continue
                key = f"{name}.weight"
                w = params[key]
                n_out, n_in, kh, kw = w.shape
                for k in bank:
                    if k.shape != (kh, kw):
                        raise InitError(f"layer {name}: bank kernel {k.shape} does not fit weight {(kh, kw)}")
                fan_in = n_in * kh * kw
                new = torch.empty_like(w)
                for o in range(n_out):
                    pattern = torch.as_tensor(bank[o % len(bank)], dtype=w.dtype)
                    new[o, 0] = pattern
                    if n_in > 1:
                        new[o, 1:] = pattern / fan_in
                out[key] = new
    return out
