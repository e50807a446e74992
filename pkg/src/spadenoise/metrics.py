"""PSNR and SSIM."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import convolve2d

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """``10 log10(peak^2 / MSE)`` in dB; identical inputs give ``inf``."""
    if a.shape != b.shape:
        raise ValueError(f"psnr needs equal shapes, got {a.shape} and {b.shape}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim_map(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> np.ndarray:
    """Local SSIM over valid 11x11 Gaussian-weighted windows of two 2-D images."""
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"ssim_map needs two equal 2-D images, got {a.shape} and {b.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"image {a.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    win = gaussian_window()
    filt = lambda x: convolve2d(x, win, mode="valid")
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a * mu_a
    var_b = filt(b * b) - mu_b * mu_b
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Mean SSIM; ``C x H x W`` inputs are averaged over channels."""
    if a.shape != b.shape:
        raise ValueError(f"ssim needs equal shapes, got {a.shape} and {b.shape}")
    if a.ndim == 2:
        return float(ssim_map(a, b, peak).mean())
    return float(np.mean([ssim_map(x, y, peak).mean() for x, y in zip(a, b)]))


@dataclass
class MetricReport:
    names: list[str] = field(default_factory=list)
    psnr: list[float] = field(default_factory=list)
    ssim: list[float] = field(default_factory=list)

    def add(self, name: str, a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> None:
        self.names.append(name)
        self.psnr.append(psnr(a, b, peak))
        self.ssim.append(ssim(a, b, peak))

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr)) if self.psnr else math.nan

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim)) if self.ssim else math.nan

    def to_text(self) -> str:
        lines = [f"{'image':24s} {'PSNR (dB)':>10s} {'SSIM':>8s}"]
        for n, p, s in zip(self.names, self.psnr, self.ssim):
            lines.append(f"{n:24s} {p:10.3f} {s:8.4f}")
        lines.append(f"{'mean':24s} {self.mean_psnr:10.3f} {self.mean_ssim:8.4f}")
        return "\n".join(lines)

    def to_kv(self) -> str:
        lines = [f"image={n} psnr={p!r} ssim={s!r}" for n, p, s in zip(self.names, self.psnr, self.ssim)]
        lines.append(f"count={len(self.names)} mean_psnr={self.mean_psnr!r} mean_ssim={self.mean_ssim!r}")
        return "\n".join(lines)
