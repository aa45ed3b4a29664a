"""PSNR and single-scale SSIM."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
K1, K2 = 0.01, 0.03


@dataclass
class MetricReport:
    name: str
    psnr_db: float
    ssim: float
    pixels: int
    max_val: float = 1.0

    def line(self) -> str:
        return f"{self.name}\t{format_psnr(self.psnr_db)}\t{self.ssim:.6f}"


def format_psnr(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.4f}"


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"metric inputs differ in shape: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b, max_val: float = 1.0, quantize: bool = False) -> float:
    """10 log10(max^2 / MSE); +inf for identical inputs.

    ``quantize`` rounds both [0, 1] images to 8 bits and scores them on
    the 0..255 scale.
    """
    a, b = _pair(a, b)
    if quantize:
        a = np.rint(np.clip(a, 0, 1) * 255.0)
        b = np.rint(np.clip(b, 0, 1) * 255.0)
        max_val = 255.0
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val * max_val / err)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    k = len(taps)
    h, w = img.shape[-2:]
    rows = sum(t * img[..., i:i + h - k + 1, :] for i, t in enumerate(taps))
    return sum(t * rows[..., :, j:j + w - k + 1] for j, t in enumerate(taps))


def ssim_map(a, b, data_range: float = 1.0) -> np.ndarray:
    a, b = _pair(a, b)
    if a.ndim < 2 or min(a.shape[-2:]) < SSIM_WINDOW:
        raise DimensionError(f"ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape}")
    taps = gaussian_window()
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, taps), _filter_valid(b, taps)
    var_a = _filter_valid(a * a, taps) - mu_a * mu_a
    var_b = _filter_valid(b * b, taps) - mu_b * mu_b
    cov = _filter_valid(a * b, taps) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5) of the last two axes."""
    return float(np.mean(ssim_map(a, b, data_range)))


def evaluate(name: str, pred, target, max_val: float = 1.0) -> MetricReport:
    pred, target = _pair(pred, target)
    return MetricReport(name, psnr(pred, target, max_val), ssim(pred, target, max_val), int(pred.size), max_val)
