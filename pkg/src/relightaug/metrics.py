"""SSIM, temporal SSIM and PSNR.

SSIM is computed on Rec. 709 luma of the display (sRGB-encoded) image,
clamped to [0, 1], with an 11x11 Gaussian window (sigma 1.5) evaluated at
valid window positions only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionMismatchError, ValidationError
from .imagery import srgb_encode

PSNR_CAP_DB = 99.0
LUMA_709 = np.array([0.2126, 0.7152, 0.0722])


@dataclass(frozen=True)
class SsimParams:
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self):
        if self.window < 1 or self.window % 2 == 0:
            raise ValidationError("window must be a positive odd size")
        if not (self.k1 > 0 and self.k2 > 0 and self.sigma > 0):
            raise ValidationError("k1, k2 and sigma must be positive")

    def kernel_1d(self) -> np.ndarray:
        x = np.arange(self.window) - (self.window - 1) / 2.0
        g = np.exp(-(x * x) / (2.0 * self.sigma ** 2))
        return g / g.sum()


def to_luma(img) -> np.ndarray:
    """Linear image to clamped display luma in [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    enc = srgb_encode(np.clip(img, 0.0, 1.0))
    if enc.ndim == 3:
        enc = enc @ LUMA_709
    return np.clip(enc, 0.0, 1.0)


def _filter_valid(img, g):
    rows = sliding_window_view(img, g.size, axis=1) @ g
    return sliding_window_view(rows, g.size, axis=0) @ g


def ssim_map(a, b, params: SsimParams | None = None) -> np.ndarray:
    params = params or SsimParams()
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"image shapes differ: {a.shape} vs {b.shape}")
    if min(a.shape[:2]) < params.window:
        raise ValidationError(f"images of size {a.shape[1]}x{a.shape[0]} are smaller than the {params.window}px window")
    x = to_luma(a)
    y = to_luma(b)
    g = params.kernel_1d()
    c1 = (params.k1 * params.dynamic_range) ** 2
    c2 = (params.k2 * params.dynamic_range) ** 2
    mu_x = _filter_valid(x, g)
    mu_y = _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mu_x * mu_x
    syy = _filter_valid(y * y, g) - mu_y * mu_y
    sxy = _filter_valid(x * y, g) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * sxy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2)
    return num / den


def ssim(a, b, params: SsimParams | None = None) -> float:
    return float(np.mean(ssim_map(a, b, params)))


def temporal_ssim(seq, params: SsimParams | None = None) -> float:
    """Mean SSIM over consecutive frame pairs."""
    seq = list(seq)
    if len(seq) < 2:
        raise ValidationError("temporal SSIM needs at least two frames")
    return float(np.mean([ssim(seq[t], seq[t + 1], params) for t in range(len(seq) - 1)]))


def psnr(a, b, peak: float = 1.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(min(PSNR_CAP_DB, 10.0 * np.log10(peak * peak / mse)))
