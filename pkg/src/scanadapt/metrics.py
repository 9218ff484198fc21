"""Magnitude-image quality metrics on central crops."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, UndefinedMetricError
from .mrimodel import center_slice

__all__ = [
    "MetricReport",
    "central_crop",
    "default_crop",
    "evaluate",
    "nrmse",
    "psnr",
    "ssim",
]

SSIM_WINDOW = 7


def default_crop(height: int, width: int) -> tuple[int, int]:
    """320x320 when the image allows it, else the largest centered square."""
    if height >= 320 and width >= 320:
        return 320, 320
    side = min(height, width)
    return side, side


def central_crop(img: np.ndarray, h: int, w: int) -> np.ndarray:
    """Centered ``h x w`` window, using the same centering as k-space blocks."""
    img = np.asarray(img)
    if h > img.shape[-2] or w > img.shape[-1] or h < 1 or w < 1:
        raise DimensionError(f"crop {h}x{w} does not fit image {img.shape[-2:]}")
    return img[..., center_slice(img.shape[-2], h), center_slice(img.shape[-1], w)]


def _magnitudes(ref, est):
    ref = np.abs(np.asarray(ref))
    est = np.abs(np.asarray(est))
    if ref.shape != est.shape:
        raise DimensionError(f"shape mismatch: {ref.shape} vs {est.shape}")
    return ref, est


def nrmse(ref, est) -> float:
    """``|| |est| - |ref| ||_2 / || |ref| ||_2``."""
    ref, est = _magnitudes(ref, est)
    denom = np.linalg.norm(ref)
    if denom == 0:
        raise UndefinedMetricError("NRMSE undefined for an all-zero reference")
    return float(np.linalg.norm(est - ref) / denom)


def psnr(ref, est) -> float:
    """PSNR in dB with peak ``max|ref|``; ``inf`` for a perfect match."""
    ref, est = _magnitudes(ref, est)
    peak = ref.max()
    if peak == 0:
        raise UndefinedMetricError("PSNR undefined for an all-zero reference")
    rmse = math.sqrt(float(np.mean((est - ref) ** 2)))
    if rmse == 0:
        return math.inf
    return 20.0 * math.log10(peak / rmse)


def ssim(ref, est, data_range: float | None = None, win_size: int = SSIM_WINDOW) -> float:
    """Mean SSIM over all full ``win_size x win_size`` windows.

    Local statistics use a uniform window with unbiased (N-1) covariance
    normalisation, as in scikit-image. ``data_range`` defaults to
    ``max|ref|``; pass it explicitly to make the metric symmetric.
    """
    ref, est = _magnitudes(ref, est)
    if ref.shape[0] < win_size or ref.shape[1] < win_size:
        raise DimensionError(f"image {ref.shape} smaller than {win_size}x{win_size} window")
    L = ref.max() if data_range is None else data_range
    if L == 0:
        raise UndefinedMetricError("SSIM undefined with zero data range")
    c1 = (0.01 * L) ** 2
    c2 = (0.03 * L) ** 2
    n = win_size * win_size
    cov_norm = n / (n - 1)

    wa = sliding_window_view(ref, (win_size, win_size))
    wb = sliding_window_view(est, (win_size, win_size))
    mu_a = wa.mean(axis=(-2, -1))
    mu_b = wb.mean(axis=(-2, -1))
    da = wa - mu_a[..., None, None]
    db = wb - mu_b[..., None, None]
    var_a = cov_norm * (da * da).mean(axis=(-2, -1))
    var_b = cov_norm * (db * db).mean(axis=(-2, -1))
    cov = cov_norm * (da * db).mean(axis=(-2, -1))

    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass(frozen=True)
class MetricReport:
    nrmse: float
    ssim: float
    psnr_db: float
    crop: tuple[int, int]


def evaluate(ref, est, crop: tuple[int, int] | None = None) -> MetricReport:
    """All three metrics on the central crop (default per :func:`default_crop`)."""
    ref = np.asarray(ref)
    est = np.asarray(est)
    if crop is None:
        crop = default_crop(*ref.shape[-2:])
    r = central_crop(ref, *crop)
    e = central_crop(est, *crop)
    return MetricReport(nrmse(r, e), ssim(r, e), psnr(r, e), tuple(crop))
