"""PSNR and SSIM on [0, 1] images, computed in float64."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor

PSNR_CAP = 99.0
SSIM_WINDOW = 8
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _arr(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)


def _psnr_from_mse(mse: float) -> float:
    if mse <= 0:
        return PSNR_CAP
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP)


def psnr(a, b) -> float:
    a, b = _arr(a), _arr(b)
    if a.shape != b.shape:
        raise ShapeError(f"psnr: shapes {a.shape} and {b.shape} differ")
    return _psnr_from_mse(float(np.mean((a - b) ** 2)))


def hole_psnr(a, b, m) -> float:
    """PSNR restricted to hole pixels (all channels) of ``m [H, W]``."""
    a, b = _arr(a), _arr(b)
    if a.shape != b.shape:
        raise ShapeError(f"hole_psnr: shapes {a.shape} and {b.shape} differ")
    sel = np.broadcast_to(np.asarray(m, dtype=bool), a.shape)
    if not sel.any():
        return PSNR_CAP
    return _psnr_from_mse(float(np.mean((a[sel] - b[sel]) ** 2)))


def ssim(a, b) -> float:
    """Mean SSIM over all 8x8 windows (stride 1) of the channel-mean grey images.

    Window statistics use uniform weights and population (1/64) variances.
    """
    a, b = _arr(a), _arr(b)
    if a.shape != b.shape:
        raise ShapeError(f"ssim: shapes {a.shape} and {b.shape} differ")
    ga = a.mean(axis=0) if a.ndim == 3 else a
    gb = b.mean(axis=0) if b.ndim == 3 else b
    if min(ga.shape) < SSIM_WINDOW:
        raise ValueError(f"ssim: image {ga.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    wa = sliding_window_view(ga, (SSIM_WINDOW, SSIM_WINDOW))
    wb = sliding_window_view(gb, (SSIM_WINDOW, SSIM_WINDOW))
    mu_a = wa.mean(axis=(-2, -1))
    mu_b = wb.mean(axis=(-2, -1))
    var_a = (wa * wa).mean(axis=(-2, -1)) - mu_a ** 2
    var_b = (wb * wb).mean(axis=(-2, -1)) - mu_b ** 2
    cov = (wa * wb).mean(axis=(-2, -1)) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(num / den))
