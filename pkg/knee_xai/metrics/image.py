"""Reconstruction quality: MSE, PSNR and Gaussian-window SSIM."""
from __future__ import annotations
import math
from typing import Optional

import numpy as np
from scipy.signal import convolve2d

from ..core.errors import ShapeError
from ..core.schemas import SsimParams


def _pair(reference: np.ndarray, test: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    reference = np.asarray(reference, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if reference.shape != test.shape:
        raise ShapeError(f"Image extents differ: {reference.shape} vs {test.shape}")
    return reference, test


def mse(reference: np.ndarray, test: np.ndarray) -> float:
    reference, test = _pair(reference, test)
    return float(np.mean((reference - test) ** 2))


def psnr(reference: np.ndarray, test: np.ndarray, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE) in dB; identical images give math.inf."""
    if peak <= 0:
        raise ValueError(f"peak must be positive, got {peak}")
    error = mse(reference, test)
    if error == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / error)


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    """Normalized size x size Gaussian weights."""
    half = (size - 1) / 2.0
    y, x = np.ogrid[-half:half + 1, -half:half + 1]
    window = np.exp(-(x * x + y * y) / (2.0 * sigma * sigma))
    return window / window.sum()


def _filter(image: np.ndarray, window: np.ndarray) -> np.ndarray:
    # the window is symmetric, so convolution equals correlation
    return convolve2d(image, window, mode="valid")


def ssim_map(reference: np.ndarray, test: np.ndarray, params: Optional[SsimParams] = None) -> np.ndarray:
    """Per-window SSIM over every fully contained window position of a 2-D pair."""
    params = params or SsimParams()
    x, y = _pair(reference, test)
    if x.ndim != 2:
        raise ShapeError(f"ssim expects 2-D images, got {x.shape}")
    if min(x.shape) < params.window_size:
        raise ShapeError(f"Image {x.shape} is smaller than the {params.window_size}-pixel window")
    window = gaussian_window(params.window_size, params.window_sigma)
    mu_x, mu_y = _filter(x, window), _filter(y, window)
    mu_xx, mu_yy, mu_xy = mu_x * mu_x, mu_y * mu_y, mu_x * mu_y
    var_x = _filter(x * x, window) - mu_xx
    var_y = _filter(y * y, window) - mu_yy
    cov = _filter(x * y, window) - mu_xy
    c1, c2 = params.c1, params.c2
    return ((2 * mu_xy + c1) * (2 * cov + c2)) / ((mu_xx + mu_yy + c1) * (var_x + var_y + c2))


def ssim(reference: np.ndarray, test: np.ndarray, params: Optional[SsimParams] = None) -> float:
    return float(ssim_map(reference, test, params).mean())


def volume_psnr(reference: np.ndarray, test: np.ndarray, peak: float = 1.0) -> list[float]:
    """Per-slice PSNR of two (s, H, W) volumes."""
    reference, test = _pair(reference, test)
    return [psnr(r, t, peak) for r, t in zip(reference, test)]


def volume_ssim(reference: np.ndarray, test: np.ndarray, params: Optional[SsimParams] = None) -> list[float]:
    reference, test = _pair(reference, test)
    return [ssim(r, t, params) for r, t in zip(reference, test)]
