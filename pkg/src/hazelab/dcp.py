"""Dark channel prior dehazing, the classical reference baseline.

Pipeline: dark channel (per-pixel RGB min, then a square minimum filter),
airlight from the brightest 0.1% dark-channel pixels, transmission
t = 1 - omega * darkchannel(I/A) refined with a guided filter, and the
scattering model inverted with a transmission floor.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import minimum_filter

from .errors import DataError


def dark_channel(image: np.ndarray, patch: int = 15) -> np.ndarray:
    dc = image.min(axis=2)
    return minimum_filter(dc, size=patch, mode="nearest")


def estimate_airlight(image: np.ndarray, dc: np.ndarray) -> np.ndarray:
    """Per-channel mean of the hazy pixels at the top 0.1% dark-channel values."""
    flat = dc.reshape(-1)
    k = max(1, int(round(0.001 * flat.size)))
    idx = np.argpartition(flat, -k)[-k:]
    pixels = image.reshape(-1, 3)[idx]
    return pixels.mean(axis=0).astype(np.float32)


def _box(img: np.ndarray, radius: int) -> np.ndarray:
    """Box sum via integral image; pair with _box(ones) for edge normalization."""
    h, w = img.shape[:2]
    acc = np.zeros((h + 1, w + 1) + img.shape[2:], dtype=np.float64)
    acc[1:, 1:] = np.cumsum(np.cumsum(img, axis=0), axis=1)
    r = radius
    y0 = np.clip(np.arange(h) - r, 0, h)
    y1 = np.clip(np.arange(h) + r + 1, 0, h)
    x0 = np.clip(np.arange(w) - r, 0, w)
    x1 = np.clip(np.arange(w) + r + 1, 0, w)
    return (
        acc[y1[:, None], x1[None, :]]
        - acc[y0[:, None], x1[None, :]]
        - acc[y1[:, None], x0[None, :]]
        + acc[y0[:, None], x0[None, :]]
    )


def guided_filter(guide: np.ndarray, src: np.ndarray, radius: int, eps: float) -> np.ndarray:
    """Edge-preserving smoothing of `src` steered by `guide` (both HxW floats)."""
    ones = _box(np.ones_like(guide, dtype=np.float64), radius)
    mean_g = _box(guide, radius) / ones
    mean_s = _box(src, radius) / ones
    corr_gg = _box(guide * guide, radius) / ones
    corr_gs = _box(guide * src, radius) / ones
    var_g = corr_gg - mean_g * mean_g
    cov_gs = corr_gs - mean_g * mean_s
    a = cov_gs / (var_g + eps)
    b = mean_s - a * mean_g
    mean_a = _box(a, radius) / ones
    mean_b = _box(b, radius) / ones
    return (mean_a * guide + mean_b).astype(np.float32)


def dcp_dehaze(
    hazy: np.ndarray,
    omega: float = 0.95,
    patch: int = 15,
    t_floor: float = 0.1,
    guided_radius: int = 40,
    guided_eps: float = 1e-3,
) -> np.ndarray:
    if hazy.ndim != 3 or hazy.shape[2] != 3:
        raise DataError(f"dcp_dehaze expects an HxWx3 image, got shape {hazy.shape}")
    if hazy.min() < 0 or hazy.max() > 1:
        raise DataError("dcp_dehaze expects values in [0,1]")
    img = hazy.astype(np.float32)
    dc = dark_channel(img, patch)
    airlight = estimate_airlight(img, dc)
    a_safe = np.maximum(airlight, 1e-3)
    t = 1.0 - omega * dark_channel(img / a_safe[None, None, :], patch)
    gray = img.mean(axis=2)
    t = guided_filter(gray, t.astype(np.float64), guided_radius, guided_eps)
    t = np.clip(t, t_floor, 1.0)[:, :, None]
    out = (img - airlight[None, None, :]) / t + airlight[None, None, :]
    return np.clip(out, 0.0, 1.0).astype(np.float32)
