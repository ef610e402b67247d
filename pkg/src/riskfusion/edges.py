"""Canny edge detection on grayscale patches."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

KERNEL_SIZE = 5


def gaussian_kernel(size: int = KERNEL_SIZE, sigma: float = 1.4) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T


def gradients(image: np.ndarray, sigma: float = 1.4) -> tuple[np.ndarray, np.ndarray]:
    smooth = ndimage.correlate(image, gaussian_kernel(KERNEL_SIZE, sigma), mode="nearest")
    gx = ndimage.correlate(smooth, SOBEL_X, mode="nearest")
    gy = ndimage.correlate(smooth, SOBEL_Y, mode="nearest")
    return gx, gy


def non_maximum_suppression(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Keep pixels that are maximal along the quantised gradient direction.

    A pixel must be >= its backward neighbour and > its forward neighbour,
    which thins plateaus of equal magnitude (e.g. a symmetric step) to one pixel.
    """
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    p = np.pad(mag, 1, mode="constant")
    h, w = mag.shape
    center = p[1:-1, 1:-1]

    def shifted(dr, dc):
        return p[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]

    keep = np.zeros(mag.shape, dtype=bool)
    # direction bins: 0 deg (horizontal gradient), 45, 90, 135; rows grow downward
    bins = [
        ((angle < 22.5) | (angle >= 157.5), (0, -1), (0, 1)),
        ((angle >= 22.5) & (angle < 67.5), (-1, -1), (1, 1)),
        ((angle >= 67.5) & (angle < 112.5), (-1, 0), (1, 0)),
        ((angle >= 112.5) & (angle < 157.5), (-1, 1), (1, -1)),
    ]
    for sel, back, fwd in bins:
        local = (center >= shifted(*back)) & (center > shifted(*fwd))
        keep |= sel & local
    return np.where(keep & (mag > 0), mag, 0.0)


def hysteresis(nms: np.ndarray, low: float, high: float) -> np.ndarray:
    """Weak pixels survive when 8-connected to a strong pixel."""
    strong = nms >= high
    candidates = nms >= low
    labels, n = ndimage.label(candidates, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        return np.zeros(nms.shape, dtype=np.uint8)
    has_strong = np.zeros(n + 1, dtype=bool)
    has_strong[np.unique(labels[strong])] = True
    has_strong[0] = False
    return has_strong[labels].astype(np.uint8)


def canny(patch: np.ndarray, sigma: float = 1.4, low_ratio: float = 0.1,
          high_ratio: float = 0.3) -> np.ndarray:
    """Binary edge map (1 = edge) of a grayscale patch with values in [0, 1].

    Thresholds are fractions of the patch's maximum gradient magnitude.
    """
    patch = np.asarray(patch, dtype=np.float64)
    if patch.ndim != 2 or min(patch.shape) < KERNEL_SIZE:
        raise ValueError(f"canny: patch of shape {patch.shape} is smaller than the "
                         f"{KERNEL_SIZE}x{KERNEL_SIZE} smoothing kernel")
    gx, gy = gradients(patch, sigma)
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak <= 1e-12:
        return np.zeros(patch.shape, dtype=np.uint8)
    nms = non_maximum_suppression(mag, gx, gy)
    return hysteresis(nms, low_ratio * peak, high_ratio * peak)
