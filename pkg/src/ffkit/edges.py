"""Canny edge detection on RGB frames."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

DEFAULT_LOW = 0.1
DEFAULT_HIGH = 0.2
BORDER = 2

_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
_SOBEL_Y = _SOBEL_X.T


@dataclass(eq=False)
class EdgeMap:
    edges: np.ndarray  # (H, W) bool

    @property
    def height(self) -> int:
        return self.edges.shape[0]

    @property
    def width(self) -> int:
        return self.edges.shape[1]


def grayscale(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        return img
    return 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]


def gaussian_kernel(size: int = 5, sigma: float = 1.4) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def gradients(gray: np.ndarray):
    blurred = ndimage.correlate(gray, gaussian_kernel(), mode="nearest")
    gx = ndimage.correlate(blurred, _SOBEL_X, mode="nearest")
    gy = ndimage.correlate(blurred, _SOBEL_Y, mode="nearest")
    return gx, gy


def non_max_suppression(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Keep local maxima across the gradient, directions quantized to 0/45/90/135 degrees.

    Plateaus are broken by requiring ``>`` against one neighbor and ``>=``
    against the other, so a symmetric ridge two pixels wide keeps one side.
    """
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    sector = (np.floor((angle + 22.5) / 45.0).astype(int)) % 4
    # neighbor offsets (drow, dcol) along the gradient for each sector
    offsets = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    p = np.pad(mag, 1, mode="constant")
    h, w = mag.shape
    keep = np.zeros_like(mag, dtype=bool)
    for sec, (dr, dc) in offsets.items():
        fwd = p[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]
        bwd = p[1 - dr:1 - dr + h, 1 - dc:1 - dc + w]
        keep |= (sector == sec) & (mag > fwd) & (mag >= bwd)
    return keep & (mag > 0)


def hysteresis(strong: np.ndarray, weak: np.ndarray) -> np.ndarray:
    """Weak pixels survive when 8-connected to a strong pixel through weak or strong pixels."""
    cand = strong | weak
    labels, n = ndimage.label(cand, structure=np.ones((3, 3), dtype=int))
    if n == 0:
        return np.zeros_like(cand)
    seeded = np.zeros(n + 1, dtype=bool)
    seeded[np.unique(labels[strong])] = True
    seeded[0] = False
    return seeded[labels]


def canny(image: np.ndarray, low: float = DEFAULT_LOW, high: float = DEFAULT_HIGH) -> EdgeMap:
    """Binary edges; ``low`` and ``high`` are fractions of the maximum gradient magnitude."""
    if not 0 < low < high <= 1:
        raise ValueError(f"thresholds must satisfy 0 < low < high <= 1, got {low}, {high}")
    gray = grayscale(image)
    if gray.shape[0] < 5 or gray.shape[1] < 5:
        raise ValueError(f"image {gray.shape[1]}x{gray.shape[0]} is smaller than 5x5")
    gx, gy = gradients(gray)
    mag = np.hypot(gx, gy)
    frame = np.zeros_like(mag, dtype=bool)
    frame[BORDER:-BORDER, BORDER:-BORDER] = True
    mag = np.where(frame, mag, 0.0)
    peak = mag.max()
    # blurring a flat image leaves rounding noise, not structure
    if peak <= 1e-9 * (np.abs(gray).max() + 1.0):
        return EdgeMap(np.zeros(gray.shape, dtype=bool))
    # relative magnitudes, rounded so ties survive rescaling of the input
    rel = np.round(mag / peak, 9)
    nms = non_max_suppression(rel, gx, gy)
    strong = nms & (rel >= high)
    weak = nms & (rel >= low) & ~strong
    return EdgeMap(hysteresis(strong, weak))
