"""Lane-marker pixel extraction: color masks in HSV intersected with edges."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage import color as skcolor
from skimage import feature as skfeature

from .errors import InvalidThresholds

YELLOW = 0
WHITE = 1


@dataclass(frozen=True)
class ColorThresholds:
    """HSV acceptance ranges; hue in degrees, saturation/value in [0, 1]."""

    yellow_hue: tuple = (35.0, 65.0)
    yellow_min_sat: float = 0.35
    yellow_min_val: float = 0.35
    white_max_sat: float = 0.18
    white_min_val: float = 0.7


@dataclass(frozen=True)
class LanePixelSet:
    """Detected lane-marker pixels (u, v) with a color class per pixel."""

    pixels: np.ndarray  # (n, 2) float
    classes: np.ndarray  # (n,) int, YELLOW or WHITE

    def __len__(self):
        return len(self.pixels)


def to_gray(image: np.ndarray) -> np.ndarray:
    """RGB [0,1] -> luma gray [0,1]."""
    img = np.asarray(image, dtype=float)
    if img.ndim == 2:
        return img
    return img @ np.array([0.299, 0.587, 0.114])


def color_mask(image: np.ndarray, color_class: int,
               thresholds: ColorThresholds = ColorThresholds()) -> np.ndarray:
    """Boolean mask of pixels inside the HSV range of the given class."""
    hsv = skcolor.rgb2hsv(np.asarray(image, dtype=float))
    h = hsv[..., 0] * 360.0
    s = hsv[..., 1]
    v = hsv[..., 2]
    if color_class == YELLOW:
        lo, hi = thresholds.yellow_hue
        return (h >= lo) & (h <= hi) & (s >= thresholds.yellow_min_sat) & (
            v >= thresholds.yellow_min_val
        )
    if color_class == WHITE:
        return (s <= thresholds.white_max_sat) & (v >= thresholds.white_min_val)
    raise ValueError(f"unknown color class {color_class}")


def canny_edges(image: np.ndarray, low: float = 0.1, high: float = 0.25,
                sigma: float = 1.4) -> np.ndarray:
    """Canny edge mask with thresholds relative to the peak gradient magnitude."""
    if not low < high:
        raise InvalidThresholds(f"need low < high, got {low} >= {high}")
    img = np.asarray(image, dtype=float)
    smoothed = ndimage.gaussian_filter(img, sigma, mode="nearest")
    gx = ndimage.sobel(smoothed, axis=1, mode="nearest")
    gy = ndimage.sobel(smoothed, axis=0, mode="nearest")
    gmax = float(np.hypot(gx, gy).max())
    if gmax <= 0:
        return np.zeros(img.shape, dtype=bool)
    return skfeature.canny(
        img, sigma=sigma, low_threshold=low * gmax / 4.0, high_threshold=high * gmax / 4.0
    )


def detect_lane_pixels(image: np.ndarray,
                       thresholds: ColorThresholds = ColorThresholds(),
                       canny_low: float = 0.1, canny_high: float = 0.25) -> LanePixelSet:
    """Lane pixels = edges that touch (dilated) yellow or white paint.

    Canny edges straddle the paint boundary where colors mix, so the color
    masks are dilated by one pixel before intersecting.
    """
    img = np.asarray(image, dtype=float)
    yellow = color_mask(img, YELLOW, thresholds)
    white = color_mask(img, WHITE, thresholds)
    edges = canny_edges(to_gray(img), low=canny_low, high=canny_high)

    struct = np.ones((3, 3), dtype=bool)
    yellow_d = ndimage.binary_dilation(yellow, structure=struct)
    white_d = ndimage.binary_dilation(white, structure=struct)

    lane = edges & (yellow_d | white_d)
    vs, us = np.nonzero(lane)
    classes = np.where(yellow_d[vs, us], YELLOW, WHITE)
    return LanePixelSet(
        pixels=np.column_stack([us, vs]).astype(float), classes=classes.astype(int)
    )
