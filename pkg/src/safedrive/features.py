"""Harris corners, oriented binary patch descriptors, and mutual matching.

Descriptors follow the rotated-BRIEF recipe: 256 intensity comparisons on a
smoothed 31x31 patch, with the sampling pattern steered by the corner's
intensity-centroid orientation. The pattern is drawn once from a fixed seed so
descriptors are reproducible across runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ImageTooSmall

PATCH_SIZE = 31
_PATCH_RADIUS = PATCH_SIZE // 2
_PATTERN_SEED = 20160229
_PATTERN_SIGMA = 5.0
# Keep sample offsets within radius 13 so any in-plane rotation stays inside
# the 31x31 patch.
_PATTERN_RADIUS = 13.0
DESCRIPTOR_BITS = 256


@dataclass(frozen=True)
class FeaturePoint:
    u: float
    v: float
    response: float
    orientation: float

    @property
    def position(self) -> np.ndarray:
        return np.array([self.u, self.v])


def _sampling_pattern() -> np.ndarray:
    """(256, 2, 2) array of (dx, dy) comparison pairs, fixed for all time."""
    rng = np.random.default_rng(_PATTERN_SEED)
    pts = rng.normal(scale=_PATTERN_SIGMA, size=(DESCRIPTOR_BITS, 2, 2))
    norm = np.linalg.norm(pts, axis=2, keepdims=True)
    over = norm > _PATTERN_RADIUS
    pts = np.where(over, pts * _PATTERN_RADIUS / norm, pts)
    return pts


_PATTERN = _sampling_pattern()


def harris_response(image: np.ndarray, sigma: float = 1.5, k: float = 0.04) -> np.ndarray:
    """Harris corner response map (Sobel gradients, Gaussian window)."""
    img = np.asarray(image, dtype=float)
    gx = ndimage.sobel(img, axis=1, mode="nearest")
    gy = ndimage.sobel(img, axis=0, mode="nearest")
    sxx = ndimage.gaussian_filter(gx * gx, sigma, mode="nearest")
    syy = ndimage.gaussian_filter(gy * gy, sigma, mode="nearest")
    sxy = ndimage.gaussian_filter(gx * gy, sigma, mode="nearest")
    det = sxx * syy - sxy * sxy
    trace = sxx + syy
    return det - k * trace * trace


def _orientation(image: np.ndarray, u: int, v: int, radius: int = 15) -> float:
    """Intensity-centroid orientation of the patch around (u, v)."""
    h, w = image.shape
    u0, u1 = max(0, u - radius), min(w, u + radius + 1)
    v0, v1 = max(0, v - radius), min(h, v + radius + 1)
    patch = image[v0:v1, u0:u1]
    ys, xs = np.mgrid[v0 - v : v1 - v, u0 - u : u1 - u]
    circ = xs * xs + ys * ys <= radius * radius
    m10 = float(np.sum(xs * patch * circ))
    m01 = float(np.sum(ys * patch * circ))
    return float(np.arctan2(m01, m10))


def detect_corners(image: np.ndarray, max_count: int, min_spacing: float,
                   sigma: float = 1.5, k: float = 0.04,
                   rel_threshold: float = 0.01) -> list[FeaturePoint]:
    """Harris corners, strongest first, greedily thinned to `min_spacing`."""
    img = np.asarray(image, dtype=float)
    if img.ndim != 2 or img.shape[0] < 32 or img.shape[1] < 32:
        raise ImageTooSmall(f"need at least 32x32, got {img.shape}")
    if max_count < 1 or min_spacing < 0:
        raise ValueError("max_count >= 1 and min_spacing >= 0 required")

    resp = harris_response(img, sigma=sigma, k=k)
    smoothed = ndimage.gaussian_filter(img, 2.0, mode="nearest")
    peak = resp.max()
    if peak <= 0:
        return []
    local_max = resp == ndimage.maximum_filter(resp, size=3, mode="nearest")
    candidates = np.argwhere(local_max & (resp > rel_threshold * peak))
    if len(candidates) == 0:
        return []
    scores = resp[candidates[:, 0], candidates[:, 1]]
    order = np.argsort(-scores, kind="stable")
    candidates = candidates[order]
    scores = scores[order]

    kept: list[FeaturePoint] = []
    kept_xy = np.empty((0, 2))
    min_sq = min_spacing * min_spacing
    for (v, u), score in zip(candidates, scores):
        if len(kept_xy) and np.min(np.sum((kept_xy - (u, v)) ** 2, axis=1)) < min_sq:
            continue
        kept.append(FeaturePoint(float(u), float(v), float(score),
                                 _orientation(smoothed, int(u), int(v))))
        kept_xy = np.vstack([kept_xy, [u, v]])
        if len(kept) >= max_count:
            break
    return kept


def describe(image: np.ndarray, features: list[FeaturePoint],
             smoothing_sigma: float = 2.0):
    """Binary descriptors for each feature whose 31x31 patch fits the image.

    Returns (descriptors (n, 32) uint8 packed bits, kept_indices, dropped_indices).
    """
    img = ndimage.gaussian_filter(np.asarray(image, dtype=float), smoothing_sigma,
                                  mode="nearest")
    h, w = img.shape
    kept, dropped = [], []
    rows = []
    # Steering rotates the pattern but its extent stays <= _PATTERN_RADIUS,
    # so the patch-fit test uses the fixed patch radius.
    for i, f in enumerate(features):
        u, v = f.u, f.v
        if not (_PATCH_RADIUS <= u < w - _PATCH_RADIUS and
                _PATCH_RADIUS <= v < h - _PATCH_RADIUS):
            dropped.append(i)
            continue
        c, s = np.cos(f.orientation), np.sin(f.orientation)
        rot = np.array([[c, -s], [s, c]])
        pts = _PATTERN @ rot.T  # (256, 2, 2) rotated (dx, dy)
        xs = np.clip(np.rint(pts[..., 0] + u).astype(int), 0, w - 1)
        ys = np.clip(np.rint(pts[..., 1] + v).astype(int), 0, h - 1)
        vals = img[ys, xs]  # (256, 2)
        bits = vals[:, 0] < vals[:, 1]
        rows.append(np.packbits(bits))
        kept.append(i)
    if rows:
        descs = np.stack(rows).astype(np.uint8)
    else:
        descs = np.empty((0, DESCRIPTOR_BITS // 8), dtype=np.uint8)
    return descs, kept, dropped


def hamming_distances(desc_a: np.ndarray, desc_b: np.ndarray) -> np.ndarray:
    """(na, nb) matrix of Hamming distances between packed descriptor sets."""
    a = np.asarray(desc_a, dtype=np.uint8)
    b = np.asarray(desc_b, dtype=np.uint8)
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)), dtype=np.int64)
    return np.bitwise_count(a[:, None, :] ^ b[None, :, :]).sum(axis=2, dtype=np.int64)


def match_bidirectional(desc_a: np.ndarray, desc_b: np.ndarray,
                        max_distance: int = 64) -> list[tuple[int, int, int]]:
    """Mutual-nearest-neighbor matches as (index_a, index_b, distance) tuples.

    Ties at equal distance go to the lowest index; the result is one-to-one.
    """
    if len(desc_a) == 0 or len(desc_b) == 0:
        return []
    d = hamming_distances(desc_a, desc_b)
    best_b = np.argmin(d, axis=1)  # argmin takes first occurrence: lowest index
    best_a = np.argmin(d, axis=0)
    matches = []
    for i, j in enumerate(best_b):
        dist = int(d[i, j])
        if best_a[j] == i and dist <= max_distance:
            matches.append((i, int(j), dist))
    return matches
