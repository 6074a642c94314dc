"""Polar rectification around the epipoles.

Each image is resampled into (angle, radius) coordinates about its epipole.
Rows of the two rectified images are paired through the fundamental matrix so
that row r in both images parameterizes corresponding epipolar lines; matching
then only needs a 1-D search along rows. This stays well-posed under forward
motion, where planar stereo rectification collapses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .epipolar import FundamentalMatrix, epipole_of
from .errors import AtEpipole, EpipoleAtInfinity

# An epipole at infinity is emulated by a finite epipole placed very far along
# the opposite direction: the polar rays through the image are then parallel
# lines to well below pixel precision.
_VIRTUAL_EPIPOLE_DISTANCE = 1e8


@dataclass(frozen=True)
class PolarMap:
    """Polar resampling grid for one image.

    `angles[i]` is the (unwrapped) polar angle of row i in this image; the
    array is strictly monotonic but not necessarily uniform, because rows of
    the second image follow the epipolar-line transfer rather than a uniform
    sweep.
    """

    epipole: np.ndarray
    angles: np.ndarray
    radius_min: float
    radius_max: float
    radius_step: float = 1.0

    @property
    def n_rows(self) -> int:
        return len(self.angles)

    @property
    def n_cols(self) -> int:
        return int(np.ceil((self.radius_max - self.radius_min) / self.radius_step))


def _wrap(a):
    """Wrap angle(s) into (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a), 2.0 * np.pi)


def _epipole_inside(e: np.ndarray, dims) -> bool:
    w, h = dims
    return 0.0 <= e[0] <= w - 1.0 and 0.0 <= e[1] <= h - 1.0


def _corner_angles(e: np.ndarray, dims) -> np.ndarray:
    w, h = dims
    corners = np.array([[0.0, 0.0], [w - 1.0, 0.0], [w - 1.0, h - 1.0], [0.0, h - 1.0]])
    d = corners - e
    return np.arctan2(d[:, 1], d[:, 0])


def _angle_interval(e: np.ndarray, dims):
    """(amin, amax) interval of angles subtended by the image from e.

    Full circle [-pi, pi) when the epipole lies inside the image; otherwise an
    interval of width < pi around the direction to the image center.
    """
    if _epipole_inside(e, dims):
        return -np.pi, np.pi
    w, h = dims
    center = np.array([(w - 1.0) / 2.0, (h - 1.0) / 2.0])
    ref = np.arctan2(center[1] - e[1], center[0] - e[0])
    rel = _wrap(_corner_angles(e, dims) - ref)
    return ref + rel.min(), ref + rel.max()


def _radius_range(e: np.ndarray, dims):
    w, h = dims
    corners = np.array([[0.0, 0.0], [w - 1.0, 0.0], [w - 1.0, h - 1.0], [0.0, h - 1.0]])
    rmax = float(np.max(np.linalg.norm(corners - e, axis=1)))
    # Distance from e to the image rectangle (0 if inside).
    dx = max(0.0, -e[0], e[0] - (w - 1.0))
    dy = max(0.0, -e[1], e[1] - (h - 1.0))
    rmin = float(np.hypot(dx, dy))
    return rmin, rmax


def _transfer_angles(f: FundamentalMatrix, e1: np.ndarray, e2: np.ndarray,
                     theta1: np.ndarray, ref_radius: float) -> np.ndarray:
    """Angle (about e2, modulo pi) of the epipolar line in image 2 that
    corresponds to each ray angle about e1, continuity-unwrapped."""
    x = np.column_stack(
        [
            e1[0] + ref_radius * np.cos(theta1),
            e1[1] + ref_radius * np.sin(theta1),
            np.ones_like(theta1),
        ]
    )
    lines = x @ f.m.T  # l2 = F x1h
    theta2 = np.arctan2(-lines[:, 0], lines[:, 1])  # direction (b, -a) of the line
    # Remove the mod-pi jumps so the sequence is continuous.
    out = theta2.copy()
    for i in range(1, len(out)):
        step = out[i] - out[i - 1]
        out[i] -= np.pi * np.round(step / np.pi)
    return out


def build_polar_maps(f: FundamentalMatrix, dims_a, dims_b,
                     orientation_hint=None) -> tuple[PolarMap, PolarMap]:
    """Construct row-aligned polar maps for an image pair.

    dims are (width, height). `orientation_hint` is one trusted pixel
    correspondence ((u, v) in image A, (u, v) in image B); the mod-pi ambiguity
    of the line transfer cannot be resolved from F alone, so without a hint an
    arbitrary half-line pairing is chosen.
    """
    try:
        e1 = epipole_of(f, "right")
    except EpipoleAtInfinity as exc:
        e1 = -_VIRTUAL_EPIPOLE_DISTANCE * exc.direction
    try:
        e2 = epipole_of(f, "left")
    except EpipoleAtInfinity as exc:
        e2 = -_VIRTUAL_EPIPOLE_DISTANCE * exc.direction

    amin, amax = _angle_interval(e1, dims_a)
    rmin_a, rmax_a = _radius_range(e1, dims_a)
    rmin_b, rmax_b = _radius_range(e2, dims_b)

    # <= 1 px of arc travel per row at the outermost radius of either image.
    angle_step = 1.0 / max(rmax_a, rmax_b)
    n_rows = int(np.ceil((amax - amin) / angle_step))
    angles_a = amin + angle_step * np.arange(n_rows)

    ref_radius = 0.5 * (rmin_a + rmax_a) if rmin_a > 0 else 0.5 * rmax_a
    angles_b = _transfer_angles(f, e1, e2, angles_a, ref_radius)

    # Pin the half-line pairing with the hint correspondence.
    if orientation_hint is not None:
        ua, ub = (np.asarray(p, dtype=float) for p in orientation_hint)
        th1 = float(np.arctan2(ua[1] - e1[1], ua[0] - e1[0]))
        # Lift onto the grid's unwrapped branch, then evaluate the transfer.
        mid_a = 0.5 * (angles_a[0] + angles_a[-1])
        th1 += 2.0 * np.pi * np.round((mid_a - th1) / (2.0 * np.pi))
        th2_pred = np.interp(th1, angles_a, angles_b)
        th2_true = float(np.arctan2(ub[1] - e2[1], ub[0] - e2[0]))
        shift = np.pi * np.round((th2_true - th2_pred) / np.pi)
        angles_b = angles_b + shift

    # Restrict to rows whose transferred line actually meets image B.
    bmin, bmax = _angle_interval(e2, dims_b)
    if bmax - bmin < 2.0 * np.pi - 1e-9:
        rel = _wrap(angles_b - 0.5 * (bmin + bmax))
        half = 0.5 * (bmax - bmin) + 2.0 * angle_step
        valid = np.abs(rel) <= half
        if valid.any() and not valid.all():
            lo, hi = np.flatnonzero(valid)[[0, -1]]
            angles_a = angles_a[lo : hi + 1]
            angles_b = angles_b[lo : hi + 1]

    map_a = PolarMap(np.asarray(e1, dtype=float), angles_a, rmin_a, rmax_a)
    map_b = PolarMap(np.asarray(e2, dtype=float), angles_b, rmin_b, rmax_b)
    return map_a, map_b


def to_polar(pmap: PolarMap, p) -> np.ndarray:
    """Pixel -> fractional (angle_row, radius_col)."""
    p = np.asarray(p, dtype=float).reshape(2)
    d = p - pmap.epipole
    r = float(np.hypot(d[0], d[1]))
    if r < 1e-9:
        raise AtEpipole("polar coordinates undefined at the epipole")
    theta = float(np.arctan2(d[1], d[0]))

    angles = pmap.angles
    ascending = angles[-1] >= angles[0]
    a_lo, a_hi = (angles[0], angles[-1]) if ascending else (angles[-1], angles[0])
    # Lift theta onto the map's unwrapped branch.
    mid = 0.5 * (a_lo + a_hi)
    theta = theta + 2.0 * np.pi * np.round((mid - theta) / (2.0 * np.pi))

    idx = np.arange(len(angles), dtype=float)
    if ascending:
        row = float(np.interp(theta, angles, idx))
    else:
        row = float(np.interp(theta, angles[::-1], idx[::-1]))
    col = (r - pmap.radius_min) / pmap.radius_step
    return np.array([row, col])


def from_polar(pmap: PolarMap, q) -> np.ndarray:
    """Fractional (angle_row, radius_col) -> pixel."""
    q = np.asarray(q, dtype=float).reshape(2)
    row, col = q
    idx = np.arange(len(pmap.angles), dtype=float)
    theta = float(np.interp(row, idx, pmap.angles))
    r = pmap.radius_min + col * pmap.radius_step
    return pmap.epipole + r * np.array([np.cos(theta), np.sin(theta)])


def rectify_image(image: np.ndarray, pmap: PolarMap) -> np.ndarray:
    """Resample an image onto the polar grid with bilinear interpolation."""
    img = np.asarray(image, dtype=float)
    theta = pmap.angles[:, None]
    r = pmap.radius_min + pmap.radius_step * np.arange(pmap.n_cols)[None, :]
    xs = pmap.epipole[0] + r * np.cos(theta)
    ys = pmap.epipole[1] + r * np.sin(theta)
    return ndimage.map_coordinates(img, [ys, xs], order=1, mode="constant", cval=0.0)
