"""1-D lane-pixel matching along shared polar rows, then triangulation.

Candidates are restricted to the same color class within one angular row of
the rectified pair; patch correlation picks among them; triangulated points
failing the reprojection bound or cheirality are discarded.

Patches are sampled in a polar-aligned frame with radius-dependent spacing:
for points on the road surface the radial footprint of a pixel scales with
r^2 and the tangential footprint with r, so sampling at spacing (c_r * r^2,
c_t * r) in both images gives corresponding patches the same ground
footprint without knowing the depth. An ambiguity margin rejects pixels
whose best score is not clearly better than the runner-up elsewhere on the
row, which concentrates accepted matches at distinctive locations (dash
ends, texture anomalies) instead of guessing along self-similar stripes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates

from .errors import DegenerateRays
from .geometry import CameraIntrinsics, RigidPose, reprojection_error, triangulate_point
from .lane_detection import LanePixelSet
from .polar import PolarMap, to_polar

_PATCH_RADIUS = 4  # 9x9 patch
_SCALE_REF_RADIUS = 350.0  # radius at which canonical spacing is 1 px
_SPACING_CLAMP = (0.5, 4.0)


@dataclass(frozen=True)
class LaneCorrespondence:
    pixel_a: np.ndarray
    pixel_b: np.ndarray
    angle_row: float
    score: float  # 1 - normalized cross-correlation
    color_class: int


@dataclass(frozen=True)
class LanePoint3D:
    position: np.ndarray
    reproj_error_a: float
    reproj_error_b: float
    color_class: int


def _polar_rows(pmap: PolarMap, pixels: np.ndarray) -> np.ndarray:
    rows = np.empty(len(pixels))
    for i, p in enumerate(pixels):
        rows[i] = to_polar(pmap, p)[0]
    return rows


def _normalized_patches(image: np.ndarray, pixels: np.ndarray,
                        epipole: np.ndarray | None = None) -> np.ndarray:
    """(n, 81) zero-mean unit-norm patches; NaN row when the patch overflows.

    With an epipole, patches are sampled in the polar-aligned frame with the
    foreshortening-compensated spacing described in the module docstring;
    without one, on the plain unit pixel grid.
    """
    img = np.asarray(image, dtype=float)
    pix = np.asarray(pixels, dtype=float).reshape(-1, 2)
    n = len(pix)
    r_p = _PATCH_RADIUS
    if epipole is None:
        e_r = np.tile(np.array([1.0, 0.0]), (n, 1))
        s_rad = np.ones(n)
        s_tan = np.ones(n)
    else:
        d = pix - np.asarray(epipole, dtype=float)
        radius = np.linalg.norm(d, axis=1)
        e_r = d / np.maximum(radius, 1e-9)[:, None]
        s_rad = np.clip((radius / _SCALE_REF_RADIUS) ** 2, *_SPACING_CLAMP)
        s_tan = np.clip(radius / _SCALE_REF_RADIUS, *_SPACING_CLAMP)
    e_t = np.stack([-e_r[:, 1], e_r[:, 0]], axis=1)
    ii, jj = np.meshgrid(np.arange(-r_p, r_p + 1), np.arange(-r_p, r_p + 1),
                         indexing="ij")
    offsets = (
        ii[None, :, :, None] * (s_rad[:, None, None, None] * e_r[:, None, None, :])
        + jj[None, :, :, None] * (s_tan[:, None, None, None] * e_t[:, None, None, :])
    )
    coords = pix[:, None, None, :] + offsets
    vals = map_coordinates(
        img, [coords[..., 1].ravel(), coords[..., 0].ravel()],
        order=1, mode="constant", cval=np.nan,
    )
    patches = vals.reshape(n, (2 * r_p + 1) ** 2)
    bad = np.isnan(patches).any(axis=1)
    patches = patches - np.nanmean(patches, axis=1, keepdims=True)
    norms = np.linalg.norm(np.nan_to_num(patches), axis=1)
    bad |= norms < 1e-9
    patches = np.nan_to_num(patches) / np.maximum(norms, 1e-9)[:, None]
    patches[bad] = np.nan
    return patches


def _best_per_pixel(patches_q, patches_c, rows_q, rows_c, classes_q, classes_c,
                    pixels_c, radii_c, max_score, row_band, margin,
                    peak_separation):
    """Best candidate per query pixel with score and ambiguity gates."""
    out = {}
    for i in range(len(rows_q)):
        if np.isnan(patches_q[i, 0]):
            continue
        cand = np.flatnonzero(
            (np.abs(rows_c - rows_q[i]) <= row_band) & (classes_c == classes_q[i])
        )
        cand = cand[~np.isnan(patches_c[cand, 0])]
        if len(cand) == 0:
            continue
        scores = 1.0 - patches_c[cand] @ patches_q[i]
        # Tie-break equal scores toward the lowest polar radius.
        order = np.lexsort((radii_c[cand], scores))
        j = cand[order[0]]
        s = float(scores[order[0]])
        if s > max_score:
            continue
        if margin > 0:
            far = np.linalg.norm(pixels_c[cand] - pixels_c[j], axis=1) > peak_separation
            if far.any() and float(scores[far].min()) - s < margin:
                continue
        out[i] = (int(j), s)
    return out


def match_lane_pixels(lanes_a: LanePixelSet, lanes_b: LanePixelSet,
                      maps: tuple[PolarMap, PolarMap],
                      images: tuple[np.ndarray, np.ndarray],
                      max_score: float = 0.25,
                      row_band: float = 1.0,
                      ambiguity_margin: float = 0.05,
                      peak_separation: float = 3.0) -> list[LaneCorrespondence]:
    """Mutual best patch-correlation matches within +/- one angular row."""
    if len(lanes_a) == 0 or len(lanes_b) == 0:
        return []
    map_a, map_b = maps
    rows_a = _polar_rows(map_a, lanes_a.pixels)
    rows_b = _polar_rows(map_b, lanes_b.pixels)
    patches_a = _normalized_patches(images[0], lanes_a.pixels, map_a.epipole)
    patches_b = _normalized_patches(images[1], lanes_b.pixels, map_b.epipole)
    radii_a = np.linalg.norm(lanes_a.pixels - map_a.epipole, axis=1)
    radii_b = np.linalg.norm(lanes_b.pixels - map_b.epipole, axis=1)

    best_for_a = _best_per_pixel(
        patches_a, patches_b, rows_a, rows_b, lanes_a.classes, lanes_b.classes,
        lanes_b.pixels, radii_b, max_score, row_band, ambiguity_margin,
        peak_separation,
    )
    best_for_b = _best_per_pixel(
        patches_b, patches_a, rows_b, rows_a, lanes_b.classes, lanes_a.classes,
        lanes_a.pixels, radii_a, max_score, row_band, ambiguity_margin,
        peak_separation,
    )

    matches = []
    for i, (j, s) in sorted(best_for_a.items()):
        if best_for_b.get(j, (None,))[0] == i:
            matches.append(
                LaneCorrespondence(
                    pixel_a=lanes_a.pixels[i].copy(),
                    pixel_b=lanes_b.pixels[j].copy(),
                    angle_row=float(0.5 * (rows_a[i] + rows_b[j])),
                    score=s,
                    color_class=int(lanes_a.classes[i]),
                )
            )
    return matches


def filter_plane_outliers(points: list[LanePoint3D], n_rounds: int = 4,
                          min_points: int = 30):
    """Keep lane points consistent with the robustly-fitted road plane.

    Correct lane markers are coplanar on the road surface; gross mismatches
    that survive the reprojection gate (they slide along epipolar lines) land
    far off that plane. Returns (kept points, discarded count); below
    `min_points` the fit is unreliable and the input passes through.
    """
    if len(points) < min_points:
        return list(points), 0
    pts = np.array([p.position for p in points])
    keep = np.ones(len(pts), dtype=bool)
    for _ in range(n_rounds):
        sel = pts[keep]
        centroid = sel.mean(axis=0)
        _, _, vt = np.linalg.svd(sel - centroid)
        normal = vt[-1]
        resid = np.abs((pts - centroid) @ normal)
        scale = 1.4826 * np.median(resid[keep])
        new_keep = resid <= max(3.0 * scale, 1e-9)
        if new_keep.sum() < min_points or np.array_equal(new_keep, keep):
            keep = new_keep if new_keep.sum() >= min_points else keep
            break
        keep = new_keep
    kept = [p for p, k in zip(points, keep) if k]
    return kept, int(len(points) - len(kept))


def triangulate_lane_markers(corrs: list[LaneCorrespondence], pose1: RigidPose,
                             pose2: RigidPose, k: CameraIntrinsics,
                             max_reproj: float = 2.0):
    """Triangulate correspondences; returns (kept points, discarded count)."""
    if max_reproj <= 0:
        raise ValueError("max_reproj must be positive")
    kept = []
    discarded = 0
    for c in corrs:
        try:
            x, behind = triangulate_point(c.pixel_a, c.pixel_b, pose1, pose2, k)
        except DegenerateRays:
            discarded += 1
            continue
        if behind:
            discarded += 1
            continue
        ea = reprojection_error(x, c.pixel_a, pose1, k)
        eb = reprojection_error(x, c.pixel_b, pose2, k)
        if ea > max_reproj or eb > max_reproj:
            discarded += 1
            continue
        kept.append(LanePoint3D(x, ea, eb, c.color_class))
    return kept, discarded
