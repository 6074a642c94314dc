"""Registering the current view against the sparse street model via PnP."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

from .errors import (
    InsufficientCorrespondences,
    LowDispersityWarning,
    NoCorrespondence,
    PoseUnstable,
)
from .features import hamming_distances
from .geometry import CameraIntrinsics, RigidPose, project_many
from .lane_matching import LanePoint3D


@dataclass(frozen=True)
class ModelPoint:
    """A triangulated feature point with its descriptors from the source views."""

    position: np.ndarray
    descriptors: np.ndarray  # (k, 32) packed, k >= 1


@dataclass(frozen=True)
class StreetModel:
    feature_points: list  # [ModelPoint]
    lane_points: list  # [LanePoint3D]
    source_image_ids: tuple = ()

    def scaled(self, factor: float) -> "StreetModel":
        return StreetModel(
            feature_points=[
                ModelPoint(p.position * factor, p.descriptors) for p in self.feature_points
            ],
            lane_points=[
                LanePoint3D(p.position * factor, p.reproj_error_a, p.reproj_error_b,
                            p.color_class)
                for p in self.lane_points
            ],
            source_image_ids=self.source_image_ids,
        )


@dataclass(frozen=True)
class RegistrationResult:
    pose: RigidPose
    inlier_count: int
    mean_projection_error: float
    inlier_indices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))


def match_to_model(model: StreetModel, current_descs: np.ndarray,
                   current_pixels: np.ndarray, max_distance: int = 64,
                   min_pairs: int = 6):
    """Mutual descriptor matching between model points and the current view.

    Returns ((m, 3) points, (m, 2) pixels, model point indices). A model point
    with several descriptors matches through its best one.
    """
    if not model.feature_points:
        raise NoCorrespondence("street model has no feature points")
    current_descs = np.asarray(current_descs, dtype=np.uint8)
    current_pixels = np.asarray(current_pixels, dtype=float).reshape(-1, 2)
    if len(current_descs) == 0:
        raise NoCorrespondence("current view has no descriptors")

    # Per-point distance = min over that point's descriptors.
    dists = np.empty((len(model.feature_points), len(current_descs)))
    for i, mp in enumerate(model.feature_points):
        dists[i] = hamming_distances(mp.descriptors, current_descs).min(axis=0)

    best_cur = np.argmin(dists, axis=1)
    best_model = np.argmin(dists, axis=0)
    pts, pix, idx = [], [], []
    for i, j in enumerate(best_cur):
        if best_model[j] == i and dists[i, j] <= max_distance:
            pts.append(model.feature_points[i].position)
            pix.append(current_pixels[j])
            idx.append(i)
    if len(pts) < min_pairs:
        raise NoCorrespondence(f"only {len(pts)} 3D-2D pairs, need {min_pairs}")
    return np.array(pts), np.array(pix), np.array(idx)


def _pnp_dlt(points: np.ndarray, pixels: np.ndarray, k: CameraIntrinsics) -> RigidPose:
    """Linear pose from >= 6 points on normalized image coordinates."""
    kinv = np.linalg.inv(k.matrix)
    xh = np.column_stack([pixels, np.ones(len(pixels))]) @ kinv.T
    x, y = xh[:, 0], xh[:, 1]
    n = len(points)
    a = np.zeros((2 * n, 12))
    homog = np.column_stack([points, np.ones(n)])
    a[0::2, 0:4] = homog
    a[0::2, 8:12] = -x[:, None] * homog
    a[1::2, 4:8] = homog
    a[1::2, 8:12] = -y[:, None] * homog
    _, _, vt = np.linalg.svd(a)
    p = vt[-1].reshape(3, 4)

    r_raw = p[:, :3]
    u, s, vt2 = np.linalg.svd(r_raw)
    r = u @ vt2
    scale = s.mean()
    if np.linalg.det(r) < 0:
        r = -r
        scale = -scale
    t = p[:, 3] / scale
    pose = RigidPose(r, t)
    # The det(R)=+1 constraint makes the decomposition unique; a solution that
    # still puts the points behind the camera is simply wrong.
    depths = (points @ pose.r.T + pose.t)[:, 2]
    if np.median(depths) < 0:
        raise PoseUnstable("linear PnP solution has negative depths")
    return pose


def _projection_errors(points, pixels, pose, k):
    uv, z = project_many(points, pose, k)
    err = np.linalg.norm(uv - pixels, axis=1)
    err[z <= 0] = np.inf
    err[~np.isfinite(err)] = np.inf
    return err


def _refine_pose(points, pixels, pose, k: CameraIntrinsics) -> RigidPose:
    """Levenberg-Marquardt reprojection minimization over (rotvec, t)."""
    x0 = np.concatenate([Rotation.from_matrix(pose.r).as_rotvec(), pose.t])

    def residuals(x):
        r = Rotation.from_rotvec(x[:3]).as_matrix()
        cam = points @ r.T + x[3:]
        z = np.where(np.abs(cam[:, 2]) < 1e-12, 1e-12, cam[:, 2])
        uvw = cam @ k.matrix.T
        uv = uvw[:, :2] / z[:, None]
        return (uv - pixels).ravel()

    sol = least_squares(residuals, x0, method="lm", max_nfev=200)
    return RigidPose(Rotation.from_rotvec(sol.x[:3]).as_matrix(), sol.x[3:])


def solve_pnp(points, pixels, k: CameraIntrinsics, threshold: float = 3.0,
              min_inliers: int = 6, max_iterations: int = 500,
              seed: int = 0) -> RegistrationResult:
    """RANSAC over linear PnP solves, then nonlinear refinement on inliers."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    n = len(points)
    if n < 6:
        raise InsufficientCorrespondences(f"need >= 6 correspondences, got {n}")

    rng = np.random.default_rng(seed)
    best_inliers = None
    best_pose = None
    iterations = max_iterations
    it = 0
    while it < iterations:
        it += 1
        sample = rng.choice(n, size=6, replace=False)
        try:
            pose = _pnp_dlt(points[sample], pixels[sample], k)
        except (PoseUnstable, np.linalg.LinAlgError, ValueError):
            continue
        # The orthogonalized linear pose degrades quickly with pixel noise;
        # polishing each sample on its own six points recovers the support
        # the linear solve loses.
        refined = _refine_pose(points[sample], pixels[sample], pose, k)
        err = _projection_errors(points, pixels, pose, k)
        err_r = _projection_errors(points, pixels, refined, k)
        if (err_r <= threshold).sum() > (err <= threshold).sum():
            pose, err = refined, err_r
        inliers = err <= threshold
        count = int(inliers.sum())
        if best_inliers is None or count > best_inliers.sum():
            best_inliers = inliers
            best_pose = pose
            ratio = count / n
            denom = np.log(max(1e-12, 1.0 - ratio**6))
            if denom < 0:
                iterations = min(max_iterations,
                                 int(np.ceil(np.log(1e-3) / denom)))
    if best_inliers is None or best_inliers.sum() < min_inliers:
        found = 0 if best_inliers is None else int(best_inliers.sum())
        raise PoseUnstable(f"RANSAC kept {found} inliers, need {min_inliers}")

    idx = np.flatnonzero(best_inliers)
    # A consensus refit over ill-conditioned inlier sets can flip sign even
    # when the winning sample pose was valid; fall back to that pose.
    try:
        pose = _pnp_dlt(points[idx], pixels[idx], k)
    except (PoseUnstable, np.linalg.LinAlgError):
        pose = best_pose
    err_lin = _projection_errors(points, pixels, pose, k)
    refined = _refine_pose(points[idx], pixels[idx], pose, k)
    err_ref = _projection_errors(points, pixels, refined, k)
    # Refinement must not make the inlier fit worse.
    if err_ref[idx].mean() <= err_lin[idx].mean():
        pose, err = refined, err_ref
    else:
        pose, err = pose, err_lin
    # Alternate inlier reselection and refinement until the set stabilizes.
    inliers = np.flatnonzero(err <= threshold)
    for _ in range(5):
        if len(inliers) < min_inliers or np.array_equal(inliers, idx):
            break
        idx = inliers
        refined = _refine_pose(points[idx], pixels[idx], pose, k)
        err_ref = _projection_errors(points, pixels, refined, k)
        if err_ref[idx].mean() <= err[idx].mean():
            pose, err = refined, err_ref
        inliers = np.flatnonzero(err <= threshold)
    if len(inliers) < min_inliers:
        inliers = idx
    return RegistrationResult(
        pose=pose,
        inlier_count=len(inliers),
        mean_projection_error=float(err[inliers].mean()),
        inlier_indices=inliers,
    )


def project_lane_markers(model: StreetModel, result: RegistrationResult,
                         k: CameraIntrinsics, dims):
    """Project model lane points into the registered view.

    Returns ((m, 2) pixels, (m,) in-frame flags, (m,) source lane-point
    indices) for points with positive depth; out-of-frame projections are
    flagged, not dropped.
    """
    if not model.lane_points:
        return np.empty((0, 2)), np.empty(0, dtype=bool), np.empty(0, dtype=int)
    pts = np.array([p.position for p in model.lane_points])
    uv, z = project_many(pts, result.pose, k)
    front = z > 0
    w, h = dims
    in_frame = front & (uv[:, 0] >= 0) & (uv[:, 0] <= w - 1) & (uv[:, 1] >= 0) & (
        uv[:, 1] <= h - 1
    )
    return uv[front], in_frame[front], np.flatnonzero(front)


def feature_distribution_metrics(pixels, dims):
    """(dispersity, horizontal_center) of registered feature pixels.

    dispersity = RMS distance from the centroid over the image diagonal;
    horizontal_center = mean u over the image width.
    """
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    if len(pixels) < 2:
        raise ValueError("need at least 2 pixels")
    w, h = dims
    diag = float(np.hypot(w, h))
    centered = pixels - pixels.mean(axis=0)
    dispersity = float(np.sqrt(np.mean(np.sum(centered**2, axis=1))) / diag)
    horizontal_center = float(pixels[:, 0].mean() / w)
    return dispersity, horizontal_center


def check_dispersity(dispersity: float, horizontal_center: float,
                     min_dispersity: float = 0.12,
                     max_center_offset: float = 0.25) -> list[str]:
    """Warn when the feature distribution predicts an unreliable projection."""
    issues = []
    if dispersity < min_dispersity:
        issues.append(f"low feature dispersity {dispersity:.3f} < {min_dispersity}")
    if abs(horizontal_center - 0.5) > max_center_offset:
        issues.append(
            f"one-sided features: horizontal center {horizontal_center:.3f}"
        )
    for msg in issues:
        warnings.warn(msg, LowDispersityWarning, stacklevel=2)
    return issues
