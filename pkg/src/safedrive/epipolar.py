"""Fundamental matrix estimation, epipoles, and relative-pose recovery.

Convention: for corresponding pixels x1 (first image) and x2 (second image),
x2h^T F x1h = 0. The recovered pose maps frame-1 coordinates into frame 2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    CheiralityAmbiguous,
    DegenerateConfiguration,
    EpipoleAtInfinity,
    InsufficientMatches,
)
from .geometry import CameraIntrinsics, RigidPose, _cross_matrix, triangulate_point
from .errors import DegenerateRays


def _canonicalize(f: np.ndarray) -> np.ndarray:
    """Unit Frobenius norm with a deterministic sign (largest |entry| positive)."""
    f = f / np.linalg.norm(f)
    flat = f.ravel()
    lead = flat[np.argmax(np.abs(flat))]
    return f if lead >= 0 else -f


@dataclass(frozen=True)
class FundamentalMatrix:
    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float).reshape(3, 3)
        u, s, vt = np.linalg.svd(m)
        s = s.copy()
        s[2] = 0.0  # enforce rank 2
        m = _canonicalize(u @ np.diag(s) @ vt)
        object.__setattr__(self, "m", m)

    @property
    def transposed(self) -> "FundamentalMatrix":
        return FundamentalMatrix(self.m.T)


@dataclass(frozen=True)
class EpipolarEstimate:
    f: FundamentalMatrix
    inlier_indices: np.ndarray
    residuals: np.ndarray  # Sampson distances of all input correspondences


def _hartley_normalize(pts: np.ndarray):
    """Translate centroid to origin and scale RMS radius to sqrt(2)."""
    centroid = pts.mean(axis=0)
    rms = np.sqrt(np.mean(np.sum((pts - centroid) ** 2, axis=1)))
    if rms < 1e-12:
        raise DegenerateConfiguration("all points coincident")
    s = np.sqrt(2.0) / rms
    t = np.array([[s, 0, -s * centroid[0]], [0, s, -s * centroid[1]], [0, 0, 1.0]])
    return (pts - centroid) * s, t

def _eight_point(pa: np.ndarray, pb: np.ndarray) -> FundamentalMatrix:
    na, ta = _hartley_normalize(pa)
    nb, tb = _hartley_normalize(pb)
    x1, y1 = na[:, 0], na[:, 1]
    x2, y2 = nb[:, 0], nb[:, 1]
    a = np.column_stack(
        [x2 * x1, x2 * y1, x2, y2 * x1, y2 * y1, y2, x1, y1, np.ones_like(x1)]
    )
    _, s, vt = np.linalg.svd(a)
    if len(pa) > 8 and s[-2] < 1e-10 * max(s[0], 1.0):
        raise DegenerateConfiguration("correspondences do not determine F")
    f_norm = vt[-1].reshape(3, 3)
    return FundamentalMatrix(tb.T @ f_norm @ ta)


def sampson_distance(f: FundamentalMatrix, pixels_a, pixels_b) -> np.ndarray:
    """First-order geometric residual of the epipolar constraint, in pixels."""
    pa = np.asarray(pixels_a, dtype=float).reshape(-1, 2)
    pb = np.asarray(pixels_b, dtype=float).reshape(-1, 2)
    x1 = np.column_stack([pa, np.ones(len(pa))])
    x2 = np.column_stack([pb, np.ones(len(pb))])
    fx1 = x1 @ f.m.T
    ftx2 = x2 @ f.m
    num = np.sum(x2 * fx1, axis=1)
    denom = fx1[:, 0] ** 2 + fx1[:, 1] ** 2 + ftx2[:, 0] ** 2 + ftx2[:, 1] ** 2
    return np.abs(num) / np.sqrt(np.maximum(denom, 1e-300))


def estimate_fundamental(pixels_a, pixels_b, threshold: float = 1.0,
                         confidence: float = 0.999, max_iterations: int = 2000,
                         seed: int = 0) -> EpipolarEstimate:
    """RANSAC + normalized 8-point fit; final F re-fit on all inliers."""
    pa = np.asarray(pixels_a, dtype=float).reshape(-1, 2)
    pb = np.asarray(pixels_b, dtype=float).reshape(-1, 2)
    n = len(pa)
    if n != len(pb):
        raise ValueError("pixel lists must have equal length")
    if n < 8:
        raise InsufficientMatches(f"need >= 8 correspondences, got {n}")

    rng = np.random.default_rng(seed)
    best_inliers = None
    best_count = 0
    iterations = max_iterations
    it = 0
    while it < iterations:
        it += 1
        sample = rng.choice(n, size=8, replace=False)
        try:
            f = _eight_point(pa[sample], pb[sample])
        except (DegenerateConfiguration, np.linalg.LinAlgError):
            continue
        resid = sampson_distance(f, pa, pb)
        inliers = resid <= threshold
        count = int(inliers.sum())
        if count > best_count:
            best_count = count
            best_inliers = inliers
            ratio = count / n
            if ratio > 0:
                denom = np.log(max(1e-12, 1.0 - ratio**8))
                if denom < 0:
                    iterations = min(max_iterations,
                                     int(np.ceil(np.log(1.0 - confidence) / denom)))
    if best_inliers is None or best_count < 8:
        raise DegenerateConfiguration("RANSAC found no 8-inlier model")

    # Re-fit on the consensus set, then recompute inliers once against the
    # refined model.
    idx = np.flatnonzero(best_inliers)
    f = _eight_point(pa[idx], pb[idx])
    resid = sampson_distance(f, pa, pb)
    inliers = np.flatnonzero(resid <= threshold)
    if len(inliers) < 8:
        inliers = idx
    else:
        f = _eight_point(pa[inliers], pb[inliers])
        resid = sampson_distance(f, pa, pb)
        inliers = np.flatnonzero(resid <= threshold)
        if len(inliers) < 8:
            raise DegenerateConfiguration("inlier set collapsed during re-fit")
    return EpipolarEstimate(f=f, inlier_indices=inliers, residuals=resid)


def epipole_of(f: FundamentalMatrix, which: str = "right") -> np.ndarray:
    """Finite epipole as a pixel; 'right' solves F e = 0 (epipole in image 1),
    'left' solves F^T e' = 0 (epipole in image 2)."""
    if which not in ("left", "right"):
        raise ValueError("which must be 'left' or 'right'")
    m = f.m if which == "right" else f.m.T
    _, _, vt = np.linalg.svd(m)
    e = vt[-1]
    if abs(e[2]) < 1e-10:
        d = e[:2] / np.linalg.norm(e[:2])
        raise EpipoleAtInfinity(d)
    return e[:2] / e[2]


def refine_relative_pose(pose_rel: RigidPose, k: CameraIntrinsics,
                         inlier_pixels_a, inlier_pixels_b) -> RigidPose:
    """Nonlinear refinement of (R, t) minimizing Sampson error over inliers.

    The essential-matrix decomposition inherits the linear estimate's bias;
    re-optimizing on the 5-DOF manifold (rotation vector plus unit-sphere
    translation direction) typically cuts the translation-direction error by
    several-fold. Returns a pose with ||t|| = 1.
    """
    from scipy.optimize import least_squares
    from scipy.spatial.transform import Rotation

    pa = np.asarray(inlier_pixels_a, dtype=float).reshape(-1, 2)
    pb = np.asarray(inlier_pixels_b, dtype=float).reshape(-1, 2)
    if len(pa) < 5:
        return pose_rel
    kinv = np.linalg.inv(k.matrix)
    xa = np.column_stack([pa, np.ones(len(pa))]) @ kinv.T
    xb = np.column_stack([pb, np.ones(len(pb))]) @ kinv.T

    t0 = pose_rel.t / np.linalg.norm(pose_rel.t)
    x0 = np.concatenate([
        Rotation.from_matrix(pose_rel.r).as_rotvec(),
        [np.arccos(np.clip(t0[2], -1.0, 1.0)), np.arctan2(t0[1], t0[0])],
    ])

    def unpack(x):
        r = Rotation.from_rotvec(x[:3]).as_matrix()
        theta, phi = x[3], x[4]
        t = np.array([
            np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)
        ])
        return r, t

    def residuals(x):
        r, t = unpack(x)
        e = _cross_matrix(t) @ r
        ex1 = xa @ e.T
        etx2 = xb @ e
        num = np.sum(xb * ex1, axis=1)
        den = ex1[:, 0] ** 2 + ex1[:, 1] ** 2 + etx2[:, 0] ** 2 + etx2[:, 1] ** 2
        return num / np.sqrt(np.maximum(den, 1e-18))

    sol = least_squares(residuals, x0, method="lm", max_nfev=200)
    if np.sum(residuals(sol.x) ** 2) > np.sum(residuals(x0) ** 2):
        return pose_rel
    r, t = unpack(sol.x)
    return RigidPose(r, t)


def fundamental_from_pose(pose_rel: RigidPose, k: CameraIntrinsics) -> FundamentalMatrix:
    """Ground-truth F = K^-T [t]x R K^-1 from the relative pose (frame1 -> frame2)."""
    kinv = np.linalg.inv(k.matrix)
    e = _cross_matrix(pose_rel.t) @ pose_rel.r
    return FundamentalMatrix(kinv.T @ e @ kinv)


def _decompose_essential(e: np.ndarray):
    u, _, vt = np.linalg.svd(e)
    if np.linalg.det(u) < 0:
        u = -u
    if np.linalg.det(vt) < 0:
        vt = -vt
    w = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    r1 = u @ w @ vt
    r2 = u @ w.T @ vt
    t = u[:, 2]
    t = t / np.linalg.norm(t)
    return [(r1, t), (r1, -t), (r2, t), (r2, -t)]


def recover_relative_pose(f: FundamentalMatrix, k: CameraIntrinsics,
                          inlier_pixels_a, inlier_pixels_b,
                          min_vote_fraction: float = 0.75,
                          refine: bool = True) -> RigidPose:
    """Decompose E = K^T F K, pick the candidate by cheirality voting, then
    refine it with a Sampson-error minimization over the inliers.

    Returns the pose of camera 2 relative to camera 1 with ||t|| = 1.
    """
    pa = np.asarray(inlier_pixels_a, dtype=float).reshape(-1, 2)
    pb = np.asarray(inlier_pixels_b, dtype=float).reshape(-1, 2)
    if len(pa) < 1:
        raise InsufficientMatches("need at least one correspondence for cheirality")

    e = k.matrix.T @ f.m @ k.matrix
    pose1 = RigidPose.identity()
    votes = []
    candidates = []
    for r, t in _decompose_essential(e):
        pose2 = RigidPose(r, t)
        n_front = 0
        for ua, ub in zip(pa, pb):
            try:
                _, behind = triangulate_point(ua, ub, pose1, pose2, k)
            except DegenerateRays:
                continue
            if not behind:
                n_front += 1
        votes.append(n_front)
        candidates.append(pose2)
    votes = np.array(votes)
    best = int(np.argmax(votes))
    if votes[best] < min_vote_fraction * len(pa):
        raise CheiralityAmbiguous(
            f"best candidate has {votes[best]}/{len(pa)} positive-depth votes"
        )
    pose = candidates[best]
    if refine:
        pose = refine_relative_pose(pose, k, pa, pb)
    return pose
