"""Pinhole camera model, rigid poses, DLT triangulation and reprojection error.

Conventions: world frame is the first database camera; image origin is the
top-left corner; a pose (R, t) maps world coordinates into the camera frame,
x_cam = R @ x_world + t.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateProjection, DegenerateRays

_W_EPS = 1e-12


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    skew: float = 0.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not np.all(np.isfinite([self.fx, self.fy, self.cx, self.cy, self.skew])):
            raise ValueError("intrinsics must be finite")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [
                [self.fx, self.skew, self.cx],
                [0.0, self.fy, self.cy],
                [0.0, 0.0, 1.0],
            ]
        )

    @classmethod
    def from_matrix(cls, k: np.ndarray) -> "CameraIntrinsics":
        k = np.asarray(k, dtype=float)
        return cls(fx=k[0, 0], fy=k[1, 1], cx=k[0, 2], cy=k[1, 2], skew=k[0, 1])


@dataclass(frozen=True)
class RigidPose:
    """World-to-camera rigid transform; R must be a proper rotation."""

    r: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float).reshape(3, 3)
        t = np.asarray(self.t, dtype=float).reshape(3)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "t", t)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9):
            raise ValueError("R is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("R is not a proper rotation (det != 1)")

    @classmethod
    def identity(cls) -> "RigidPose":
        return cls(np.eye(3), np.zeros(3))

    @property
    def matrix(self) -> np.ndarray:
        """3x4 [R | t]."""
        return np.hstack([self.r, self.t[:, None]])

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.r.T @ self.t

    def inverse(self) -> "RigidPose":
        return RigidPose(self.r.T, -self.r.T @ self.t)

    def compose(self, other: "RigidPose") -> "RigidPose":
        """self ∘ other: apply `other` first."""
        return RigidPose(self.r @ other.r, self.r @ other.t + self.t)


def projection_matrix(pose: RigidPose, k: CameraIntrinsics) -> np.ndarray:
    """3x4 projection matrix K [R | t]."""
    return k.matrix @ pose.matrix


def project(point, pose: RigidPose, k: CameraIntrinsics):
    """Project a 3D world point to a pixel.

    Returns (pixel (2,), depth) where depth is the signed z in the camera
    frame; callers use the sign for cheirality checks.
    """
    p = np.asarray(point, dtype=float).reshape(3)
    x_cam = pose.r @ p + pose.t
    z = x_cam[2]
    if abs(z) < _W_EPS:
        raise DegenerateProjection(f"point on the camera plane, z={z}")
    uvw = k.matrix @ x_cam
    return uvw[:2] / uvw[2], z


def project_many(points, pose: RigidPose, k: CameraIntrinsics):
    """Vectorized projection of (n,3) points; returns ((n,2) pixels, (n,) depths).

    Rows with |depth| below tolerance come back as NaN rather than raising.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    x_cam = pts @ pose.r.T + pose.t
    z = x_cam[:, 2]
    safe = np.abs(z) >= _W_EPS
    uvw = x_cam @ k.matrix.T
    uv = np.full((len(pts), 2), np.nan)
    uv[safe] = uvw[safe, :2] / uvw[safe, 2:3]
    return uv, z


def _cross_matrix(v: np.ndarray) -> np.ndarray:
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def ray_direction(pixel, pose: RigidPose, k: CameraIntrinsics) -> np.ndarray:
    """Unit viewing-ray direction in world coordinates for a pixel."""
    uv = np.asarray(pixel, dtype=float).reshape(2)
    d_cam = np.linalg.solve(k.matrix, np.array([uv[0], uv[1], 1.0]))
    d = pose.r.T @ d_cam
    return d / np.linalg.norm(d)


def _refine_triangulated(x, u1, u2, pose1: RigidPose, pose2: RigidPose,
                         k: CameraIntrinsics, max_iter: int = 10):
    """Gauss-Newton minimization of the two-view pixel residuals of `x`."""
    obs = (u1, u2)
    poses = (pose1, pose2)
    for _ in range(max_iter):
        rows = []
        resid = []
        for u, pose in zip(obs, poses):
            cam = pose.r @ x + pose.t
            if cam[2] <= _W_EPS:
                return x
            inv_z = 1.0 / cam[2]
            proj = np.array([
                k.fx * cam[0] * inv_z + k.cx,
                k.fy * cam[1] * inv_z + k.cy,
            ])
            resid.append(proj - u)
            rows.append(k.fx * inv_z * (pose.r[0] - cam[0] * inv_z * pose.r[2]))
            rows.append(k.fy * inv_z * (pose.r[1] - cam[1] * inv_z * pose.r[2]))
        j = np.array(rows)
        r = np.concatenate(resid)
        if np.linalg.norm(r) < 1e-12:
            break
        try:
            step, *_ = np.linalg.lstsq(j, -r, rcond=None)
        except np.linalg.LinAlgError:
            break
        # Only keep a step that actually reduces the residual; halve it a few
        # times if the quadratic model overshoots.
        best = np.sum(r**2)
        for _ in range(6):
            cand = x + step
            err = 0.0
            valid = True
            for u, pose in zip(obs, poses):
                cam = pose.r @ cand + pose.t
                if cam[2] <= _W_EPS:
                    valid = False
                    break
                proj = np.array([
                    k.fx * cam[0] / cam[2] + k.cx,
                    k.fy * cam[1] / cam[2] + k.cy,
                ])
                err += np.sum((proj - u) ** 2)
            if valid and err < best:
                break
            step = 0.5 * step
        else:
            break
        if valid and err < best:
            if np.linalg.norm(step) < 1e-12 * max(1.0, np.linalg.norm(x)):
                x = cand
                break
            x = cand
        else:
            break
    return x


def triangulate_point(u1, u2, pose1: RigidPose, pose2: RigidPose, k: CameraIntrinsics,
                      min_ray_angle: float = 1e-6):
    """DLT triangulation from two pixel observations.

    Stacks the cross-product constraints [u_i]x K[R_i|t_i] X = 0 of both views
    (all three rows each) and takes the smallest right singular vector.

    Returns (point (3,), behind_camera) where behind_camera is True when the
    solution has negative depth in either view.
    """
    u1 = np.asarray(u1, dtype=float).reshape(2)
    u2 = np.asarray(u2, dtype=float).reshape(2)

    d1 = ray_direction(u1, pose1, k)
    d2 = ray_direction(u2, pose2, k)
    angle = np.arccos(np.clip(abs(d1 @ d2), 0.0, 1.0))
    if angle <= min_ray_angle:
        raise DegenerateRays(f"viewing rays nearly parallel (angle {angle:.2e} rad)")

    p1 = projection_matrix(pose1, k)
    p2 = projection_matrix(pose2, k)
    a = np.vstack(
        [
            _cross_matrix(np.array([u1[0], u1[1], 1.0])) @ p1,
            _cross_matrix(np.array([u2[0], u2[1], 1.0])) @ p2,
        ]
    )
    _, _, vt = np.linalg.svd(a)
    xh = vt[-1]
    if abs(xh[3]) < _W_EPS:
        raise DegenerateRays("homogeneous solution at infinity")
    x = xh[:3] / xh[3]
    # The algebraic solution minimizes a depth-weighted residual, which on
    # noisy observations can sit several pixels from the reprojection
    # optimum; a short Gauss-Newton descent on the true pixel residuals
    # closes that gap at negligible cost.
    x = _refine_triangulated(x, u1, u2, pose1, pose2, k)

    z1 = (pose1.r @ x + pose1.t)[2]
    z2 = (pose2.r @ x + pose2.t)[2]
    return x, bool(z1 <= 0 or z2 <= 0)


def triangulate_midpoint(u1, u2, pose1: RigidPose, pose2: RigidPose, k: CameraIntrinsics):
    """Independent two-ray midpoint triangulation (closed form, no SVD).

    Used as an oracle against the DLT route; finds the midpoint of the
    shortest segment between the two viewing rays.
    """
    c1, c2 = pose1.center, pose2.center
    d1 = ray_direction(u1, pose1, k)
    d2 = ray_direction(u2, pose2, k)
    # Solve [d1, -d2] [s; t] = c2 - c1 in the least-squares sense.
    a = np.stack([d1, -d2], axis=1)
    s, t = np.linalg.lstsq(a, c2 - c1, rcond=None)[0]
    return 0.5 * ((c1 + s * d1) + (c2 + t * d2))


def reprojection_error(point, observed, pose: RigidPose, k: CameraIntrinsics) -> float:
    """Euclidean pixel distance between the projection of `point` and `observed`."""
    uv, _ = project(point, pose, k)
    return float(np.linalg.norm(uv - np.asarray(observed, dtype=float).reshape(2)))
