"""Deterministic synthetic street scenes with exact ground truth.

Scenes are a flat road flanked by two textured facade walls, rendered by
per-pixel ray casting with a pinhole camera. Every rendered surface point has
a closed-form 3D position, so projections, the fundamental matrix between
views, and per-pixel paint labels are exact by construction. This is the
independent oracle used throughout the test suite.

World frame = the first database camera: x right, y down, z forward; the
ground plane sits at y = camera_height.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .epipolar import FundamentalMatrix, fundamental_from_pose
from .errors import SpecInvalid
from .geometry import CameraIntrinsics, RigidPose, project_many

ASPHALT = np.array([0.32, 0.32, 0.33])
SKY = np.array([0.58, 0.7, 0.84])
WALL_BASE = np.array([0.5, 0.48, 0.46])
# Facade texture is tinted brick-like so bright wall cells never pass the
# white-paint color gate (saturation stays above the white threshold).
WALL_TINT = np.array([1.0, 0.72, 0.5])
PAINT_YELLOW = np.array([0.95, 0.85, 0.15])
PAINT_WHITE = np.array([0.95, 0.95, 0.95])


@dataclass(frozen=True)
class LaneLineSpec:
    x_offset: float  # meters from the road center line
    color: str = "yellow"  # "yellow" | "white"
    width: float = 0.15
    dashed: bool = False
    dash_length: float = 3.0
    gap_length: float = 4.5
    z_range: tuple = (2.0, 40.0)


@dataclass(frozen=True)
class DegradationSpec:
    """Applied only to the current frame; never changes geometry."""

    erase_paint: bool = True
    gain: float = 1.0
    noise_sigma: float = 0.0


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    image_size: tuple = (640, 360)
    intrinsics: CameraIntrinsics | None = None
    camera_height: float = 1.4
    road_width: float = 7.4
    wall_margin: float = 1.5
    lane_lines: tuple = (
        LaneLineSpec(-1.85, "white"),
        LaneLineSpec(0.0, "yellow", dashed=True),
        LaneLineSpec(1.85, "white"),
    )
    # Multiplicative albedo speckle anchored to world (x, z); asphalt texture
    # is what makes lane-pixel matching along near-radial stripes well posed.
    asphalt_texture: float = 0.18
    paint_texture: float = 0.06
    features_left: int = 90
    features_right: int = 90
    facade_z_range: tuple = (6.0, 30.0)
    facade_y_range: tuple = (-2.8, 1.0)
    blob_radius: float = 0.45
    db_poses: tuple = (
        RigidPose.identity(),
        RigidPose(np.eye(3), np.array([0.0, 0.0, -1.5])),  # camera 1.5 m ahead
    )
    current_pose: RigidPose = RigidPose(np.eye(3), np.array([0.15, 0.05, -0.75]))
    degradation: DegradationSpec = DegradationSpec()

    def resolved_intrinsics(self) -> CameraIntrinsics:
        if self.intrinsics is not None:
            return self.intrinsics
        w, h = self.image_size
        return CameraIntrinsics(fx=0.9 * w, fy=0.9 * w, cx=(w - 1) / 2.0, cy=(h - 1) / 2.0)


@dataclass(frozen=True)
class GroundTruth:
    spec: SceneSpec
    intrinsics: CameraIntrinsics
    poses: tuple  # db poses followed by the current pose
    feature_points: np.ndarray  # (n, 3) wall feature centers
    feature_sides: np.ndarray  # (n,) -1 left wall, +1 right wall
    feature_projections: list  # per view: ((n, 2) pixels, (n,) bool visible)
    lane_polylines: list  # per lane line: (m, 3) centerline samples
    paint_masks: list  # per view: (h, w) bool
    f_true: FundamentalMatrix  # between db views 0 and 1


def _validate(spec: SceneSpec):
    if len(spec.db_poses) < 2:
        raise SpecInvalid("need at least two database poses")
    if spec.features_left < 0 or spec.features_right < 0:
        raise SpecInvalid("facade feature counts must be >= 0")
    if spec.road_width <= 0 or spec.camera_height <= 0:
        raise SpecInvalid("road width and camera height must be positive")


def _paint_lookup(spec: SceneSpec, x: np.ndarray, z: np.ndarray):
    """(is_paint, color_index) for ground-plane coordinates; 0 yellow, 1 white."""
    paint = np.zeros(x.shape, dtype=bool)
    color = np.zeros(x.shape, dtype=np.int8)
    for line in spec.lane_lines:
        on = (np.abs(x - line.x_offset) <= line.width / 2.0) & (
            z >= line.z_range[0]
        ) & (z <= line.z_range[1])
        if line.dashed:
            period = line.dash_length + line.gap_length
            on &= np.mod(z, period) < line.dash_length
        paint |= on
        color = np.where(on, 0 if line.color == "yellow" else 1, color)
    return paint, color


_PATTERN_CELLS = 3

# Octaves of world-anchored value noise: the fine cells give near-field
# texture, the coarse ones stay resolvable at the far end of the lane range.
_TEX_CELLS_M = (0.15, 0.45, 1.35)
_TEX_WEIGHTS = (0.45, 0.35, 0.2)
_TEX_GRID = 512  # grid extent before an octave tiles


def _ground_speckle(seed: int) -> np.ndarray:
    """World-anchored speckle grid; independent of the scene's feature RNG."""
    rng = np.random.default_rng((seed * 2654435761 + 1) % (2**32))
    return rng.random((len(_TEX_CELLS_M), _TEX_GRID, _TEX_GRID))


def _speckle_at(grids: np.ndarray, x: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Multi-octave bilinear speckle at ground coordinates, in [0, 1]."""
    total = np.zeros(np.shape(x))
    for grid, cell, weight in zip(grids, _TEX_CELLS_M, _TEX_WEIGHTS):
        gi = np.mod(x / cell, _TEX_GRID)
        gj = np.mod(z / cell, _TEX_GRID)
        i0 = np.floor(gi).astype(int)
        j0 = np.floor(gj).astype(int)
        fi, fj = gi - i0, gj - j0
        i1 = (i0 + 1) % _TEX_GRID
        j1 = (j0 + 1) % _TEX_GRID
        total += weight * (
            grid[i0, j0] * (1 - fi) * (1 - fj)
            + grid[i1, j0] * fi * (1 - fj)
            + grid[i0, j1] * (1 - fi) * fj
            + grid[i1, j1] * fi * fj
        )
    return total


def _facade_features(spec: SceneSpec, rng: np.random.Generator):
    """Feature centers plus a unique random surround pattern per feature.

    The inner quarter of each blob is a quadrant checker (an exact corner at
    the 3D center); the surround is a random binary grid so descriptors can
    tell blobs apart.
    """
    wall_x = spec.road_width / 2.0 + spec.wall_margin
    pts = []
    sides = []
    patterns = []
    for side, count in ((-1, spec.features_left), (1, spec.features_right)):
        ys = rng.uniform(*spec.facade_y_range, size=count)
        zs = rng.uniform(*spec.facade_z_range, size=count)
        for y, z in zip(ys, zs):
            pts.append([side * wall_x, y, z])
            sides.append(side)
            patterns.append(
                (rng.random((_PATTERN_CELLS, _PATTERN_CELLS)) < 0.5,
                 rng.uniform(0.0, 2.0 * np.pi))
            )
    if not pts:
        return np.empty((0, 3)), np.empty((0,), dtype=int), []
    return np.array(pts), np.array(sides, dtype=int), patterns


def _render_view(spec: SceneSpec, k: CameraIntrinsics, pose: RigidPose,
                 features: np.ndarray, sides: np.ndarray, patterns: list,
                 paint_on: bool, speckle: np.ndarray | None = None):
    w, h = spec.image_size
    us, vs = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    d_cam = np.linalg.solve(
        k.matrix, np.stack([us.ravel(), vs.ravel(), np.ones(w * h)])
    )
    d = pose.r.T @ d_cam  # (3, n) ray directions in world coords
    c = pose.center

    n = w * h
    img = np.tile(SKY, (n, 1))
    depth = np.full(n, np.inf)
    paint_mask = np.zeros(n, dtype=bool)

    # Ground plane y = camera_height.
    dy = d[1]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ground = (spec.camera_height - c[1]) / dy
    hit = (dy > 1e-9) & (t_ground > 0.1)
    gx = c[0] + t_ground * d[0]
    gz = c[2] + t_ground * d[2]
    paint, color_idx = _paint_lookup(spec, gx, gz)
    ground_color = np.tile(ASPHALT, (n, 1))
    if paint_on:
        ground_color[paint & (color_idx == 0)] = PAINT_YELLOW
        ground_color[paint & (color_idx == 1)] = PAINT_WHITE
    if speckle is not None:
        tex = _speckle_at(speckle, gx[hit], gz[hit]) - 0.5
        amp = np.where(paint[hit] & paint_on, spec.paint_texture, spec.asphalt_texture)
        ground_color[hit] *= (1.0 + 2.0 * amp * tex)[:, None]
    img[hit] = ground_color[hit]
    depth[hit] = t_ground[hit]
    paint_mask[hit] = paint[hit] & paint_on

    # Facade walls x = +/- wall_x, limited in height.
    wall_x = spec.road_width / 2.0 + spec.wall_margin
    y_top, y_bottom = spec.facade_y_range[0] - 1.0, spec.camera_height
    for side in (-1, 1):
        dx = d[0]
        with np.errstate(divide="ignore", invalid="ignore"):
            t_wall = (side * wall_x - c[0]) / dx
        wy = c[1] + t_wall * d[1]
        wz = c[2] + t_wall * d[2]
        hit_w = (
            np.isfinite(t_wall)
            & (t_wall > 0.1)
            & (t_wall < depth)
            & (wy >= y_top)
            & (wy <= y_bottom)
            & (wz > 0.0)
        )
        shade = WALL_BASE[None, :] * (1.0 - 0.2 * np.clip(wz / 80.0, 0, 1))[:, None]
        wall_color = shade.copy()
        rho = spec.blob_radius
        cell = 2.0 * rho / _PATTERN_CELLS
        for (fx, fy, fz), fside, (pattern, ramp_dir) in zip(features, sides, patterns):
            if fside != side:
                continue
            near = (np.abs(wy - fy) <= rho) & (np.abs(wz - fz) <= rho)
            if not near.any():
                continue
            ny, nz = wy[near] - fy, wz[near] - fz
            # Unique random surround so descriptors can tell blobs apart.
            iy = np.clip(((ny + rho) / cell).astype(int), 0, _PATTERN_CELLS - 1)
            iz = np.clip(((nz + rho) / cell).astype(int), 0, _PATTERN_CELLS - 1)
            bit = pattern[iy, iz]
            # Inner quadrant checker: an exact corner at the feature center.
            inner = (np.abs(ny) <= rho / 3.0) & (np.abs(nz) <= rho / 3.0)
            bit = np.where(inner, (ny >= 0) ^ (nz >= 0), bit)
            val = np.where(bit, 0.92, 0.08)
            # Intensity ramp along a per-feature direction keeps the patch's
            # intensity centroid (descriptor steering) stable across views.
            ramp = 0.5 + (ny * np.sin(ramp_dir) + nz * np.cos(ramp_dir)) / (2 * rho)
            val = 0.6 * val + 0.4 * np.clip(ramp, 0.0, 1.0)
            wall_color[near] = val[:, None] * WALL_TINT[None, :]
        img[hit_w] = wall_color[hit_w]
        depth[hit_w] = t_wall[hit_w]
        paint_mask[hit_w] = False

    image = img.reshape(h, w, 3)
    return np.clip(image, 0.0, 1.0), paint_mask.reshape(h, w)


def generate_scene(spec: SceneSpec):
    """Render all views and assemble exact ground truth.

    Returns (images, truth); images are db views in order, then the degraded
    current view.
    """
    _validate(spec)
    rng = np.random.default_rng(spec.seed)
    k = spec.resolved_intrinsics()
    features, sides, patterns = _facade_features(spec, rng)
    speckle = _ground_speckle(spec.seed) if (
        spec.asphalt_texture > 0 or spec.paint_texture > 0
    ) else None
    poses = tuple(spec.db_poses) + (spec.current_pose,)

    images = []
    paint_masks = []
    projections = []
    w, h = spec.image_size
    for i, pose in enumerate(poses):
        is_current = i == len(poses) - 1
        paint_on = not (is_current and spec.degradation.erase_paint)
        img, mask = _render_view(spec, k, pose, features, sides, patterns, paint_on,
                                 speckle=speckle)
        if is_current:
            deg = spec.degradation
            img = img * deg.gain
            if deg.noise_sigma > 0:
                img = img + rng.normal(scale=deg.noise_sigma, size=img.shape)
            img = np.clip(img, 0.0, 1.0)
        images.append(img)
        paint_masks.append(mask)
        if len(features):
            uv, z = project_many(features, pose, k)
            visible = (z > 0) & (uv[:, 0] >= 0) & (uv[:, 0] <= w - 1) & (
                uv[:, 1] >= 0
            ) & (uv[:, 1] <= h - 1)
        else:
            uv = np.empty((0, 2))
            visible = np.empty((0,), dtype=bool)
        projections.append((uv, visible))

    polylines = []
    for line in spec.lane_lines:
        zs = np.linspace(line.z_range[0], line.z_range[1], 200)
        polylines.append(
            np.column_stack(
                [np.full_like(zs, line.x_offset), np.full_like(zs, spec.camera_height), zs]
            )
        )

    rel = poses[1].compose(poses[0].inverse())
    truth = GroundTruth(
        spec=spec,
        intrinsics=k,
        poses=poses,
        feature_points=features,
        feature_sides=sides,
        feature_projections=projections,
        lane_polylines=polylines,
        paint_masks=paint_masks,
        f_true=fundamental_from_pose(rel, k),
    )
    return images, truth


def sample_correspondences(truth: GroundTruth, n: int, rng: np.random.Generator,
                           views=(0, 1)):
    """Random scene-surface points visible in both requested views.

    Returns ((m, 3) points, (m, 2) pixels in view a, (m, 2) pixels in view b)
    with m <= n; projections are exact.
    """
    spec = truth.spec
    wall_x = spec.road_width / 2.0 + spec.wall_margin
    pts = []
    # Mix of wall points and ground points across the visible depth range.
    n_wall = n // 2
    side = rng.choice([-1.0, 1.0], size=n_wall)
    ys = rng.uniform(*spec.facade_y_range, size=n_wall)
    zs = rng.uniform(*spec.facade_z_range, size=n_wall)
    pts.append(np.column_stack([side * wall_x, ys, zs]))
    n_ground = n - n_wall
    gx = rng.uniform(-spec.road_width / 2.0, spec.road_width / 2.0, size=n_ground)
    gz = rng.uniform(spec.facade_z_range[0], spec.facade_z_range[1], size=n_ground)
    pts.append(np.column_stack([gx, np.full(n_ground, spec.camera_height), gz]))
    pts = np.vstack(pts)

    w, h = spec.image_size
    keep = np.ones(len(pts), dtype=bool)
    uvs = []
    for v in views:
        uv, z = project_many(pts, truth.poses[v], truth.intrinsics)
        keep &= (z > 0) & (uv[:, 0] >= 0) & (uv[:, 0] <= w - 1) & (uv[:, 1] >= 0) & (
            uv[:, 1] <= h - 1
        )
        uvs.append(uv)
    return pts[keep], uvs[0][keep], uvs[1][keep]
