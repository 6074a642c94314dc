"""End-to-end orchestration: database search, reconstruction, registration,
lane projection, overlay rendering, and metrics."""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import database, features
from .epipolar import estimate_fundamental, recover_relative_pose
from .errors import (
    DegenerateRays,
    NarrowBaselineWarning,
    PipelineStageError,
    SafeDriveError,
    TooFewPoints,
)
from .geometry import RigidPose, reprojection_error, triangulate_point
from .image_io import load_color, save_color
from .lane_detection import ColorThresholds, detect_lane_pixels, to_gray
from .lane_matching import (
    filter_plane_outliers,
    match_lane_pixels,
    triangulate_lane_markers,
)
from .polar import build_polar_maps
from .registration import (
    ModelPoint,
    StreetModel,
    check_dispersity,
    feature_distribution_metrics,
    match_to_model,
    project_lane_markers,
    solve_pnp,
)

REPORT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class RunConfig:
    manifest: str
    image: str
    lat: float
    lon: float
    radius: float = 100.0
    # intrinsics
    fx: float = 1261.46807
    fy: float = 1259.44016
    cx: float = 619.89385
    cy: float = 356.46599
    # feature pipeline
    max_features: int = 2000
    min_spacing: float = 8.0
    match_max_distance: int = 64
    min_overlap: int = 30
    # robust fits
    ransac_threshold: float = 1.0
    pnp_threshold: float = 3.0
    pnp_min_inliers: int = 6
    # lane detection / matching
    hsv: ColorThresholds = field(default_factory=ColorThresholds)
    canny_low: float = 0.1
    canny_high: float = 0.25
    lane_match_max_score: float = 0.25
    lane_ambiguity_margin: float = 0.05
    max_reproj: float = 2.0
    # dispersity warning thresholds
    min_dispersity: float = 0.12
    max_center_offset: float = 0.25
    seed: int = 0
    truth: str | None = None  # sidecar with `u1 v1 u2 v2`
    truth_color: str = "yellow"  # lane color class the truth line refers to

    @property
    def intrinsics(self):
        from .geometry import CameraIntrinsics

        return CameraIntrinsics(fx=self.fx, fy=self.fy, cx=self.cx, cy=self.cy)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        data = json.loads(text)
        hsv = data.pop("hsv", None)
        cfg = cls(**data)
        if hsv is not None:
            cfg = replace(cfg, hsv=ColorThresholds(**{
                k: tuple(v) if isinstance(v, list) else v for k, v in hsv.items()
            }))
        return cfg


@dataclass
class MetricsReport:
    schema_version: int = REPORT_SCHEMA_VERSION
    candidate_ids: list = field(default_factory=list)
    candidate_match_counts: list = field(default_factory=list)
    pair_ids: tuple = ()
    feature_match_count: int = 0
    feature_inlier_count: int = 0
    model_point_count: int = 0
    mean_feature_reproj_px: float = 0.0
    lane_pixel_counts: tuple = (0, 0)
    lane_match_count: int = 0
    lane_point_count: int = 0
    lane_discard_count: int = 0
    mean_lane_reproj_px: float = 0.0
    pnp_correspondences: int = 0
    pnp_inlier_count: int = 0
    pnp_mean_projection_error_px: float = 0.0
    dispersity: float = 0.0
    horizontal_center: float = 0.0
    projected_lane_pixel_count: int = 0
    average_offset_px: float | None = None
    warnings: list = field(default_factory=list)
    timings_s: dict = field(default_factory=dict)

    def to_text(self, include_timings: bool = True) -> str:
        """Versioned key/value serialization; timings are excluded when
        comparing runs for determinism."""
        lines = [f"schema_version: {self.schema_version}"]
        skip = {"schema_version", "timings_s"}
        for key, value in sorted(asdict(self).items()):
            if key in skip:
                continue
            lines.append(f"{key}: {value}")
        if include_timings:
            for stage, dt in self.timings_s.items():
                lines.append(f"time_{stage}: {dt:.3f}")
        return "\n".join(lines) + "\n"


class _StageTimer:
    def __init__(self, report: MetricsReport):
        self.report = report
        self.stage = None

    def run(self, stage, fn, *args, **kwargs):
        t0 = time.perf_counter()
        try:
            result = fn(*args, **kwargs)
        except SafeDriveError as exc:
            raise PipelineStageError(stage, exc) from exc
        self.report.timings_s[stage] = time.perf_counter() - t0
        return result


def fit_line(points: np.ndarray):
    """Total-least-squares line through 2D points: (point_on_line, unit_dir)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    centroid = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - centroid)
    return centroid, vt[0]


def _least_median_line(pts: np.ndarray, max_pairs: int = 256):
    """Two-point line minimizing the median perpendicular residual."""
    n = len(pts)
    rng = np.random.default_rng(0)
    best = None
    for _ in range(min(max_pairs, n * (n - 1) // 2)):
        i, j = rng.choice(n, size=2, replace=False)
        d = pts[j] - pts[i]
        norm = np.linalg.norm(d)
        if norm < 1e-9:
            continue
        d = d / norm
        normal = np.array([-d[1], d[0]])
        med = np.median(np.abs((pts - pts[i]) @ normal))
        if best is None or med < best[0]:
            best = (med, pts[i], d)
    if best is None:
        return fit_line(pts)
    return best[1], best[2]


def fit_line_trimmed(points: np.ndarray, n_rounds: int = 4):
    """Least-squares line on inliers of a least-median-of-squares seed.

    Badly-triangulated markers otherwise drag the plain least-squares line
    far from the pixel mass it is meant to represent; the median seed keeps
    the fit anchored to the majority even with heavy contamination.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 2:
        return fit_line(pts)
    p0, d = _least_median_line(pts)
    keep = np.ones(len(pts), dtype=bool)
    for _ in range(n_rounds):
        normal = np.array([-d[1], d[0]])
        resid = np.abs((pts - p0) @ normal)
        scale = 1.4826 * np.median(resid[keep])
        new_keep = resid <= max(3.0 * scale, 1.0)
        if new_keep.sum() < 2 or np.array_equal(new_keep, keep):
            break
        keep = new_keep
        p0, d = fit_line(pts[keep])
    return p0, d


def evaluate_offset(projected, ground_truth_line, dims, n_samples: int = 100) -> float:
    """Mean perpendicular distance between the least-squares line through the
    projected pixels and the ground-truth segment."""
    projected = np.asarray(projected, dtype=float).reshape(-1, 2)
    if len(projected) < 2:
        raise TooFewPoints(f"need >= 2 projected pixels, got {len(projected)}")
    p0, d = fit_line_trimmed(projected)
    normal = np.array([-d[1], d[0]])
    gt = np.asarray(ground_truth_line, dtype=float).reshape(2, 2)
    ts = np.linspace(0.0, 1.0, n_samples)
    samples = gt[0] + ts[:, None] * (gt[1] - gt[0])
    return float(np.mean(np.abs((samples - p0) @ normal)))


def _draw_overlay(image: np.ndarray, lane_pixels: np.ndarray, dims) -> np.ndarray:
    """Projected lane pixels as 3 px disks plus their fitted line."""
    out = np.asarray(image, dtype=float).copy()
    if out.ndim == 2:
        out = np.stack([out] * 3, axis=-1)
    h, w = out.shape[:2]
    color = np.array([1.0, 0.1, 0.9])

    def disk(u, v, radius):
        uu, vv = int(round(u)), int(round(v))
        for dv in range(-radius, radius + 1):
            for du in range(-radius, radius + 1):
                if du * du + dv * dv <= radius * radius:
                    x, y = uu + du, vv + dv
                    if 0 <= x < w and 0 <= y < h:
                        out[y, x] = color

    for u, v in lane_pixels:
        if np.isfinite(u) and np.isfinite(v):
            disk(u, v, 1)
    if len(lane_pixels) >= 2:
        p0, d = fit_line_trimmed(lane_pixels)
        for t in np.linspace(-2 * max(w, h), 2 * max(w, h), 4 * max(w, h)):
            x, y = p0 + t * d
            if 0 <= x < w and 0 <= y < h:
                out[int(y), int(x)] = np.array([0.1, 1.0, 0.2])
    return np.clip(out, 0.0, 1.0)


def _load_truth_line(path):
    from pathlib import Path

    vals = [float(x) for x in Path(path).read_text(encoding="utf-8").split()]
    if len(vals) != 4:
        raise ValueError("ground-truth sidecar must hold `u1 v1 u2 v2`")
    return np.array(vals).reshape(2, 2)


def run_safedrive(config: RunConfig):
    """Run the full chain; returns (overlay image, MetricsReport)."""
    report = MetricsReport()
    timer = _StageTimer(report)
    k = config.intrinsics

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")

        current = timer.run("load_current", load_color, config.image)
        current_gray = to_gray(current)
        h, w = current_gray.shape
        dims = (w, h)

        index = timer.run("ingest", database.ingest, config.manifest)
        candidates = timer.run(
            "candidates_near", index.candidates_near, config.lat, config.lon, config.radius
        )

        rec_a, rec_b, ranking = timer.run(
            "select_best_pair",
            database.select_best_pair,
            current_gray,
            candidates,
            query_latlon=(config.lat, config.lon),
            max_features=config.max_features,
            min_spacing=config.min_spacing,
            max_distance=config.match_max_distance,
            min_overlap=config.min_overlap,
        )
        report.candidate_ids = [r.id for r in ranking.records]
        report.candidate_match_counts = list(ranking.match_counts)
        report.pair_ids = (rec_a.id, rec_b.id)

        img_a = load_color(rec_a.image_path)
        img_b = load_color(rec_b.image_path)
        gray_a, gray_b = to_gray(img_a), to_gray(img_b)

        def _features_and_f():
            feats_a = features.detect_corners(gray_a, config.max_features, config.min_spacing)
            feats_b = features.detect_corners(gray_b, config.max_features, config.min_spacing)
            descs_a, kept_a, _ = features.describe(gray_a, feats_a)
            descs_b, kept_b, _ = features.describe(gray_b, feats_b)
            matches = features.match_bidirectional(
                descs_a, descs_b, config.match_max_distance
            )
            pa = np.array([feats_a[kept_a[i]].position for i, _, _ in matches])
            pb = np.array([feats_b[kept_b[j]].position for _, j, _ in matches])
            da = np.array([descs_a[i] for i, _, _ in matches])
            db = np.array([descs_b[j] for _, j, _ in matches])
            est = estimate_fundamental(
                pa, pb, threshold=config.ransac_threshold, seed=config.seed
            )
            return pa, pb, da, db, est

        pa, pb, da, db, est = timer.run("estimate_fundamental", _features_and_f)
        report.feature_match_count = len(pa)
        report.feature_inlier_count = len(est.inlier_indices)

        inl = est.inlier_indices
        pose1 = RigidPose.identity()
        pose2 = timer.run(
            "recover_relative_pose", recover_relative_pose, est.f, k, pa[inl], pb[inl]
        )

        def _triangulate_features():
            points = []
            n_degenerate = 0
            errs = []
            for i in inl:
                try:
                    x, behind = triangulate_point(pa[i], pb[i], pose1, pose2, k)
                except DegenerateRays:
                    n_degenerate += 1
                    continue
                if behind:
                    continue
                ea = reprojection_error(x, pa[i], pose1, k)
                eb = reprojection_error(x, pb[i], pose2, k)
                if max(ea, eb) > config.pnp_threshold:
                    continue
                errs.extend([ea, eb])
                points.append(ModelPoint(x, np.stack([da[i], db[i]])))
            if n_degenerate > 0.5 * len(inl):
                warnings.warn(
                    f"{n_degenerate}/{len(inl)} matches triangulate degenerately; "
                    "database pair baseline is too narrow",
                    NarrowBaselineWarning,
                )
            return points, float(np.mean(errs)) if errs else float("nan")

        model_points, mean_feat_err = timer.run("triangulate_features", _triangulate_features)
        report.model_point_count = len(model_points)
        report.mean_feature_reproj_px = mean_feat_err

        lanes_a = timer.run(
            "detect_lanes_a", detect_lane_pixels, img_a, config.hsv,
            config.canny_low, config.canny_high,
        )
        lanes_b = timer.run(
            "detect_lanes_b", detect_lane_pixels, img_b, config.hsv,
            config.canny_low, config.canny_high,
        )
        report.lane_pixel_counts = (len(lanes_a), len(lanes_b))

        hint = (pa[inl[0]], pb[inl[0]])
        maps = timer.run(
            "build_polar_maps", build_polar_maps, est.f,
            (gray_a.shape[1], gray_a.shape[0]), (gray_b.shape[1], gray_b.shape[0]),
            orientation_hint=hint,
        )

        corrs = timer.run(
            "match_lane_pixels", match_lane_pixels, lanes_a, lanes_b, maps,
            (gray_a, gray_b), max_score=config.lane_match_max_score,
            ambiguity_margin=config.lane_ambiguity_margin,
        )
        report.lane_match_count = len(corrs)

        lane_points, discarded = timer.run(
            "triangulate_lane_markers", triangulate_lane_markers, corrs,
            pose1, pose2, k, max_reproj=config.max_reproj,
        )
        lane_points, off_plane = timer.run(
            "filter_plane_outliers", filter_plane_outliers, lane_points
        )
        report.lane_point_count = len(lane_points)
        report.lane_discard_count = discarded + off_plane
        if lane_points:
            report.mean_lane_reproj_px = float(
                np.mean([0.5 * (p.reproj_error_a + p.reproj_error_b) for p in lane_points])
            )

        model = StreetModel(
            feature_points=model_points,
            lane_points=lane_points,
            source_image_ids=(rec_a.id, rec_b.id),
        )

        def _register():
            cur_feats = features.detect_corners(
                current_gray, config.max_features, config.min_spacing
            )
            cur_descs, cur_kept, _ = features.describe(current_gray, cur_feats)
            cur_pixels = np.array([cur_feats[i].position for i in cur_kept])
            pts, pix, _ = match_to_model(
                model, cur_descs, cur_pixels, max_distance=config.match_max_distance
            )
            result = solve_pnp(
                pts, pix, k, threshold=config.pnp_threshold,
                min_inliers=config.pnp_min_inliers, seed=config.seed,
            )
            return pts, pix, result

        pts3d, pix2d, reg = timer.run("register", _register)
        report.pnp_correspondences = len(pts3d)
        report.pnp_inlier_count = reg.inlier_count
        report.pnp_mean_projection_error_px = reg.mean_projection_error

        disp, hcenter = feature_distribution_metrics(pix2d[reg.inlier_indices], dims)
        report.dispersity = disp
        report.horizontal_center = hcenter
        check_dispersity(disp, hcenter, config.min_dispersity, config.max_center_offset)

        lane_uv, in_frame, lane_src = timer.run(
            "project_lane_markers", project_lane_markers, model, reg, k, dims
        )
        report.projected_lane_pixel_count = int(in_frame.sum())

        if config.truth is not None:
            gt_line = _load_truth_line(config.truth)
            # The truth sidecar describes one lane marker; evaluate only the
            # projected pixels of its color class.
            from .lane_detection import WHITE, YELLOW

            wanted = YELLOW if config.truth_color == "yellow" else WHITE
            classes = np.array([model.lane_points[i].color_class for i in lane_src],
                               dtype=int) if len(lane_src) else np.empty(0, dtype=int)
            eval_uv = lane_uv[in_frame & (classes == wanted)]
            report.average_offset_px = timer.run(
                "evaluate_offset", evaluate_offset, eval_uv, gt_line, dims
            )

        overlay = _draw_overlay(current, lane_uv[in_frame], dims)
        report.warnings = sorted(
            str(c.message) for c in caught if issubclass(c.category, UserWarning)
            and not issubclass(c.category, (DeprecationWarning, ResourceWarning))
        )

    return overlay, report


def write_outputs(out_dir, overlay, report: MetricsReport):
    """Save overlay.png and metrics.txt into `out_dir`."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_color(out / "overlay.png", overlay)
    (out / "metrics.txt").write_text(report.to_text(), encoding="utf-8")
    return out / "overlay.png", out / "metrics.txt"
