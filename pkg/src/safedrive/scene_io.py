"""Writing synthetic scenes to disk in the layout the CLI consumes."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .geometry import project_many
from .image_io import save_color
from .synthetic import GroundTruth, SceneSpec, generate_scene

# Degrees of latitude per meter (small-offset approximation near the anchor).
_M_PER_DEG_LAT = 111_320.0
BASE_LAT, BASE_LON = 44.979238, -93.266568


def _latlon_for_center(center: np.ndarray, base_lat: float, base_lon: float):
    """Place camera centers on the map: world +z goes north, +x goes east."""
    lat = base_lat + center[2] / _M_PER_DEG_LAT
    lon = base_lon + center[0] / (_M_PER_DEG_LAT * np.cos(np.radians(base_lat)))
    return lat, lon


def truth_lane_line(truth: GroundTruth, view: int, line_index: int = 1):
    """Endpoints (2, 2) of a lane centerline projected into a view, clipped to
    the in-frame portion."""
    spec = truth.spec
    w, h = spec.image_size
    poly = truth.lane_polylines[line_index]
    uv, z = project_many(poly, truth.poses[view], truth.intrinsics)
    ok = (z > 0) & (uv[:, 0] >= 0) & (uv[:, 0] <= w - 1) & (uv[:, 1] >= 0) & (
        uv[:, 1] <= h - 1
    )
    pts = uv[ok]
    if len(pts) < 2:
        raise ValueError("lane line not visible in the requested view")
    return np.stack([pts[0], pts[-1]])


def write_scene_case(out_dir, spec: SceneSpec, truth_line_index: int = 1,
                     base_lat: float = BASE_LAT, base_lon: float = BASE_LON):
    """Render a scene and write db images, manifest, current view, ground-truth
    line sidecar, and a case.json runnable by `safedrive run`/`batch`.

    Returns (case_dir, truth) for further inspection.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    images, truth = generate_scene(spec)
    n_db = len(spec.db_poses)

    lines = ["# id\tlat\tlon\tpath"]
    for i in range(n_db):
        name = f"db_{i:02d}.png"
        save_color(out / name, images[i])
        lat, lon = _latlon_for_center(truth.poses[i].center, base_lat, base_lon)
        lines.append(f"db_{i:02d}\t{lat:.9f}\t{lon:.9f}\t{name}")
    (out / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")

    save_color(out / "current.png", images[-1])
    cur_lat, cur_lon = _latlon_for_center(truth.poses[-1].center, base_lat, base_lon)

    gt = truth_lane_line(truth, view=len(truth.poses) - 1, line_index=truth_line_index)
    (out / "truth.txt").write_text(
        f"{gt[0, 0]:.4f} {gt[0, 1]:.4f} {gt[1, 0]:.4f} {gt[1, 1]:.4f}\n",
        encoding="utf-8",
    )

    k = truth.intrinsics
    case = {
        "manifest": "manifest.txt",
        "image": "current.png",
        "lat": cur_lat,
        "lon": cur_lon,
        "radius": 100.0,
        "truth": "truth.txt",
        "seed": spec.seed,
        "fx": k.fx,
        "fy": k.fy,
        "cx": k.cx,
        "cy": k.cy,
    }
    (out / "case.json").write_text(json.dumps(case, indent=2), encoding="utf-8")
    return out, truth
