"""Lane-pixel matching along polar rows, triangulation gates, plane filter."""

import numpy as np
import pytest

from safedrive.geometry import project_many
from safedrive.lane_detection import detect_lane_pixels, to_gray
from safedrive.lane_matching import (
    LaneCorrespondence,
    LanePoint3D,
    filter_plane_outliers,
    match_lane_pixels,
    triangulate_lane_markers,
)
from safedrive.lane_detection import LanePixelSet
from safedrive.polar import build_polar_maps


def ground_truth_transfer(truth, pixels_a):
    """Exact image-B pixels for ground-plane pixels of image A (ray-cast)."""
    spec = truth.spec
    k = truth.intrinsics
    d = np.linalg.solve(
        k.matrix, np.column_stack([pixels_a, np.ones(len(pixels_a))]).T
    ).T
    t = spec.camera_height / d[:, 1]
    pts = t[:, None] * d  # view 0 is the world frame
    uv, z = project_many(pts, truth.poses[1], k)
    return pts, uv, (d[:, 1] > 1e-9) & (z > 0)


@pytest.fixture(scope="module")
def matched_scene(small_scene):
    images, truth = small_scene
    gray_a = to_gray(images[0])
    gray_b = to_gray(images[1])
    lanes_a = detect_lane_pixels(images[0])
    lanes_b = detect_lane_pixels(images[1])
    # One exact ground-plane correspondence pins the polar orientation.
    pts, uv_b, ok = ground_truth_transfer(truth, lanes_a.pixels[:1])
    dims = (gray_a.shape[1], gray_a.shape[0])
    maps = build_polar_maps(
        truth.f_true, dims, dims, orientation_hint=(lanes_a.pixels[0], uv_b[0])
    )
    return images, truth, gray_a, gray_b, lanes_a, lanes_b, maps


class TestMatchLanePixels:
    def test_empty_inputs(self, matched_scene):
        _, _, gray_a, gray_b, lanes_a, _, maps = matched_scene
        empty = LanePixelSet(np.empty((0, 2)), np.empty(0, dtype=int))
        assert match_lane_pixels(empty, lanes_a, maps, (gray_a, gray_b)) == []
        assert match_lane_pixels(lanes_a, empty, maps, (gray_a, gray_b)) == []

    def test_matches_accurate_with_strict_gates(self, matched_scene):
        # With a tight score threshold and ambiguity margin, accepted matches
        # must agree with the exact ground-plane transfer.
        images, truth, gray_a, gray_b, lanes_a, lanes_b, maps = matched_scene
        corrs = match_lane_pixels(
            lanes_a, lanes_b, maps, (gray_a, gray_b),
            max_score=0.15, ambiguity_margin=0.15,
        )
        assert len(corrs) >= 20
        pa = np.array([c.pixel_a for c in corrs])
        pb = np.array([c.pixel_b for c in corrs])
        _, uv_true, ok = ground_truth_transfer(truth, pa)
        err = np.linalg.norm(pb[ok] - uv_true[ok], axis=1)
        assert np.mean(err <= 2.0) >= 0.8

    def test_one_to_one(self, matched_scene):
        _, _, gray_a, gray_b, lanes_a, lanes_b, maps = matched_scene
        corrs = match_lane_pixels(lanes_a, lanes_b, maps, (gray_a, gray_b))
        keys_a = {tuple(c.pixel_a) for c in corrs}
        keys_b = {tuple(c.pixel_b) for c in corrs}
        assert len(keys_a) == len(corrs)
        assert len(keys_b) == len(corrs)

    def test_color_classes_preserved(self, matched_scene):
        _, _, gray_a, gray_b, lanes_a, lanes_b, maps = matched_scene
        corrs = match_lane_pixels(lanes_a, lanes_b, maps, (gray_a, gray_b))
        lut_a = {tuple(p): c for p, c in zip(lanes_a.pixels, lanes_a.classes)}
        lut_b = {tuple(p): c for p, c in zip(lanes_b.pixels, lanes_b.classes)}
        for c in corrs:
            assert lut_a[tuple(c.pixel_a)] == c.color_class
            assert lut_b[tuple(c.pixel_b)] == c.color_class

    def test_rows_within_band(self, matched_scene):
        _, _, gray_a, gray_b, lanes_a, lanes_b, maps = matched_scene
        from safedrive.polar import to_polar

        corrs = match_lane_pixels(lanes_a, lanes_b, maps, (gray_a, gray_b))
        for c in corrs:
            ra = to_polar(maps[0], c.pixel_a)[0]
            rb = to_polar(maps[1], c.pixel_b)[0]
            assert abs(ra - rb) <= 1.0 + 1e-9


class TestTriangulateLaneMarkers:
    def _exact_corrs(self, truth, n=60):
        spec = truth.spec
        rng = np.random.default_rng(0)
        xs = rng.uniform(-2.0, 2.0, size=n)
        zs = rng.uniform(4.0, 30.0, size=n)
        pts = np.column_stack([xs, np.full(n, spec.camera_height), zs])
        k = truth.intrinsics
        uv_a, _ = project_many(pts, truth.poses[0], k)
        uv_b, _ = project_many(pts, truth.poses[1], k)
        corrs = [
            LaneCorrespondence(uv_a[i], uv_b[i], 0.0, 0.0, 0) for i in range(n)
        ]
        return pts, corrs

    def test_noiseless_exact(self, small_scene):
        _, truth = small_scene
        pts, corrs = self._exact_corrs(truth)
        kept, discarded = triangulate_lane_markers(
            corrs, truth.poses[0], truth.poses[1], truth.intrinsics
        )
        assert discarded == 0
        got = np.array([p.position for p in kept])
        assert np.allclose(got, pts, atol=1e-6)
        assert max(max(p.reproj_error_a, p.reproj_error_b) for p in kept) < 1e-6

    def test_injected_mismatches_rejected(self, small_scene):
        _, truth = small_scene
        pts, corrs = self._exact_corrs(truth, n=100)
        rng = np.random.default_rng(1)
        n_bad = 20
        bad = [
            LaneCorrespondence(
                rng.uniform([0, 180], [640, 360]),
                rng.uniform([0, 180], [640, 360]),
                0.0, 0.0, 0,
            )
            for _ in range(n_bad)
        ]
        kept, discarded = triangulate_lane_markers(
            corrs + bad, truth.poses[0], truth.poses[1], truth.intrinsics,
            max_reproj=2.0,
        )
        assert discarded >= int(0.95 * n_bad)
        errs = [0.5 * (p.reproj_error_a + p.reproj_error_b) for p in kept]
        assert np.mean(errs) < 1.5

    def test_invalid_threshold(self, small_scene):
        _, truth = small_scene
        with pytest.raises(ValueError):
            triangulate_lane_markers(
                [], truth.poses[0], truth.poses[1], truth.intrinsics, max_reproj=0.0
            )


class TestFilterPlaneOutliers:
    def _plane_points(self, rng, n, off_plane=()):
        pts = []
        for i in range(n):
            x = rng.uniform(-3, 3)
            z = rng.uniform(4, 30)
            pts.append(LanePoint3D(np.array([x, 1.4, z]), 0.0, 0.0, 0))
        for y in off_plane:
            pts.append(
                LanePoint3D(np.array([rng.uniform(-3, 3), y, rng.uniform(4, 30)]),
                            0.0, 0.0, 0)
            )
        return pts

    def test_outliers_removed_inliers_kept(self):
        rng = np.random.default_rng(2)
        pts = self._plane_points(rng, 60, off_plane=[0.2, -0.5, 3.0, 2.4])
        kept, dropped = filter_plane_outliers(pts)
        assert dropped == 4
        assert all(abs(p.position[1] - 1.4) < 1e-9 for p in kept)

    def test_small_sets_pass_through(self):
        rng = np.random.default_rng(3)
        pts = self._plane_points(rng, 5, off_plane=[5.0])
        kept, dropped = filter_plane_outliers(pts, min_points=30)
        assert dropped == 0 and len(kept) == 6

    def test_plane_residuals_within_height_fraction(self, small_scene):
        # Robustly fitted plane on clean on-plane points: residuals stay well
        # under 2% of the camera height.
        _, truth = small_scene
        rng = np.random.default_rng(4)
        pts = self._plane_points(rng, 80)
        kept, _ = filter_plane_outliers(pts)
        arr = np.array([p.position for p in kept])
        centroid = arr.mean(axis=0)
        _, _, vt = np.linalg.svd(arr - centroid)
        resid = np.abs((arr - centroid) @ vt[-1])
        assert resid.max() <= 0.02 * truth.spec.camera_height
