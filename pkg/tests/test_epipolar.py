"""Fundamental-matrix estimation, epipoles, and relative-pose recovery."""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from safedrive.epipolar import (
    FundamentalMatrix,
    epipole_of,
    estimate_fundamental,
    fundamental_from_pose,
    recover_relative_pose,
    refine_relative_pose,
    sampson_distance,
)
from safedrive.errors import EpipoleAtInfinity, InsufficientMatches
from safedrive.geometry import CameraIntrinsics, RigidPose, _cross_matrix, project_many

from .conftest import random_pose

K = CameraIntrinsics(fx=600.0, fy=600.0, cx=320.0, cy=180.0)

# Fundamental matrix of the recording rig's main sequence, kept as a fixture
# so serialization and rank handling are pinned to realistic magnitudes.
RIG_F = np.array(
    [
        [3.7989e-07, -0.0005, 0.2287],
        [0.0005, 1.3512e-06, -0.2502],
        [-0.2294, 0.2476, 1.0],
    ]
)


def synthetic_pair(seed, n=200, noise=0.0, forward=False):
    """Random two-view geometry with exact correspondences."""
    rng = np.random.default_rng(seed)
    if forward:
        r, t = np.eye(3), np.array([0.0, 0.0, -1.0])
    else:
        r, t = random_pose(rng, max_angle=0.15)
        t = t / np.linalg.norm(t)
    pose1 = RigidPose.identity()
    pose2 = RigidPose(r, t)
    pts = rng.uniform([-6, -3, 5], [6, 3, 40], size=(n, 3))
    pa, za = project_many(pts, pose1, K)
    pb, zb = project_many(pts, pose2, K)
    keep = (za > 0) & (zb > 0)
    pa, pb = pa[keep], pb[keep]
    if noise > 0:
        pa = pa + rng.normal(scale=noise, size=pa.shape)
        pb = pb + rng.normal(scale=noise, size=pb.shape)
    return pose2, pa, pb


class TestFundamentalMatrix:
    def test_rank_two_enforced(self):
        f = FundamentalMatrix(RIG_F)
        assert np.linalg.matrix_rank(f.m, tol=1e-12) == 2

    def test_canonical_scale_and_sign(self):
        f1 = FundamentalMatrix(RIG_F)
        f2 = FundamentalMatrix(-3.7 * RIG_F)
        assert np.allclose(f1.m, f2.m)
        assert np.isclose(np.linalg.norm(f1.m), 1.0)

    def test_rig_fixture_epipoles_finite(self):
        # Near-forward motion: both epipoles land inside a 1280x720 frame.
        f = FundamentalMatrix(RIG_F)
        e1 = epipole_of(f, "right")
        e2 = epipole_of(f, "left")
        for e in (e1, e2):
            assert 0 <= e[0] <= 1280 and 0 <= e[1] <= 720

    def test_transposed_swaps_epipoles(self):
        f = FundamentalMatrix(RIG_F)
        assert np.allclose(epipole_of(f.transposed, "right"), epipole_of(f, "left"))


class TestEstimateFundamental:
    def test_noiseless_residuals_tiny(self):
        pose2, pa, pb = synthetic_pair(0)
        est = estimate_fundamental(pa, pb)
        assert sampson_distance(est.f, pa, pb).max() < 1e-6
        f_true = fundamental_from_pose(pose2, K)
        cos = abs(np.sum(est.f.m * f_true.m))
        assert cos > 1.0 - 1e-9  # same matrix up to canonical form

    def test_too_few_correspondences(self):
        with pytest.raises(InsufficientMatches):
            estimate_fundamental(np.zeros((7, 2)), np.zeros((7, 2)))

    def test_outliers_rejected(self):
        rng = np.random.default_rng(3)
        pose2, pa, pb = synthetic_pair(3, noise=0.3)
        n_bad = 40
        bad = rng.uniform(0, [640, 360], size=(n_bad, 2))
        pa_all = np.vstack([pa, bad])
        pb_all = np.vstack([pb, rng.uniform(0, [640, 360], size=(n_bad, 2))])
        est = estimate_fundamental(pa_all, pb_all)
        # Inliers stay within the threshold and exclude the random pairs.
        assert est.residuals[est.inlier_indices].max() <= 1.0
        assert np.sum(est.inlier_indices >= len(pa)) <= 2

    def test_deterministic_given_seed(self):
        _, pa, pb = synthetic_pair(4, noise=0.5)
        e1 = estimate_fundamental(pa, pb, seed=7)
        e2 = estimate_fundamental(pa, pb, seed=7)
        assert np.array_equal(e1.f.m, e2.f.m)
        assert np.array_equal(e1.inlier_indices, e2.inlier_indices)


class TestEpipoles:
    def test_forward_motion_epipole_at_principal_point(self):
        pose2, pa, pb = synthetic_pair(5, forward=True)
        f = fundamental_from_pose(pose2, K)
        assert np.allclose(epipole_of(f, "right"), [K.cx, K.cy], atol=1e-6)
        assert np.allclose(epipole_of(f, "left"), [K.cx, K.cy], atol=1e-6)

    def test_pure_sideways_motion_epipole_at_infinity(self):
        pose2 = RigidPose(np.eye(3), np.array([1.0, 0.0, 0.0]))
        f = fundamental_from_pose(pose2, K)
        with pytest.raises(EpipoleAtInfinity) as exc:
            epipole_of(f, "right")
        assert np.isclose(abs(exc.value.direction[0]), 1.0)

    def test_epipole_annihilates_f(self):
        f = FundamentalMatrix(RIG_F)
        e = epipole_of(f, "right")
        assert np.linalg.norm(f.m @ np.array([e[0], e[1], 1.0])) < 1e-9


class TestRelativePose:
    def test_essential_structure(self):
        # F built from a pose must satisfy E = [t]x R up to scale.
        rng = np.random.default_rng(6)
        pose2 = RigidPose(*random_pose(rng))
        f = fundamental_from_pose(pose2, K)
        e = K.matrix.T @ f.m @ K.matrix
        e_true = _cross_matrix(pose2.t) @ pose2.r
        cos = np.sum(e * e_true) / (np.linalg.norm(e) * np.linalg.norm(e_true))
        assert abs(abs(cos) - 1.0) < 1e-9

    def test_noiseless_recovery(self):
        pose2, pa, pb = synthetic_pair(7)
        est = estimate_fundamental(pa, pb)
        rec = recover_relative_pose(est.f, K, pa, pb)
        t_true = pose2.t / np.linalg.norm(pose2.t)
        assert np.degrees(np.arccos(np.clip(np.dot(rec.t, t_true), -1, 1))) < 1e-3
        r_err = Rotation.from_matrix(rec.r.T @ pose2.r).magnitude()
        assert np.degrees(r_err) < 1e-3

    def test_mirrored_pair_recovers_inverse(self):
        pose2, pa, pb = synthetic_pair(8)
        est_fwd = estimate_fundamental(pa, pb)
        rec_fwd = recover_relative_pose(est_fwd.f, K, pa, pb)
        est_rev = estimate_fundamental(pb, pa)
        rec_rev = recover_relative_pose(est_rev.f, K, pb, pa)
        inv = rec_fwd.inverse()
        assert np.allclose(rec_rev.r, inv.r, atol=1e-5)
        assert np.allclose(rec_rev.t, inv.t / np.linalg.norm(inv.t), atol=1e-5)

    def test_refinement_reduces_noisy_translation_error(self):
        worse = better = 0
        for seed in range(10):
            pose2, pa, pb = synthetic_pair(seed, n=400, noise=0.5)
            est = estimate_fundamental(pa, pb)
            inl = est.inlier_indices
            raw = recover_relative_pose(est.f, K, pa[inl], pb[inl], refine=False)
            ref = refine_relative_pose(raw, K, pa[inl], pb[inl])
            t_true = pose2.t / np.linalg.norm(pose2.t)

            def t_err(p):
                return np.degrees(np.arccos(np.clip(np.dot(p.t, t_true), -1, 1)))

            if t_err(ref) <= t_err(raw) + 1e-9:
                better += 1
            else:
                worse += 1
        assert better >= 8

    def test_unit_translation(self):
        pose2, pa, pb = synthetic_pair(9, noise=0.5)
        est = estimate_fundamental(pa, pb)
        rec = recover_relative_pose(est.f, K, pa, pb)
        assert np.isclose(np.linalg.norm(rec.t), 1.0)
