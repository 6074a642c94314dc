"""Shared fixtures: rendered synthetic scenes and one cached pipeline run."""

import json

import numpy as np
import pytest

from safedrive.geometry import CameraIntrinsics
from safedrive.pipeline import RunConfig, run_safedrive
from safedrive.scene_io import write_scene_case
from safedrive.synthetic import SceneSpec, generate_scene

# Intrinsics of the recording rig the default configuration targets; also used
# as a realistic non-square-center calibration in unit tests.
RIG_K = CameraIntrinsics(fx=1261.46807, fy=1259.44016, cx=619.89385, cy=356.46599)


@pytest.fixture(scope="session")
def small_scene():
    """(images, truth) for one 640x360 scene; rendering is the slow part."""
    return generate_scene(SceneSpec(seed=3))


@pytest.fixture(scope="session")
def case_on_disk(tmp_path_factory):
    """A scene written in the CLI's on-disk layout: (case_dir, truth)."""
    out = tmp_path_factory.mktemp("case")
    return write_scene_case(out, SceneSpec(seed=17))


def config_for_case(case_dir, **overrides):
    case = json.loads((case_dir / "case.json").read_text(encoding="utf-8"))
    base = dict(
        manifest=str(case_dir / "manifest.txt"),
        image=str(case_dir / "current.png"),
        lat=case["lat"],
        lon=case["lon"],
        truth=str(case_dir / "truth.txt"),
        fx=case["fx"],
        fy=case["fy"],
        cx=case["cx"],
        cy=case["cy"],
        seed=case["seed"],
    )
    base.update(overrides)
    return RunConfig(**base)


@pytest.fixture(scope="session")
def pipeline_run(case_on_disk):
    """One full pipeline execution shared by every test that only inspects it."""
    case_dir, truth = case_on_disk
    config = config_for_case(case_dir)
    overlay, report = run_safedrive(config)
    return config, overlay, report


def random_pose(rng, max_angle=0.5, t_scale=1.0):
    """Random proper rigid pose for property tests."""
    from scipy.spatial.transform import Rotation

    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(-max_angle, max_angle)
    r = Rotation.from_rotvec(angle * axis).as_matrix()
    return r, rng.normal(scale=t_scale, size=3)
