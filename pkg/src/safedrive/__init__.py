"""Sparse 3D street reconstruction and lane-marker projection onto degraded views."""

from .geometry import CameraIntrinsics, RigidPose
from .pipeline import MetricsReport, RunConfig, run_safedrive

__all__ = [
    "CameraIntrinsics",
    "RigidPose",
    "MetricsReport",
    "RunConfig",
    "run_safedrive",
]
