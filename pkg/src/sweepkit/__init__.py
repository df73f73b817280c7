"""Motion-aware robotic ultrasound sweep pipeline with a deterministic simulator."""

from .errors import SweepKitError
from .geom import (
    CalibrationPair,
    CameraIntrinsics,
    FrameGraph,
    FrameId,
    RigidTransform,
    compose,
    hand_eye_calibrate,
    image_to_base,
    pixel_to_camera,
    refresh_extrinsics,
    solve_rigid_alignment,
)

__all__ = [
    "SweepKitError",
    "CalibrationPair",
    "CameraIntrinsics",
    "FrameGraph",
    "FrameId",
    "RigidTransform",
    "compose",
    "hand_eye_calibrate",
    "image_to_base",
    "pixel_to_camera",
    "refresh_extrinsics",
    "solve_rigid_alignment",
]

__version__ = "0.1.0"
