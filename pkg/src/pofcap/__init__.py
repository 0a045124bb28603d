"""Model-based 3-D pose capture from part orientation fields."""

__version__ = "0.1.0"

from .kernels import BACKEND  # noqa: E402
from .skeleton import (BodyModel, Camera, ModelParams, SkeletonDef, body_skeleton,  # noqa: E402
                       forward_kinematics, hand_skeleton, marker_positions, part_orientations,
                       project, total_skeleton)

__all__ = ["BACKEND", "BodyModel", "Camera", "ModelParams", "SkeletonDef", "body_skeleton",
           "forward_kinematics", "hand_skeleton", "marker_positions", "part_orientations",
           "project", "total_skeleton", "__version__"]
