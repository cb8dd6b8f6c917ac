"""Skeleton model, forward/inverse kinematics, and trajectory analysis."""

from .fit import FitResult, fit_pose_sequence
from .forward import forward_kinematics
from .skeleton import (
    SCALE_BOUNDS,
    SCALE_GROUP_NAMES,
    Dof,
    Marker,
    ScaleSet,
    Segment,
    SkeletonModel,
    load_skeleton,
)
from .trajectories import (
    EventParams,
    JointTrajectory,
    MovementEvent,
    classify_knee_events,
    extract_joint_trajectories,
)

__all__ = [
    "Dof",
    "EventParams",
    "FitResult",
    "JointTrajectory",
    "Marker",
    "MovementEvent",
    "SCALE_BOUNDS",
    "SCALE_GROUP_NAMES",
    "ScaleSet",
    "Segment",
    "SkeletonModel",
    "classify_knee_events",
    "extract_joint_trajectories",
    "fit_pose_sequence",
    "forward_kinematics",
    "load_skeleton",
]
