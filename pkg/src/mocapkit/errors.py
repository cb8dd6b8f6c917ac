"""Exception types shared across the package.

``MocapError`` subclasses signal invalid inputs or configurations and map to
CLI exit code 1; anything else escaping a command maps to exit code 2.
"""


class MocapError(Exception):
    """Base class for input/configuration errors raised by this package."""


class CalibrationError(MocapError):
    """Calibration file is malformed or violates camera invariants."""


class BehindCameraError(MocapError):
    """A 3D point has non-positive depth in the camera frame."""


class InputMismatchError(MocapError):
    """Sequences, manifests, or keypoint sets do not line up."""


class AlignmentError(MocapError):
    """Procrustes alignment is undefined for a frame (too few or collinear points)."""


class SkeletonError(MocapError):
    """Skeleton model file is malformed or violates tree invariants."""


class ScaleCalibrationError(MocapError):
    """Not enough usable frames to calibrate skeleton scales."""
