"""Robust multi-view triangulation and reprojection.

Detections are undistorted to normalized coordinates, triangulated with a
confidence-weighted DLT, then iteratively reweighted (Huber weights on
pixel-space reprojection residuals, MAD scale) so that low-confidence or
inconsistent views are suppressed. Views whose converged weight falls below
a small fraction of the maximum are excluded outright and the point is
re-solved from the remaining views.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .camera import CameraParams, CameraRig, undistort_to_normalized
from .errors import InputMismatchError

# Huber threshold on (residual / MAD scale). The MAD scale is floored at
# 1 px, so a view is fully excluded (weight < EXCLUDE_REL of max) once its
# residual exceeds HUBER_K / EXCLUDE_REL = 25 px against consistent views.
HUBER_K = 0.25
EXCLUDE_REL = 0.01
MAX_ITER = 10
WEIGHT_TOL = 1e-6
DEGENERATE_RATIO = 0.99


@dataclass
class DetectionSequence:
    """Per-camera 2D keypoint detections: (frames, keypoints, [u, v, conf])."""

    camera_id: str
    keypoint_names: list[str]
    points: np.ndarray  # (F, K, 3) with columns u px, v px, confidence

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 3 or self.points.shape[2] != 3:
            raise InputMismatchError(
                f"camera {self.camera_id}: detections must be (frames, keypoints, 3)"
            )
        if self.points.shape[1] != len(self.keypoint_names):
            raise InputMismatchError(
                f"camera {self.camera_id}: {self.points.shape[1]} keypoint columns but "
                f"{len(self.keypoint_names)} names"
            )
        conf = self.points[:, :, 2]
        finite = np.isfinite(conf)
        if np.any((conf[finite] < 0) | (conf[finite] > 1)):
            raise InputMismatchError(
                f"camera {self.camera_id}: confidences must lie in [0, 1]"
            )

    @property
    def num_frames(self) -> int:
        return self.points.shape[0]

    @property
    def num_keypoints(self) -> int:
        return self.points.shape[1]


@dataclass
class Pose3DSequence:
    """Per-frame 3D keypoints with validity flags.

    ``effective_views`` is populated by triangulation; it is None for
    sequences ingested from monocular estimators.
    """

    keypoint_names: list[str]
    positions: np.ndarray  # (F, K, 3) meters, NaN where invalid
    valid: np.ndarray  # (F, K) bool
    effective_views: np.ndarray | None = None  # (F, K) int

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.positions.shape[:2] != self.valid.shape:
            raise InputMismatchError("positions and valid masks disagree in shape")
        if self.effective_views is not None:
            self.effective_views = np.asarray(self.effective_views, dtype=np.int32)
            if self.effective_views.shape != self.valid.shape:
                raise InputMismatchError("effective_views shape mismatch")
            if np.any(self.valid & (self.effective_views < 2)):
                raise InputMismatchError("valid points must have >= 2 effective views")
        if np.any(self.valid & ~np.all(np.isfinite(self.positions), axis=2)):
            raise InputMismatchError("valid points must have finite positions")

    @property
    def num_frames(self) -> int:
        return self.positions.shape[0]


@dataclass
class TriangulationResult:
    """Result of triangulating a single point from multi-view observations."""

    point: np.ndarray  # (3,) meters, NaN if invalid
    weights: np.ndarray  # per input observation; 0 for missing/excluded views
    valid: bool
    degenerate: bool = False
    effective_views: int = 0


def _camera_arrays(cams: list[CameraParams]):
    rots = np.stack([c.rotation for c in cams])
    trans = np.stack([c.translation for c in cams])
    intr = np.array(
        [[c.focal[0], c.focal[1], c.principal_point[0], c.principal_point[1], c.skew] for c in cams]
    )
    dists = np.stack([np.asarray(c.distortion) for c in cams])
    return rots, trans, intr, dists


def triangulate_point(observations) -> TriangulationResult:
    """Triangulate one 3D point from [(CameraParams, (u, v), confidence), ...].

    Fewer than two positive-confidence observations yield an invalid result
    rather than an exception.
    """
    cams = [obs[0] for obs in observations]
    uv = np.array([np.asarray(obs[1], dtype=np.float64).reshape(2) for obs in observations])
    conf = np.array([float(obs[2]) for obs in observations])

    norm = np.full((len(cams), 1, 2), np.nan)
    for i, cam in enumerate(cams):
        if conf[i] > 0 and np.all(np.isfinite(uv[i])):
            norm[i, 0] = undistort_to_normalized(uv[i][None, :], cam)[0]
    rots, trans, intr, dists = _camera_arrays(cams)
    points, weights, valid, degen, eff = _kernels.triangulate_batch(
        norm, conf[:, None], uv[:, None, :], rots, trans, intr, dists,
        HUBER_K, MAX_ITER, WEIGHT_TOL, EXCLUDE_REL, DEGENERATE_RATIO,
    )
    return TriangulationResult(
        point=points[0],
        weights=weights[:, 0],
        valid=bool(valid[0]),
        degenerate=bool(degen[0]),
        effective_views=int(eff[0]),
    )


def _check_sequences(detections: list[DetectionSequence], rig: CameraRig) -> None:
    if len(detections) < 2:
        raise InputMismatchError("triangulation requires detections from >= 2 cameras")
    ref = detections[0]
    rig_ids = set(rig.camera_ids)
    for det in detections:
        if det.camera_id not in rig_ids:
            raise InputMismatchError(f"camera {det.camera_id} is not in the calibration rig")
        if det.keypoint_names != ref.keypoint_names:
            raise InputMismatchError(
                f"camera {det.camera_id}: keypoint names differ from camera {ref.camera_id}"
            )
        if det.num_frames != ref.num_frames:
            raise InputMismatchError(
                f"camera {det.camera_id}: {det.num_frames} frames, expected {ref.num_frames}"
            )
    ids = [d.camera_id for d in detections]
    if len(set(ids)) != len(ids):
        raise InputMismatchError("duplicate camera ids in detections")


@dataclass
class RobustTriangulationOutput:
    pose: Pose3DSequence
    weights: np.ndarray  # (V, F, K) aligned with the detection list order
    degenerate: np.ndarray = field(default=None)  # (F, K) bool

    def __iter__(self):
        yield self.pose
        yield self.weights


def robust_triangulate(
    detections: list[DetectionSequence], rig: CameraRig
) -> RobustTriangulationOutput:
    """Triangulate every (frame, keypoint) independently across all cameras."""
    _check_sequences(detections, rig)
    cams = [rig.by_id(d.camera_id) for d in detections]
    n_views = len(detections)
    n_frames = detections[0].num_frames
    n_kp = detections[0].num_keypoints
    n_pts = n_frames * n_kp

    norm = np.empty((n_views, n_pts, 2))
    conf = np.empty((n_views, n_pts))
    det_uv = np.empty((n_views, n_pts, 2))
    for i, (det, cam) in enumerate(zip(detections, cams)):
        uv = det.points[:, :, :2].reshape(n_pts, 2)
        c = det.points[:, :, 2].reshape(n_pts).copy()
        c[~np.isfinite(c)] = 0.0
        bad = ~np.all(np.isfinite(uv), axis=1)
        c[bad] = 0.0
        det_uv[i] = uv
        conf[i] = c
        norm[i] = np.nan
        ok = ~bad
        if np.any(ok):
            norm[i, ok] = undistort_to_normalized(uv[ok], cam)

    rots, trans, intr, dists = _camera_arrays(cams)
    points, weights, valid, degen, eff = _kernels.triangulate_batch(
        norm, conf, det_uv, rots, trans, intr, dists,
        HUBER_K, MAX_ITER, WEIGHT_TOL, EXCLUDE_REL, DEGENERATE_RATIO,
    )
    pose = Pose3DSequence(
        keypoint_names=list(detections[0].keypoint_names),
        positions=points.reshape(n_frames, n_kp, 3),
        valid=valid.reshape(n_frames, n_kp),
        effective_views=eff.reshape(n_frames, n_kp),
    )
    return RobustTriangulationOutput(
        pose=pose,
        weights=weights.reshape(n_views, n_frames, n_kp),
        degenerate=degen.reshape(n_frames, n_kp),
    )


def reproject(pose: Pose3DSequence, rig: CameraRig) -> dict[str, np.ndarray]:
    """Project a 3D sequence into every rig camera.

    Returns {camera_id: (F, K, 2) pixels}; invalid or behind-camera points
    become NaN entries for the affected camera only.
    """
    n_frames, n_kp = pose.valid.shape
    flat = pose.positions.reshape(-1, 3)
    ok = pose.valid.reshape(-1)
    out: dict[str, np.ndarray] = {}
    for cam in rig.cameras:
        uv = np.full((n_frames * n_kp, 2), np.nan)
        if np.any(ok):
            fx, fy = cam.focal
            cx, cy = cam.principal_point
            proj, _ = _kernels.project_points(
                flat[ok], cam.rotation, cam.translation, fx, fy, cx, cy, cam.skew, cam.distortion
            )
            uv[ok] = proj
        out[cam.camera_id] = uv.reshape(n_frames, n_kp, 2)
    return out
