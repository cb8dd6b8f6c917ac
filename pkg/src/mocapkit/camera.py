"""Calibrated camera model: projection, unprojection, and calibration I/O.

The projection pipeline is the standard pinhole + 5-coefficient
radial-tangential distortion model: world->camera rigid transform,
perspective division, distortion polynomial, intrinsic mapping. World units
are meters, image units pixels.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import yaml

from . import _kernels
from .errors import BehindCameraError, CalibrationError

# Orthonormality handling on construction: matrices within REPAIR_TOL of a
# rotation are silently projected to the nearest rotation, within REJECT_TOL
# projected with a warning, beyond that rejected.
ORTHO_REPAIR_TOL = 1e-6
ORTHO_REJECT_TOL = 1e-3


def rotation_from_axis_angle(rvec) -> np.ndarray:
    """Rodrigues formula: axis-angle 3-vector to rotation matrix."""
    rvec = np.asarray(rvec, dtype=np.float64).reshape(3)
    theta = float(np.linalg.norm(rvec))
    if theta < 1e-12:
        return np.eye(3)
    k = rvec / theta
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(theta) * kx + (1.0 - np.cos(theta)) * (kx @ kx)


def nearest_rotation(mat: np.ndarray) -> np.ndarray:
    """Orthogonal Procrustes projection of a 3x3 matrix onto SO(3)."""
    u, _, vt = np.linalg.svd(np.asarray(mat, dtype=np.float64))
    r = u @ vt
    if np.linalg.det(r) < 0:
        u = u.copy()
        u[:, -1] *= -1.0
        r = u @ vt
    return r


def _validated_rotation(mat, camera_id: str) -> np.ndarray:
    r = np.asarray(mat, dtype=np.float64)
    if r.shape != (3, 3):
        raise CalibrationError(f"camera {camera_id}: rotation must be 3x3, got {r.shape}")
    if not np.all(np.isfinite(r)):
        raise CalibrationError(f"camera {camera_id}: rotation has non-finite entries")
    if np.linalg.det(r) <= 0:
        raise CalibrationError(
            f"camera {camera_id}: rotation determinant is not positive (reflection or singular)"
        )
    err = np.linalg.norm(r.T @ r - np.eye(3))
    if err > ORTHO_REJECT_TOL:
        raise CalibrationError(
            f"camera {camera_id}: rotation deviates from orthonormal by {err:.2e} "
            f"(limit {ORTHO_REJECT_TOL:.0e})"
        )
    if err > ORTHO_REPAIR_TOL:
        warnings.warn(
            f"camera {camera_id}: re-orthonormalized rotation (deviation {err:.2e})",
            stacklevel=3,
        )
        r = nearest_rotation(r)
    elif err > 1e-9:
        r = nearest_rotation(r)
    return r


@dataclass(frozen=True)
class CameraParams:
    """Calibrated parameters of one camera (immutable after construction)."""

    camera_id: str
    focal: tuple[float, float]
    principal_point: tuple[float, float]
    skew: float
    distortion: np.ndarray  # (5,) k1, k2, p1, p2, k3
    rotation: np.ndarray  # (3, 3) world->camera
    translation: np.ndarray  # (3,) meters, world->camera

    def __post_init__(self):
        fx, fy = self.focal
        if not (fx > 0 and fy > 0):
            raise CalibrationError(f"camera {self.camera_id}: focal lengths must be positive")
        dist = np.asarray(self.distortion, dtype=np.float64).reshape(5)
        rot = _validated_rotation(self.rotation, self.camera_id)
        trans = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(trans)):
            raise CalibrationError(f"camera {self.camera_id}: non-finite translation")
        for arr in (dist, rot, trans):
            arr.setflags(write=False)
        object.__setattr__(self, "distortion", dist)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @property
    def intrinsic_matrix(self) -> np.ndarray:
        fx, fy = self.focal
        cx, cy = self.principal_point
        return np.array([[fx, self.skew, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation


@dataclass(frozen=True)
class CameraRig:
    """Ordered collection of calibrated cameras sharing a frame rate."""

    cameras: tuple[CameraParams, ...]
    frame_rate: float = 29.0

    def __post_init__(self):
        object.__setattr__(self, "cameras", tuple(self.cameras))
        ids = [c.camera_id for c in self.cameras]
        if len(set(ids)) != len(ids):
            raise CalibrationError("duplicate camera ids in rig")
        if self.frame_rate <= 0:
            raise CalibrationError("frame_rate must be positive")

    def __len__(self) -> int:
        return len(self.cameras)

    @property
    def camera_ids(self) -> list[str]:
        return [c.camera_id for c in self.cameras]

    def by_id(self, camera_id: str) -> CameraParams:
        for cam in self.cameras:
            if cam.camera_id == camera_id:
                return cam
        raise KeyError(camera_id)


def project(point, cam: CameraParams) -> np.ndarray:
    """Project a single world point to pixels; raises BehindCameraError."""
    point = np.asarray(point, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(point)):
        raise ValueError("point must be finite")
    uv, in_front = project_points(point[None, :], cam)
    if not in_front[0]:
        raise BehindCameraError(
            f"point has non-positive depth in camera {cam.camera_id}"
        )
    return uv[0]


def project_points(points, cam: CameraParams):
    """Project (N, 3) world points; returns ((N, 2) pixels with NaN rows, (N,) in-front mask)."""
    fx, fy = cam.focal
    cx, cy = cam.principal_point
    return _kernels.project_points(
        np.asarray(points, dtype=np.float64).reshape(-1, 3),
        cam.rotation, cam.translation, fx, fy, cx, cy, cam.skew, cam.distortion,
    )


def undistort_to_normalized(pixels, cam: CameraParams) -> np.ndarray:
    """Pixel coordinates -> undistorted normalized camera coordinates, (N, 2)."""
    fx, fy = cam.focal
    cx, cy = cam.principal_point
    return _kernels.undistort_points(
        np.asarray(pixels, dtype=np.float64).reshape(-1, 2),
        fx, fy, cx, cy, cam.skew, cam.distortion,
    )


def unproject(pixel, cam: CameraParams, depth: float) -> np.ndarray:
    """Back-project a pixel to the world point at the given camera-frame depth."""
    if depth <= 0:
        raise ValueError("depth must be positive")
    xy = undistort_to_normalized(np.asarray(pixel, dtype=np.float64).reshape(1, 2), cam)[0]
    cam_pt = depth * np.array([xy[0], xy[1], 1.0])
    return cam.rotation.T @ (cam_pt - cam.translation)


def _camera_from_mapping(entry: dict, index: int) -> CameraParams:
    try:
        camera_id = str(entry["camera_id"])
    except KeyError as exc:
        raise CalibrationError(f"camera #{index}: missing camera_id") from exc
    try:
        k = np.asarray(entry["intrinsics"], dtype=np.float64).reshape(3, 3)
        dist = np.asarray(entry["distortion"], dtype=np.float64).reshape(5)
        trans = np.asarray(entry["translation"], dtype=np.float64).reshape(3)
    except (KeyError, ValueError) as exc:
        raise CalibrationError(f"camera {entry.get('camera_id', index)}: {exc}") from exc

    if "rotation" in entry:
        rot = np.asarray(entry["rotation"], dtype=np.float64)
        if rot.shape == (3,):
            rot = rotation_from_axis_angle(rot)
        elif rot.shape != (3, 3):
            raise CalibrationError(
                f"camera {camera_id}: rotation must be a 3x3 matrix or axis-angle 3-vector"
            )
    elif "axis_angle" in entry:
        rot = rotation_from_axis_angle(np.asarray(entry["axis_angle"], dtype=np.float64))
    else:
        raise CalibrationError(f"camera {camera_id}: missing rotation")

    return CameraParams(
        camera_id=camera_id,
        focal=(float(k[0, 0]), float(k[1, 1])),
        principal_point=(float(k[0, 2]), float(k[1, 2])),
        skew=float(k[0, 1]),
        distortion=dist,
        rotation=rot,
        translation=trans,
    )


def load_calibration(path) -> CameraRig:
    """Load a calibration YAML file (schema documented in the README)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise CalibrationError(f"cannot read calibration file {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise CalibrationError(f"cannot parse calibration file {path}: {exc}") from exc
    if not isinstance(doc, dict) or "cameras" not in doc:
        raise CalibrationError(f"{path}: expected a mapping with a 'cameras' list")
    cameras = [_camera_from_mapping(entry, i) for i, entry in enumerate(doc["cameras"])]
    if not cameras:
        raise CalibrationError(f"{path}: no cameras defined")
    return CameraRig(cameras=tuple(cameras), frame_rate=float(doc.get("frame_rate", 29.0)))


def save_calibration(rig: CameraRig, path) -> None:
    doc = {
        "frame_rate": float(rig.frame_rate),
        "cameras": [
            {
                "camera_id": cam.camera_id,
                "intrinsics": [[float(v) for v in row] for row in cam.intrinsic_matrix],
                "distortion": [float(v) for v in cam.distortion],
                "rotation": [[float(v) for v in row] for row in cam.rotation],
                "translation": [float(v) for v in cam.translation],
            }
            for cam in rig.cameras
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)
