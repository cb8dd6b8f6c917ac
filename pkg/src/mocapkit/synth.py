"""Synthetic ground-truth scenes: camera rings, motion, rendered detections.

Everything is deterministic under the scene seed; per-camera rendering uses
child seeds spawned from the scene seed so cameras could be rendered in
parallel without changing the output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import CameraParams, CameraRig
from .errors import InputMismatchError
from .kinematics.forward import fk_evaluate, scale_products
from .kinematics.skeleton import ScaleSet, SkeletonModel
from .triangulation import DetectionSequence
from . import _kernels

MOTION_MODES = (
    "random_points",
    "random_skeleton",
    "isolated_knee_flexion",
    "mirrored_knee_extension",
    "static",
)


@dataclass
class SceneSpec:
    """Parameters of a synthetic capture scene."""

    n_cameras: int = 8
    ring_radius: float = 1.2  # meters
    camera_height: float = 1.1  # meters above the mat plane
    target: tuple[float, float, float] = (0.0, 0.0, 0.05)
    pixel_noise: float = 0.0  # isotropic Gaussian sigma, px
    occlusion_rate: float = 0.0
    conf_high: tuple[float, float] = (0.7, 1.0)
    conf_low: tuple[float, float] = (0.0, 0.3)
    occlusion_offset_px: tuple[float, float] = (20.0, 80.0)
    seed: int = 0
    n_frames: int = 300
    frame_rate: float = 29.0
    n_keypoints: int = 20  # used by the random_points motion mode
    motion: str = "random_points"
    focal_px: float = 1400.0
    image_size: tuple[int, int] = (1440, 1080)
    distortion: tuple[float, float, float, float, float] | None = None

    def __post_init__(self):
        if self.n_cameras < 2:
            raise InputMismatchError("scene needs >= 2 cameras")
        if self.pixel_noise < 0:
            raise InputMismatchError("pixel noise must be >= 0")
        if not (0.0 <= self.occlusion_rate < 1.0):
            raise InputMismatchError("occlusion rate must lie in [0, 1)")
        if self.n_frames < 1:
            raise InputMismatchError("scene needs >= 1 frame")
        if self.motion not in MOTION_MODES:
            raise InputMismatchError(
                f"unknown motion mode {self.motion!r}; expected one of {MOTION_MODES}"
            )


def _look_at_rotation(position: np.ndarray, target: np.ndarray) -> np.ndarray:
    """World->camera rotation with the optical axis through the target."""
    forward = target - position
    forward = forward / np.linalg.norm(forward)
    up = np.array([0.0, 0.0, 1.0])
    if abs(forward @ up) > 0.999:
        up = np.array([1.0, 0.0, 0.0])
    right = np.cross(forward, up)
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    return np.stack([right, down, forward])


def make_camera_ring(spec: SceneSpec) -> CameraRig:
    """Evenly spaced cameras on a circle, each aimed at the scene target."""
    target = np.asarray(spec.target, dtype=np.float64)
    width, height = spec.image_size
    dist = np.zeros(5) if spec.distortion is None else np.asarray(spec.distortion, float)
    cameras = []
    for i in range(spec.n_cameras):
        angle = 2.0 * np.pi * i / spec.n_cameras
        pos = np.array(
            [
                spec.ring_radius * np.cos(angle),
                spec.ring_radius * np.sin(angle),
                spec.camera_height,
            ]
        )
        rot = _look_at_rotation(pos, target)
        cameras.append(
            CameraParams(
                camera_id=f"cam{i:02d}",
                focal=(spec.focal_px, spec.focal_px),
                principal_point=(width / 2.0, height / 2.0),
                skew=0.0,
                distortion=dist,
                rotation=rot,
                translation=-rot @ pos,
            )
        )
    return CameraRig(cameras=tuple(cameras), frame_rate=spec.frame_rate)


def random_point_motion(spec: SceneSpec):
    """Smooth band-limited trajectories of free keypoints around the target.

    Returns (keypoint names, (F, K, 3) positions).
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(spec.seed), 1]))
    k = spec.n_keypoints
    t = np.arange(spec.n_frames) / spec.frame_rate
    base = np.asarray(spec.target) + rng.uniform(-0.25, 0.25, size=(k, 3))
    pos = np.repeat(base[None, :, :], spec.n_frames, axis=0)
    for kp in range(k):
        for axis in range(3):
            for _ in range(int(rng.integers(1, 4))):
                amp = rng.uniform(0.01, 0.05)
                freq = rng.uniform(0.1, 1.5)
                phase = rng.uniform(0.0, 2.0 * np.pi)
                pos[:, kp, axis] += amp * np.sin(2.0 * np.pi * freq * t + phase)
    names = [f"kp{idx:02d}" for idx in range(k)]
    return names, pos


@dataclass
class MotionSample:
    """Ground-truth articulated motion and its rendered marker positions."""

    marker_names: list[str]
    markers: np.ndarray  # (F, M, 3)
    q: np.ndarray  # (F, D) radians
    root: np.ndarray  # (F, 6)
    scales: ScaleSet
    event_span: tuple[int, int] | None = None  # scripted template span, frames
    template: str = "random_skeleton"


def _raised_cosine_bump(n_frames: int) -> tuple[np.ndarray, tuple[int, int]]:
    """Unit bump over the middle third of the sequence; returns (signal, span)."""
    start = n_frames // 3
    end = min(n_frames - 1, 2 * n_frames // 3)
    bump = np.zeros(n_frames)
    width = max(end - start, 2)
    x = np.linspace(0.0, 1.0, width + 1)
    bump[start : start + width + 1] = 0.5 * (1.0 - np.cos(2.0 * np.pi * x))
    return bump, (start, start + width)


def generate_motion(
    model: SkeletonModel,
    seed: int,
    duration: int,
    template: str = "random_skeleton",
    scales: ScaleSet | None = None,
    frame_rate: float = 29.0,
) -> MotionSample:
    """Ground-truth joint trajectories plus FK marker positions.

    ``template`` is one of random_skeleton, isolated_knee_flexion,
    mirrored_knee_extension, static.
    """
    scales = scales or ScaleSet()
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 2]))
    t = np.arange(duration) / frame_rate
    q = np.zeros((duration, model.n_dofs))
    root = np.zeros((duration, 6))
    root[:, 2] = 0.05
    event_span = None

    def dof(name):
        return model.dof_names.index(name)

    base = {
        "left_hip_flexion": 25.0,
        "right_hip_flexion": 25.0,
        "left_knee_flexion": 15.0,
        "right_knee_flexion": 15.0,
        "left_shoulder_abduction": 20.0,
        "right_shoulder_abduction": 20.0,
        "left_elbow_flexion": 30.0,
        "right_elbow_flexion": 30.0,
    }
    for name, deg in base.items():
        q[:, dof(name)] = np.deg2rad(deg)

    if template == "random_skeleton":
        mid = 0.5 * (model.dof_lower + model.dof_upper)
        half = 0.5 * (model.dof_upper - model.dof_lower)
        for d in range(model.n_dofs):
            sig = np.zeros(duration)
            for _ in range(int(rng.integers(1, 4))):
                amp = rng.uniform(0.05, 0.25) * half[d]
                freq = rng.uniform(0.1, 1.5)
                phase = rng.uniform(0.0, 2.0 * np.pi)
                sig += amp * np.sin(2.0 * np.pi * freq * t + phase)
            q[:, d] = mid[d] + sig
        root[:, 2] += 0.01 * np.sin(2.0 * np.pi * 0.3 * t)
        root[:, 3] = 0.1 * np.sin(2.0 * np.pi * 0.2 * t + rng.uniform(0, 2 * np.pi))
    elif template == "isolated_knee_flexion":
        bump, event_span = _raised_cosine_bump(duration)
        q[:, dof("left_knee_flexion")] += np.deg2rad(40.0) * bump
    elif template == "mirrored_knee_extension":
        # both knees extend together while the hips co-move (start flexed)
        q[:, dof("left_knee_flexion")] = np.deg2rad(60.0)
        q[:, dof("right_knee_flexion")] = np.deg2rad(60.0)
        q[:, dof("left_hip_flexion")] = np.deg2rad(35.0)
        q[:, dof("right_hip_flexion")] = np.deg2rad(35.0)
        bump, event_span = _raised_cosine_bump(duration)
        q[:, dof("left_knee_flexion")] -= np.deg2rad(35.0) * bump
        q[:, dof("right_knee_flexion")] -= np.deg2rad(35.0) * bump
        q[:, dof("left_hip_flexion")] -= np.deg2rad(15.0) * bump
        q[:, dof("right_hip_flexion")] -= np.deg2rad(15.0) * bump
    elif template == "static":
        pass
    else:
        raise InputMismatchError(f"unknown motion template {template!r}")

    q = np.clip(q, model.dof_lower, model.dof_upper)
    pvec = scale_products(scales)
    markers = np.empty((duration, model.n_markers, 3))
    for f in range(duration):
        markers[f] = fk_evaluate(model, np.concatenate([root[f], q[f]]), pvec).markers
    return MotionSample(
        marker_names=list(model.marker_names),
        markers=markers,
        q=q,
        root=root,
        scales=scales,
        event_span=event_span,
        template=template,
    )


@dataclass
class RenderTruth:
    """Noise-free projections and the applied corruption masks."""

    exact_uv: np.ndarray  # (V, F, K, 2), NaN when behind the camera
    occluded: np.ndarray  # (V, F, K) bool
    camera_ids: list[str] = field(default_factory=list)


def render_detections(
    markers3d: np.ndarray,
    keypoint_names: list[str],
    rig: CameraRig,
    spec: SceneSpec,
):
    """Project markers into every camera and apply the noise/occlusion model.

    Occluded samples draw a low confidence and a large uniform offset; all
    others draw a high confidence and isotropic Gaussian noise of
    ``spec.pixel_noise``. Points behind a camera get confidence 0.

    Returns (list of DetectionSequence in rig order, RenderTruth).
    """
    markers3d = np.asarray(markers3d, dtype=np.float64)
    if not np.all(np.isfinite(markers3d)):
        raise InputMismatchError("markers must be finite")
    n_frames, n_kp = markers3d.shape[0], markers3d.shape[1]
    flat = markers3d.reshape(-1, 3)

    seeds = np.random.SeedSequence([int(spec.seed), 3]).spawn(len(rig.cameras))
    detections = []
    exact = np.full((len(rig.cameras), n_frames, n_kp, 2), np.nan)
    occluded = np.zeros((len(rig.cameras), n_frames, n_kp), dtype=bool)
    for i, cam in enumerate(rig.cameras):
        fx, fy = cam.focal
        cx, cy = cam.principal_point
        uv, in_front = _kernels.project_points(
            flat, cam.rotation, cam.translation, fx, fy, cx, cy, cam.skew, cam.distortion
        )
        uv = uv.reshape(n_frames, n_kp, 2)
        in_front = in_front.reshape(n_frames, n_kp)
        exact[i] = uv

        rng = np.random.default_rng(seeds[i])
        occ = rng.random((n_frames, n_kp)) < spec.occlusion_rate
        gauss = rng.normal(0.0, 1.0, (n_frames, n_kp, 2))
        offset_mag = rng.uniform(*spec.occlusion_offset_px, (n_frames, n_kp))
        offset_dir = rng.uniform(0.0, 2.0 * np.pi, (n_frames, n_kp))
        hi = rng.uniform(*spec.conf_high, (n_frames, n_kp))
        lo = rng.uniform(*spec.conf_low, (n_frames, n_kp))

        pts = np.empty((n_frames, n_kp, 3))
        pts[:, :, :2] = uv + spec.pixel_noise * gauss
        offs = offset_mag[..., None] * np.stack(
            [np.cos(offset_dir), np.sin(offset_dir)], axis=-1
        )
        pts[:, :, :2] = np.where(occ[..., None], uv + offs, pts[:, :, :2])
        pts[:, :, 2] = np.where(occ, lo, hi)
        pts[~in_front] = (np.nan, np.nan, 0.0)
        occluded[i] = occ & in_front

        detections.append(
            DetectionSequence(
                camera_id=cam.camera_id,
                keypoint_names=list(keypoint_names),
                points=pts,
            )
        )
    truth = RenderTruth(exact_uv=exact, occluded=occluded, camera_ids=rig.camera_ids)
    return detections, truth
