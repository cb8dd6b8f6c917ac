"""Joint-angle trajectories and knee movement-pattern classification.

Events are excursions of a knee angle between consecutive turning points of
the (optionally smoothed) trajectory. An excursion larger than
``theta_event`` is labeled:

  * ``isolated`` when the contralateral knee and ipsilateral hip both move
    less than ``theta_iso`` over the event window;
  * ``synergistic_mirrored`` when the contralateral knee moves at least
    ``theta_iso`` in the same direction AND the ipsilateral hip moves at
    least ``theta_iso``;
  * ``other`` otherwise.

Turning points are found with a reversal hysteresis so small ripples from
noisy tracking do not fragment one movement into many.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InputMismatchError
from .fit import FitResult

KNEE_ANGLES = ("left_knee_flexion", "right_knee_flexion")
HIP_OF_KNEE = {
    "left_knee_flexion": "left_hip_flexion",
    "right_knee_flexion": "right_hip_flexion",
}
DEFAULT_ANGLES = (
    "left_hip_flexion",
    "left_knee_flexion",
    "right_hip_flexion",
    "right_knee_flexion",
)


@dataclass
class JointTrajectory:
    angle_names: list[str]
    values_deg: np.ndarray  # (F, A)
    frame_rate: float
    converged: np.ndarray  # (F,) bool, False where the fit carried the pose

    def __post_init__(self):
        self.values_deg = np.asarray(self.values_deg, dtype=np.float64)
        self.converged = np.asarray(self.converged, dtype=bool)
        if self.values_deg.shape != (len(self.converged), len(self.angle_names)):
            raise InputMismatchError("trajectory arrays disagree in shape")

    def angle(self, name: str) -> np.ndarray:
        try:
            return self.values_deg[:, self.angle_names.index(name)]
        except ValueError as exc:
            raise InputMismatchError(f"trajectory does not contain angle {name!r}") from exc

    @property
    def num_frames(self) -> int:
        return self.values_deg.shape[0]


@dataclass
class EventParams:
    theta_event_deg: float = 20.0
    theta_iso_deg: float = 10.0
    reversal_deg: float = 5.0  # hysteresis for turning-point detection
    trim_frac: float = 0.05  # trims flat lead-in/out from the event span
    smooth_window: int = 5
    min_frames: int = 3


@dataclass
class MovementEvent:
    start: int
    end: int  # inclusive
    label: str
    side: str  # "left" or "right"
    excursion_deg: float

    @property
    def span(self) -> tuple[int, int]:
        return (self.start, self.end)


def extract_joint_trajectories(
    fit: FitResult, angles=DEFAULT_ANGLES, smooth_window: int = 0
) -> JointTrajectory:
    """Named joint-angle time series in degrees at the fit's frame rate."""
    idx = []
    for name in angles:
        if name not in fit.dof_names:
            raise InputMismatchError(f"unknown angle name {name!r}")
        idx.append(fit.dof_names.index(name))
    values = np.rad2deg(fit.q[:, idx])
    if smooth_window > 1:
        values = np.column_stack(
            [_moving_average(values[:, a], smooth_window) for a in range(values.shape[1])]
        )
    return JointTrajectory(
        angle_names=list(angles),
        values_deg=values,
        frame_rate=fit.frame_rate,
        converged=fit.converged.copy(),
    )


def _moving_average(x: np.ndarray, window: int) -> np.ndarray:
    window = int(window)
    if window <= 1 or x.size == 0:
        return x.copy()
    pad = window // 2
    padded = np.concatenate([np.full(pad, x[0]), x, np.full(window - 1 - pad, x[-1])])
    kernel = np.full(window, 1.0 / window)
    return np.convolve(padded, kernel, mode="valid")


def _turning_points(x: np.ndarray, reversal: float) -> list[int]:
    """Indices of alternating extrema, ignoring reversals smaller than ``reversal``."""
    n = x.size
    if n < 2:
        return []
    points: list[int] = []
    trend = 0
    up_cand = 0  # running max index
    dn_cand = 0  # running min index
    for i in range(1, n):
        if x[i] > x[up_cand]:
            up_cand = i
        if x[i] < x[dn_cand]:
            dn_cand = i
        if trend <= 0 and x[i] - x[dn_cand] >= reversal:
            points.append(dn_cand)
            trend = 1
            up_cand = i
        elif trend >= 0 and x[up_cand] - x[i] >= reversal:
            points.append(up_cand)
            trend = -1
            dn_cand = i
    if trend > 0:
        points.append(up_cand)
    elif trend < 0:
        points.append(dn_cand)
    return points


def _trim_span(x: np.ndarray, a: int, b: int, trim_frac: float) -> tuple[int, int]:
    """Shrink [a, b] past flat lead-in/lead-out of the monotone excursion."""
    tol = trim_frac * abs(x[b] - x[a])
    start = a
    while start < b and abs(x[start + 1] - x[a]) <= tol:
        start += 1
    end = b
    while end > start and abs(x[b] - x[end - 1]) <= tol:
        end -= 1
    return start, end


def classify_knee_events(
    traj: JointTrajectory, params: EventParams | None = None
) -> list[MovementEvent]:
    """Detect and label knee excursions (see module docstring for the rule)."""
    params = params or EventParams()
    for name in KNEE_ANGLES:
        if name not in traj.angle_names:
            raise InputMismatchError(f"trajectory must contain {name}")
        if HIP_OF_KNEE[name] not in traj.angle_names:
            raise InputMismatchError(f"trajectory must contain {HIP_OF_KNEE[name]}")

    smoothed = {
        name: _moving_average(traj.angle(name), params.smooth_window)
        for name in set(KNEE_ANGLES) | set(HIP_OF_KNEE.values())
    }

    events: list[MovementEvent] = []
    for knee in KNEE_ANGLES:
        side = "left" if knee.startswith("left") else "right"
        contra = KNEE_ANGLES[1] if knee == KNEE_ANGLES[0] else KNEE_ANGLES[0]
        hip = HIP_OF_KNEE[knee]
        x = smoothed[knee]
        points = _turning_points(x, params.reversal_deg)
        for a, b in zip(points[:-1], points[1:]):
            excursion = x[b] - x[a]
            if abs(excursion) < params.theta_event_deg:
                continue
            start, end = _trim_span(x, a, b, params.trim_frac)
            if end - start + 1 < params.min_frames:
                continue
            c = smoothed[contra][end] - smoothed[contra][start]
            h = smoothed[hip][end] - smoothed[hip][start]
            if abs(c) < params.theta_iso_deg and abs(h) < params.theta_iso_deg:
                label = "isolated"
            elif (
                abs(c) >= params.theta_iso_deg
                and np.sign(c) == np.sign(excursion)
                and abs(h) >= params.theta_iso_deg
            ):
                label = "synergistic_mirrored"
            else:
                label = "other"
            events.append(
                MovementEvent(
                    start=int(start),
                    end=int(end),
                    label=label,
                    side=side,
                    excursion_deg=float(excursion),
                )
            )
    events.sort(key=lambda e: (e.start, e.side))
    return events
