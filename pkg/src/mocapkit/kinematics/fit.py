"""Two-stage inverse-kinematic fitting of the skeleton to 3D keypoints.

Stage 1 (scale calibration) alternates per-frame pose fits with a linear
solve for the scale products on a uniformly sampled subset of frames: for a
fixed pose, marker positions are linear in [overall, overall * group_scale],
so scales have a closed-form weighted least-squares solution.

Stage 2 (tracking) freezes the scales and fits each frame sequentially with
the previous frame as initialization plus a quadratic temporal regularizer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from ..errors import InputMismatchError, ScaleCalibrationError
from ..triangulation import Pose3DSequence
from .forward import (
    N_SCALE_COLS,
    fk_evaluate,
    marker_dof_mask,
    pose_jacobian,
    scale_products,
)
from .skeleton import SCALE_BOUNDS, ScaleSet, SkeletonModel

MIN_CALIB_FRAMES = 10
MAX_CALIB_FRAMES = 50
DEFAULT_MU = 1e-2
COST_TOL = 1e-8
SCALE_TOL = 1e-6
MAX_ITER_PER_FRAME = 200

# A frame takes part in fitting when at least this many of the model's
# markers are observed; below that the pose is carried from the neighbor.
MIN_VALID_MARKERS = 4


@dataclass
class FitResult:
    """Output of :func:`fit_pose_sequence`."""

    scales: ScaleSet
    root: np.ndarray  # (F, 6) [tx, ty, tz, rx, ry, rz]
    q: np.ndarray  # (F, D) joint angles, radians
    residual_rms: np.ndarray  # (F,) meters over observed markers, NaN if none
    converged: np.ndarray  # (F,) bool
    dof_names: list[str]
    marker_names: list[str]
    frame_rate: float

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([self.root, self.q], axis=1)


class _FrameProblem:
    """Weighted marker residuals for one frame at fixed scales.

    Residuals are expressed in millimeters so that the optimizer cost is
    O(1)-scaled and the temporal regularizer only anchors directions the
    markers do not constrain.
    """

    def __init__(self, model, scale_vec, targets, sqrt_w, mask):
        self.model = model
        self.scale_vec = scale_vec
        self.targets = targets  # (M, 3)
        self.sqrt_w = sqrt_w  # (M,)
        self.mask = mask
        self.obs = np.flatnonzero(sqrt_w > 0)

    def residuals(self, params):
        fk = fk_evaluate(self.model, params, self.scale_vec)
        r = (fk.markers[self.obs] - self.targets[self.obs]) * self.sqrt_w[self.obs, None]
        return 1000.0 * r.ravel()

    def residuals_jac(self, params):
        fk = fk_evaluate(self.model, params, self.scale_vec)
        jac = pose_jacobian(self.model, fk, self.mask)
        r = (fk.markers[self.obs] - self.targets[self.obs]) * self.sqrt_w[self.obs, None]
        j = jac[self.obs] * self.sqrt_w[self.obs, None, None]
        return 1000.0 * r.ravel(), 1000.0 * j.reshape(-1, params.shape[0])


def _solve_frame(problem, x0, bounds, mu=0.0, x_prev=None, max_nfev=MAX_ITER_PER_FRAME):
    """Bounded least-squares solve of one frame; returns (params, cost, converged)."""
    sqrt_mu = np.sqrt(mu) if mu > 0 else 0.0

    def fun(x):
        r = problem.residuals(x)
        if sqrt_mu > 0:
            r = np.concatenate([r, sqrt_mu * (x - x_prev)])
        return r

    def jac(x):
        _, j = problem.residuals_jac(x)
        if sqrt_mu > 0:
            j = np.vstack([j, sqrt_mu * np.eye(x.shape[0])])
        return j

    x0 = np.clip(x0, bounds[0] + 1e-12, bounds[1] - 1e-12)
    res = least_squares(
        fun,
        x0,
        jac=jac,
        bounds=bounds,
        method="trf",
        ftol=COST_TOL,
        xtol=1e-12,
        gtol=1e-12,
        max_nfev=max_nfev,
    )
    converged = res.status != 0  # 0 means the max_nfev cap was hit
    return res.x, 2.0 * res.cost, converged


def _pose_bounds(model: SkeletonModel):
    lower = np.concatenate([np.full(6, -np.inf), model.dof_lower])
    upper = np.concatenate([np.full(6, np.inf), model.dof_upper])
    return lower, upper


def _match_markers(model: SkeletonModel, observed: Pose3DSequence):
    """Indices of model markers present in the observed sequence."""
    obs_index = {name: i for i, name in enumerate(observed.keypoint_names)}
    model_idx = []
    obs_idx = []
    for m, name in enumerate(model.marker_names):
        if name in obs_index:
            model_idx.append(m)
            obs_idx.append(obs_index[name])
    if len(model_idx) < MIN_VALID_MARKERS:
        raise InputMismatchError(
            f"only {len(model_idx)} observed keypoints match the model marker map"
        )
    return np.asarray(model_idx, dtype=int), np.asarray(obs_idx, dtype=int)


def _solve_scales(model, frames_fk, frames_targets, frames_w, model_idx):
    """Closed-form weighted LS for scale products and root translations.

    For fixed rotations, marker positions are linear in the scale products
    AND in the per-frame root translation: x_m = root_t + C[m] @ p. Solving
    both jointly decouples the dominant scale/translation interaction and
    speeds up the alternation. Returns (ScaleSet, per-frame root_t list).
    """
    n_frames = len(frames_fk)
    rows = []
    rhs = []
    for f, (fk, targets, w) in enumerate(zip(frames_fk, frames_targets, frames_w)):
        obs = np.flatnonzero(w > 0)
        if obs.size == 0:
            continue
        c = fk.design[model_idx[obs]]  # (n, cols, 3)
        sw = np.sqrt(w[obs])
        block = np.zeros((obs.size, 3, N_SCALE_COLS + 3 * n_frames))
        block[:, :, :N_SCALE_COLS] = c.transpose(0, 2, 1)
        block[:, 0, N_SCALE_COLS + 3 * f + 0] = 1.0
        block[:, 1, N_SCALE_COLS + 3 * f + 1] = 1.0
        block[:, 2, N_SCALE_COLS + 3 * f + 2] = 1.0
        rows.append((block * sw[:, None, None]).reshape(-1, N_SCALE_COLS + 3 * n_frames))
        rhs.append((targets[obs] * sw[:, None]).reshape(-1))
    a = np.concatenate(rows, axis=0)
    b = np.concatenate(rhs)
    sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    p = sol[:N_SCALE_COLS]
    roots = [sol[N_SCALE_COLS + 3 * f : N_SCALE_COLS + 3 * f + 3] for f in range(n_frames)]
    lo, hi = SCALE_BOUNDS
    overall = float(np.clip(p[0], lo, hi))
    groups = {
        name: float(np.clip(p[i + 1] / overall, lo, hi))
        for i, name in enumerate(ScaleSet().groups)
    }
    return ScaleSet(groups=groups, overall=overall), roots


def fit_pose_sequence(
    model: SkeletonModel,
    observed: Pose3DSequence,
    weights=None,
    *,
    frame_rate: float = 29.0,
    mu: float = DEFAULT_MU,
    max_calib_frames: int = MAX_CALIB_FRAMES,
    max_alternations: int = 40,
) -> FitResult:
    """Fit scales and per-frame joint angles to an observed 3D sequence.

    ``weights`` optionally maps keypoint name -> weight (default 1.0);
    invalid observations get weight zero regardless.
    """
    model_idx, obs_idx = _match_markers(model, observed)
    n_frames = observed.num_frames

    w_named = np.ones(len(model_idx))
    if weights is not None:
        for i, m in enumerate(model_idx):
            w_named[i] = float(weights.get(model.marker_names[m], 1.0))
        if np.any(w_named < 0):
            raise InputMismatchError("keypoint weights must be non-negative")

    # (F, M_model) targets and weights on the model marker set
    targets = np.full((n_frames, model.n_markers, 3), np.nan)
    w_frame = np.zeros((n_frames, model.n_markers))
    valid = observed.valid[:, obs_idx]
    targets[:, model_idx] = observed.positions[:, obs_idx]
    w_frame[:, model_idx] = valid * w_named[None, :]
    targets[~(w_frame > 0)] = 0.0  # neutral values under zero weight

    n_valid_per_frame = (w_frame > 0).sum(axis=1)
    usable = np.flatnonzero(n_valid_per_frame >= MIN_VALID_MARKERS)
    if usable.size < MIN_CALIB_FRAMES:
        raise ScaleCalibrationError(
            f"need >= {MIN_CALIB_FRAMES} frames with >= {MIN_VALID_MARKERS} valid keypoints, "
            f"got {usable.size}"
        )

    mask = marker_dof_mask(model)
    bounds = _pose_bounds(model)
    sqrt_w = np.sqrt(w_frame)

    # ---- Stage 1: scale calibration on a uniform frame subset ----
    n_cal = min(max_calib_frames, usable.size)
    cal_frames = usable[np.unique(np.round(np.linspace(0, usable.size - 1, n_cal)).astype(int))]

    scales = ScaleSet()
    scale_vec = scale_products(scales)
    cal_params = {}
    rest_centroid = fk_evaluate(
        model, np.zeros(6 + model.n_dofs), scale_vec
    ).markers[model_idx].mean(axis=0)
    prev = None
    for f in cal_frames:
        obs = w_frame[f] > 0
        x0 = np.zeros(6 + model.n_dofs)
        x0[:3] = targets[f][obs].mean(axis=0) - rest_centroid
        cal_params[f] = x0 if prev is None else prev.copy()
        prev = cal_params[f]

    prev_scale_vec = scales.as_vector()
    for _ in range(max_alternations):
        frames_fk = []
        for f in cal_frames:
            problem = _FrameProblem(model, scale_vec, targets[f], sqrt_w[f], mask)
            x, _, _ = _solve_frame(problem, cal_params[f], bounds)
            cal_params[f] = x
            frames_fk.append(fk_evaluate(model, x, scale_vec))
        scales, cal_roots = _solve_scales(
            model, frames_fk, [targets[f][model_idx] for f in cal_frames],
            [w_frame[f][model_idx] for f in cal_frames], model_idx,
        )
        scale_vec = scale_products(scales)
        for f, root_t in zip(cal_frames, cal_roots):
            cal_params[f][:3] = root_t
        new_scale_vec = scales.as_vector()
        if np.max(np.abs(new_scale_vec - prev_scale_vec)) < SCALE_TOL:
            break
        prev_scale_vec = new_scale_vec

    # ---- Stage 2: sequential tracking with frozen scales ----
    n_params = 6 + model.n_dofs
    params = np.zeros((n_frames, n_params))
    residual_rms = np.full(n_frames, np.nan)
    converged = np.zeros(n_frames, dtype=bool)

    x_prev = cal_params[cal_frames[0]].copy()
    for f in range(n_frames):
        obs = np.flatnonzero(w_frame[f] > 0)
        if obs.size < MIN_VALID_MARKERS:
            params[f] = x_prev
            converged[f] = False
            continue
        problem = _FrameProblem(model, scale_vec, targets[f], sqrt_w[f], mask)
        x, cost, ok = _solve_frame(problem, x_prev, bounds, mu=mu, x_prev=x_prev)
        if not ok:
            # keep the better of the capped solution and the carried pose
            prev_cost = float(np.sum(problem.residuals(x_prev) ** 2))
            if prev_cost < cost:
                x = x_prev.copy()
        params[f] = x
        converged[f] = ok
        fk = fk_evaluate(model, x, scale_vec)
        diff = fk.markers[obs] - targets[f][obs]
        residual_rms[f] = float(np.sqrt(np.mean(np.sum(diff * diff, axis=1))))
        x_prev = x

    return FitResult(
        scales=scales,
        root=params[:, :6].copy(),
        q=params[:, 6:].copy(),
        residual_rms=residual_rms,
        converged=converged,
        dof_names=list(model.dof_names),
        marker_names=list(model.marker_names),
        frame_rate=frame_rate,
    )
