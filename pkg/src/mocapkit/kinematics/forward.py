"""Forward kinematics with analytic position Jacobians.

Pose parameterization: ``params = [tx, ty, tz, rx, ry, rz, q...]`` where the
root rotation is intrinsic X-Y-Z Euler and ``q`` stacks the joint DOF in
model order. Marker positions decompose as

    x_m = root_t + sum_g p_g * C[m, g]

with ``p = [overall, overall * group_scales]`` and ``C`` the unit-scale
displacement contributions per scale column; this makes scale estimation a
linear problem for a fixed pose and gives scale derivatives for free.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .skeleton import SCALE_GROUP_NAMES, ScaleSet, SkeletonModel

N_SCALE_COLS = len(SCALE_GROUP_NAMES) + 1  # overall first, then the named groups

_GROUP_COL = {name: i + 1 for i, name in enumerate(SCALE_GROUP_NAMES)}


def scale_products(scales: ScaleSet) -> np.ndarray:
    """p vector: [overall, overall * g for each named group]."""
    p = np.empty(N_SCALE_COLS)
    p[0] = scales.overall
    for name, col in _GROUP_COL.items():
        p[col] = scales.overall * scales.groups[name]
    return p


@dataclass
class FkResult:
    markers: np.ndarray  # (M, 3)
    design: np.ndarray  # (M, N_SCALE_COLS, 3) unit-scale contributions
    seg_rot: np.ndarray  # (S, 3, 3)
    seg_origin: np.ndarray  # (S, 3)
    rot_axes: np.ndarray  # (3 + D, 3) world axes: root euler then joint dofs
    rot_origins: np.ndarray  # (3 + D, 3) rotation centers


_EYE3 = np.eye(3)
_ROOT_SKEW = np.stack(
    [
        np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]]),
        np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]),
        np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]),
    ]
)
_ROOT_OUTER = np.stack([np.outer(e, e) for e in np.eye(3)])


def fk_evaluate(model: SkeletonModel, params: np.ndarray, scale_vec: np.ndarray) -> FkResult:
    """Evaluate FK for one frame.

    ``scale_vec`` is the p-vector from :func:`scale_products`.
    """
    params = np.asarray(params, dtype=np.float64)
    root_t = params[:3]
    angles = params[3:]  # root euler then joint dofs, all rotational
    n_dofs = model.n_dofs

    # Rodrigues for every rotational parameter at once from cached matrices.
    cos = np.cos(angles)
    sin = np.sin(angles)
    skews = np.concatenate([_ROOT_SKEW, model.dof_skew]) if n_dofs else _ROOT_SKEW
    outers = np.concatenate([_ROOT_OUTER, model.dof_outer]) if n_dofs else _ROOT_OUTER
    axis_rots = (
        cos[:, None, None] * _EYE3
        + sin[:, None, None] * skews
        + (1.0 - cos)[:, None, None] * outers
    )
    all_axes = np.concatenate([_EYE3, model.dof_axes]) if n_dofs else _EYE3

    n_seg = len(model.segments)
    seg_rot = np.empty((n_seg, 3, 3))
    seg_design = np.zeros((n_seg, N_SCALE_COLS, 3))  # cumulative unit contributions
    rot_axes = np.empty((3 + n_dofs, 3))
    rot_origins = np.empty((3 + n_dofs, 3))

    # Root rotation as three sequential axis rotations about the root origin.
    r = axis_rots[0] @ axis_rots[1] @ axis_rots[2]
    rot_axes[0] = all_axes[0]
    rot_axes[1] = axis_rots[0] @ all_axes[1]
    rot_axes[2] = axis_rots[0] @ axis_rots[1] @ all_axes[2]
    rot_origins[:3] = root_t
    seg_rot[0] = r

    seg_parent = model.seg_parent
    seg_offset = model.seg_offset
    seg_group_col = model.seg_group_col
    dof_start = model.seg_dof_start
    dof_count = model.seg_dof_count
    for idx in range(1, n_seg):
        pidx = seg_parent[idx]
        parent_rot = seg_rot[pidx]
        design = seg_design[pidx] + 0.0
        design[seg_group_col[pidx]] += parent_rot @ seg_offset[idx]
        seg_design[idx] = design
        origin = root_t + scale_vec @ design
        rot = parent_rot
        start = dof_start[idx]
        for k in range(dof_count[idx]):
            j = start + k
            rot_axes[3 + j] = rot @ all_axes[3 + j]
            rot_origins[3 + j] = origin
            rot = rot @ axis_rots[3 + j]
        seg_rot[idx] = rot

    seg_origin = root_t + seg_design.transpose(0, 2, 1) @ scale_vec

    design = seg_design[model.marker_segment].copy()
    off_world = np.einsum("mij,mj->mi", seg_rot[model.marker_segment], model.marker_offset)
    design[np.arange(model.n_markers), model.marker_group_col] += off_world
    markers = root_t + design.transpose(0, 2, 1) @ scale_vec

    return FkResult(
        markers=markers,
        design=design,
        seg_rot=seg_rot,
        seg_origin=seg_origin,
        rot_axes=rot_axes,
        rot_origins=rot_origins,
    )


def marker_dof_mask(model: SkeletonModel) -> np.ndarray:
    """(M, 3 + D) bool: which rotational parameters move which marker."""
    n_rot = 3 + model.n_dofs
    mask = np.zeros((model.n_markers, n_rot), dtype=bool)
    mask[:, :3] = True  # root rotation moves everything
    dof_seg = np.asarray(model.dof_segment, dtype=int)
    for m in range(model.n_markers):
        mask[m, 3:] = model.ancestry[model.marker_segment[m], dof_seg]
    return mask


def pose_jacobian(model: SkeletonModel, fk: FkResult, mask: np.ndarray) -> np.ndarray:
    """d markers / d params, shape (M, 3, 6 + D)."""
    n_markers = model.n_markers
    n_params = 6 + model.n_dofs
    jac = np.zeros((n_markers, 3, n_params))
    jac[:, 0, 0] = 1.0
    jac[:, 1, 1] = 1.0
    jac[:, 2, 2] = 1.0
    lever = fk.markers[:, None, :] - fk.rot_origins[None, :, :]  # (M, 3+D, 3)
    cross = np.cross(fk.rot_axes[None, :, :], lever)
    cross[~mask] = 0.0
    jac[:, :, 3:] = cross.transpose(0, 2, 1)
    return jac


def scale_jacobian(fk: FkResult, scales: ScaleSet) -> np.ndarray:
    """d markers / d [overall, group scales], shape (M, 3, N_SCALE_COLS).

    Chain rule from the p-products: p0 = overall, p_g = overall * g.
    """
    d_p = fk.design.transpose(0, 2, 1)  # (M, 3, cols) = dx/dp
    jac = np.empty_like(d_p)
    g = np.array([scales.groups[name] for name in SCALE_GROUP_NAMES])
    jac[:, :, 0] = d_p[:, :, 0] + d_p[:, :, 1:] @ g
    jac[:, :, 1:] = d_p[:, :, 1:] * scales.overall
    return jac


def forward_kinematics(
    model: SkeletonModel,
    q,
    scales: ScaleSet | None = None,
    root_pose=None,
    clamp_limits: bool = True,
):
    """Marker positions for one frame of joint angles.

    ``q`` holds joint angles (radians) in model DOF order; ``root_pose`` is
    the 6-vector [tx, ty, tz, rx, ry, rz]. Angles outside the joint limits
    are clamped and reported via the returned flag.

    Returns (markers (M, 3), clamped: bool).
    """
    q = np.asarray(q, dtype=np.float64).reshape(model.n_dofs)
    scales = scales or ScaleSet()
    root = (
        np.zeros(6)
        if root_pose is None
        else np.asarray(root_pose, dtype=np.float64).reshape(6)
    )
    clamped_q = np.clip(q, model.dof_lower, model.dof_upper)
    clamped = bool(np.any(clamped_q != q))
    params = np.concatenate([root, clamped_q])
    fk = fk_evaluate(model, params, scale_products(scales))
    return fk.markers, clamped
