"""Pure numpy implementation of the hot numerical kernels.

This module is the reference implementation; ``_core.pyx`` is a compiled
drop-in replacement with identical semantics. Both are exercised by the
kernel parity tests, so any behavioural change must land in both files.

Conventions:
  * rotations are world->camera, translations in meters
  * ``dist`` is the 5-coefficient radial-tangential vector (k1, k2, p1, p2, k3)
  * normalized coordinates are (x/z, y/z) in the camera frame before distortion
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "python"

# Number of fixed-point iterations used to invert the distortion polynomial.
# A fixed count (rather than a convergence break) keeps the compiled and pure
# backends in lockstep.
UNDISTORT_ITERS = 25

# Residuals from views behind the camera during IRLS.
_BIG_RESIDUAL = 1e12


def project_points(points, rot, trans, fx, fy, cx, cy, skew, dist):
    """Project world points into one camera.

    Parameters
    ----------
    points : (N, 3) world coordinates, meters.
    rot, trans : world->camera rotation (3, 3) and translation (3,).
    fx, fy, cx, cy, skew : intrinsics, pixels.
    dist : (5,) distortion coefficients (k1, k2, p1, p2, k3).

    Returns
    -------
    uv : (N, 2) pixels, NaN where the point is behind the camera.
    in_front : (N,) bool, True where camera-frame depth is positive.
    """
    points = np.asarray(points, dtype=np.float64)
    cam = points @ np.asarray(rot, dtype=np.float64).T + np.asarray(trans, dtype=np.float64)
    z = cam[:, 2]
    in_front = z > 0.0
    uv = np.full((points.shape[0], 2), np.nan)
    if np.any(in_front):
        x = cam[in_front, 0] / z[in_front]
        y = cam[in_front, 1] / z[in_front]
        xd, yd = _distort(x, y, dist)
        uv[in_front, 0] = fx * xd + skew * yd + cx
        uv[in_front, 1] = fy * yd + cy
    return uv, in_front


def _distort(x, y, dist):
    k1, k2, p1, p2, k3 = (float(d) for d in dist)
    r2 = x * x + y * y
    radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
    xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
    yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
    return xd, yd


def undistort_points(pixels, fx, fy, cx, cy, skew, dist):
    """Map pixel coordinates to undistorted normalized coordinates.

    Inverts the intrinsic mapping exactly and the distortion polynomial by
    fixed-point iteration (exact pass-through when all coefficients are zero).

    Returns (N, 2) normalized coordinates; NaN inputs propagate.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    v = (pixels[:, 1] - cy) / fy
    u = (pixels[:, 0] - cx - skew * v) / fx
    k1, k2, p1, p2, k3 = (float(d) for d in dist)
    if k1 == 0.0 and k2 == 0.0 and p1 == 0.0 and p2 == 0.0 and k3 == 0.0:
        return np.stack([u, v], axis=1)
    x = u.copy()
    y = v.copy()
    for _ in range(UNDISTORT_ITERS):
        r2 = x * x + y * y
        radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
        dx = 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
        dy = p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
        x = (u - dx) / radial
        y = (v - dy) / radial
    return np.stack([x, y], axis=1)


def triangulate_batch(
    norm_xy,
    conf,
    det_uv,
    rots,
    trans,
    intrinsics,
    dists,
    huber_k,
    max_iter,
    weight_tol,
    exclude_rel,
    degenerate_ratio,
):
    """Confidence-weighted IRLS triangulation of a batch of points.

    Parameters
    ----------
    norm_xy : (V, N, 2) undistorted normalized observations per view.
    conf : (V, N) confidences; <= 0 or non-finite marks a missing observation.
    det_uv : (V, N, 2) raw detected pixels used for pixel-space residuals.
    rots : (V, 3, 3); trans : (V, 3).
    intrinsics : (V, 5) rows of (fx, fy, cx, cy, skew).
    dists : (V, 5) distortion coefficients per view.
    huber_k : Huber threshold on residual / scale.
    max_iter : IRLS iteration cap.
    weight_tol : stop when the largest weight change falls below this.
    exclude_rel : views with final weight below this fraction of the max
        weight are excluded and the point re-solved without them.
    degenerate_ratio : smallest/largest singular-value ratio of the design
        matrix above which the point is flagged degenerate.

    Returns
    -------
    points : (N, 3) NaN where invalid.
    weights : (V, N) final per-view weights (0 for missing/excluded views).
    valid : (N,) bool.
    degenerate : (N,) bool.
    effective : (N,) int32, number of views contributing to the solution.
    """
    norm_xy = np.asarray(norm_xy, dtype=np.float64)
    conf = np.asarray(conf, dtype=np.float64)
    det_uv = np.asarray(det_uv, dtype=np.float64)
    n_views, n_pts = conf.shape

    points = np.full((n_pts, 3), np.nan)
    weights_out = np.zeros((n_views, n_pts))
    valid = np.zeros(n_pts, dtype=bool)
    degenerate = np.zeros(n_pts, dtype=bool)
    effective = np.zeros(n_pts, dtype=np.int32)

    for n in range(n_pts):
        c = conf[:, n].copy()
        c[~np.isfinite(norm_xy[:, n, 0]) | ~np.isfinite(norm_xy[:, n, 1])] = 0.0
        active = np.flatnonzero(c > 0.0)
        if active.size < 2:
            effective[n] = active.size
            continue

        xy = norm_xy[active, n, :]
        w = c[active].copy()
        point = None
        is_degen = False
        for _ in range(max_iter):
            point, is_degen = _solve_dlt(xy, w, rots[active], trans[active], degenerate_ratio)
            if is_degen:
                break
            res = _pixel_residuals(
                point, det_uv[active, n, :], rots[active], trans[active],
                intrinsics[active], dists[active],
            )
            med = np.median(res)
            sigma = 1.4826 * np.median(np.abs(res - med))
            if sigma < 1.0:
                sigma = 1.0
            z = res / sigma
            hub = np.ones_like(z)
            big = z > huber_k
            hub[big] = huber_k / z[big]
            w_new = c[active] * hub
            if np.max(np.abs(w_new - w)) < weight_tol:
                w = w_new
                break
            w = w_new

        if is_degen or point is None:
            degenerate[n] = True
            effective[n] = active.size
            continue

        keep = w >= exclude_rel * np.max(w)
        effective[n] = int(np.count_nonzero(keep))
        if effective[n] < 2:
            weights_out[active, n] = np.where(keep, w, 0.0)
            continue
        if not keep.all():
            point, is_degen = _solve_dlt(
                xy[keep], w[keep], rots[active[keep]], trans[active[keep]], degenerate_ratio
            )
            if is_degen or point is None:
                degenerate[n] = True
                continue
        weights_out[active, n] = np.where(keep, w, 0.0)
        points[n] = point
        valid[n] = True

    return points, weights_out, valid, degenerate, effective


def _solve_dlt(xy, w, rots, trans, degenerate_ratio):
    """Weighted homogeneous DLT solve on normalized rays.

    Rows are scaled by sqrt(weight); the solution is the eigenvector of the
    smallest eigenvalue of A^T A. Returns (point or None, degenerate flag).
    """
    sw = np.sqrt(w)
    n = xy.shape[0]
    a = np.empty((2 * n, 4))
    a[0::2, :3] = xy[:, 0:1] * rots[:, 2, :] - rots[:, 0, :]
    a[0::2, 3] = xy[:, 0] * trans[:, 2] - trans[:, 0]
    a[1::2, :3] = xy[:, 1:2] * rots[:, 2, :] - rots[:, 1, :]
    a[1::2, 3] = xy[:, 1] * trans[:, 2] - trans[:, 1]
    a[0::2] *= sw[:, None]
    a[1::2] *= sw[:, None]

    m = a.T @ a
    eigvals, eigvecs = np.linalg.eigh(m)
    lam_min = max(eigvals[0], 0.0)
    lam_max = max(eigvals[-1], 0.0)
    if lam_max <= 0.0:
        return None, True
    # ratio of singular values of A = sqrt of eigenvalue ratio of A^T A
    if np.sqrt(lam_min / lam_max) > degenerate_ratio:
        return None, True
    # rank < 3 means the solution direction is not unique
    if eigvals[1] <= 1e-10 * lam_max:
        return None, True
    h = eigvecs[:, 0]
    if abs(h[3]) <= 1e-12 * np.linalg.norm(h):
        return None, True
    return h[:3] / h[3], False


def _pixel_residuals(point, det_uv, rots, trans, intrinsics, dists):
    cam = rots @ point + trans
    z = cam[:, 2]
    res = np.full(cam.shape[0], _BIG_RESIDUAL)
    front = z > 0.0
    if np.any(front):
        x = cam[front, 0] / z[front]
        y = cam[front, 1] / z[front]
        n_front = int(np.count_nonzero(front))
        xd = np.empty(n_front)
        yd = np.empty(n_front)
        for j, i in enumerate(np.flatnonzero(front)):
            xdi, ydi = _distort(x[j : j + 1], y[j : j + 1], dists[i])
            xd[j] = xdi[0]
            yd[j] = ydi[0]
        fx = intrinsics[front, 0]
        fy = intrinsics[front, 1]
        cx = intrinsics[front, 2]
        cy = intrinsics[front, 3]
        skew = intrinsics[front, 4]
        u = fx * xd + skew * yd + cx
        v = fy * yd + cy
        du = u - det_uv[front, 0]
        dv = v - det_uv[front, 1]
        res[front] = np.sqrt(du * du + dv * dv)
    return res
