# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled implementation of the hot numerical kernels.

Drop-in replacement for ``_core_py``; both are covered by the kernel parity
tests and must stay semantically identical. The homogeneous DLT solve uses
a cyclic Jacobi eigendecomposition of the 4x4 normal matrix.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, fabs, sin, sqrt

cnp.import_array()

BACKEND_NAME = "cython"

UNDISTORT_ITERS = 25

cdef double BIG_RESIDUAL = 1e12


def project_points(points, rot, trans, double fx, double fy, double cx, double cy,
                   double skew, dist):
    """See ``_core_py.project_points``."""
    cdef const double[:, ::1] pts = np.ascontiguousarray(points, dtype=np.float64)
    cdef const double[:, ::1] r = np.ascontiguousarray(rot, dtype=np.float64)
    cdef const double[::1] t = np.ascontiguousarray(trans, dtype=np.float64)
    cdef const double[::1] d = np.ascontiguousarray(dist, dtype=np.float64)
    cdef Py_ssize_t n = pts.shape[0]
    uv_arr = np.full((n, 2), np.nan)
    ok_arr = np.zeros(n, dtype=bool)
    cdef double[:, ::1] uv = uv_arr
    cdef cnp.uint8_t[::1] ok = ok_arr.view(np.uint8)
    cdef Py_ssize_t i
    cdef double px, py, pz, x, y, xd, yd
    for i in range(n):
        px = r[0, 0] * pts[i, 0] + r[0, 1] * pts[i, 1] + r[0, 2] * pts[i, 2] + t[0]
        py = r[1, 0] * pts[i, 0] + r[1, 1] * pts[i, 1] + r[1, 2] * pts[i, 2] + t[1]
        pz = r[2, 0] * pts[i, 0] + r[2, 1] * pts[i, 1] + r[2, 2] * pts[i, 2] + t[2]
        if pz > 0.0:
            ok[i] = 1
            x = px / pz
            y = py / pz
            _distort(x, y, &d[0], &xd, &yd)
            uv[i, 0] = fx * xd + skew * yd + cx
            uv[i, 1] = fy * yd + cy
    return uv_arr, ok_arr


cdef inline void _distort(double x, double y, const double *d,
                          double *xd, double *yd) noexcept nogil:
    cdef double r2 = x * x + y * y
    cdef double radial = 1.0 + r2 * (d[0] + r2 * (d[1] + r2 * d[4]))
    xd[0] = x * radial + 2.0 * d[2] * x * y + d[3] * (r2 + 2.0 * x * x)
    yd[0] = y * radial + d[2] * (r2 + 2.0 * y * y) + 2.0 * d[3] * x * y


def undistort_points(pixels, double fx, double fy, double cx, double cy,
                     double skew, dist):
    """See ``_core_py.undistort_points``."""
    cdef const double[:, ::1] px = np.ascontiguousarray(pixels, dtype=np.float64)
    cdef const double[::1] d = np.ascontiguousarray(dist, dtype=np.float64)
    cdef Py_ssize_t n = px.shape[0]
    out_arr = np.empty((n, 2))
    cdef double[:, ::1] out = out_arr
    cdef bint has_dist = d[0] != 0.0 or d[1] != 0.0 or d[2] != 0.0 or d[3] != 0.0 or d[4] != 0.0
    cdef Py_ssize_t i, it
    cdef double u, v, x, y, r2, radial, dx, dy
    for i in range(n):
        v = (px[i, 1] - cy) / fy
        u = (px[i, 0] - cx - skew * v) / fx
        x = u
        y = v
        if has_dist:
            for it in range(UNDISTORT_ITERS):
                r2 = x * x + y * y
                radial = 1.0 + r2 * (d[0] + r2 * (d[1] + r2 * d[4]))
                dx = 2.0 * d[2] * x * y + d[3] * (r2 + 2.0 * x * x)
                dy = d[2] * (r2 + 2.0 * y * y) + 2.0 * d[3] * x * y
                x = (u - dx) / radial
                y = (v - dy) / radial
        out[i, 0] = x
        out[i, 1] = y
    return out_arr


cdef int _jacobi_eig4(double *m, double *eigvals, double *eigvecs) noexcept nogil:
    """Cyclic Jacobi eigendecomposition of a symmetric 4x4 (row-major).

    Writes eigenvalues (unsorted) and column eigenvectors. Returns the sweep
    count used.
    """
    cdef double a[16]
    cdef double v[16]
    cdef Py_ssize_t i, j, p, q, sweep
    cdef double off, apq, app, aqq, theta, tsign, tval, c, s, akp, akq
    for i in range(16):
        a[i] = m[i]
        v[i] = 0.0
    for i in range(4):
        v[i * 4 + i] = 1.0
    for sweep in range(50):
        off = 0.0
        for p in range(4):
            for q in range(p + 1, 4):
                off += a[p * 4 + q] * a[p * 4 + q]
        if off <= 1e-300:
            break
        for p in range(4):
            for q in range(p + 1, 4):
                apq = a[p * 4 + q]
                if fabs(apq) < 1e-300:
                    continue
                app = a[p * 4 + p]
                aqq = a[q * 4 + q]
                theta = (aqq - app) / (2.0 * apq)
                tsign = 1.0 if theta >= 0.0 else -1.0
                tval = tsign / (fabs(theta) + sqrt(theta * theta + 1.0))
                c = 1.0 / sqrt(tval * tval + 1.0)
                s = tval * c
                for i in range(4):
                    akp = a[i * 4 + p]
                    akq = a[i * 4 + q]
                    a[i * 4 + p] = c * akp - s * akq
                    a[i * 4 + q] = s * akp + c * akq
                for i in range(4):
                    akp = a[p * 4 + i]
                    akq = a[q * 4 + i]
                    a[p * 4 + i] = c * akp - s * akq
                    a[q * 4 + i] = s * akp + c * akq
                for i in range(4):
                    akp = v[i * 4 + p]
                    akq = v[i * 4 + q]
                    v[i * 4 + p] = c * akp - s * akq
                    v[i * 4 + q] = s * akp + c * akq
    for i in range(4):
        eigvals[i] = a[i * 4 + i]
    for i in range(16):
        eigvecs[i] = v[i]
    return <int>sweep


cdef inline void _insertion_sort(double *x, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double key
    for i in range(1, n):
        key = x[i]
        j = i - 1
        while j >= 0 and x[j] > key:
            x[j + 1] = x[j]
            j -= 1
        x[j + 1] = key


cdef double _median(double *x, double *scratch, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(n):
        scratch[i] = x[i]
    _insertion_sort(scratch, n)
    if n % 2 == 1:
        return scratch[n // 2]
    return 0.5 * (scratch[n // 2 - 1] + scratch[n // 2])


cdef int _solve_dlt(const double[:, ::1] xy, const double *w, Py_ssize_t n_active,
                    const double[:, :, ::1] rots, const double[:, ::1] trans,
                    const Py_ssize_t *view_idx, double degenerate_ratio,
                    double *point) noexcept nogil:
    """Weighted DLT via Jacobi on A^T A. Returns 0 on success, 1 if degenerate."""
    cdef double m[16]
    cdef double eigvals[4]
    cdef double eigvecs[16]
    cdef double row[4]
    cdef Py_ssize_t i, j, k, v
    cdef double wt, lam_min, lam_max, lam2, hnorm, h3
    for i in range(16):
        m[i] = 0.0
    for k in range(n_active):
        v = view_idx[k]
        wt = w[k]
        # x row
        for j in range(3):
            row[j] = xy[k, 0] * rots[v, 2, j] - rots[v, 0, j]
        row[3] = xy[k, 0] * trans[v, 2] - trans[v, 0]
        for i in range(4):
            for j in range(4):
                m[i * 4 + j] += wt * row[i] * row[j]
        # y row
        for j in range(3):
            row[j] = xy[k, 1] * rots[v, 2, j] - rots[v, 1, j]
        row[3] = xy[k, 1] * trans[v, 2] - trans[v, 1]
        for i in range(4):
            for j in range(4):
                m[i * 4 + j] += wt * row[i] * row[j]

    _jacobi_eig4(m, eigvals, eigvecs)
    cdef Py_ssize_t imin = 0, imax = 0
    for i in range(1, 4):
        if eigvals[i] < eigvals[imin]:
            imin = i
        if eigvals[i] > eigvals[imax]:
            imax = i
    lam_min = eigvals[imin]
    if lam_min < 0.0:
        lam_min = 0.0
    lam_max = eigvals[imax]
    if lam_max <= 0.0:
        return 1
    if sqrt(lam_min / lam_max) > degenerate_ratio:
        return 1
    # second-smallest eigenvalue for the rank guard
    lam2 = lam_max
    for i in range(4):
        if i != imin and eigvals[i] < lam2:
            lam2 = eigvals[i]
    if lam2 <= 1e-10 * lam_max:
        return 1
    hnorm = 0.0
    for i in range(4):
        hnorm += eigvecs[i * 4 + imin] * eigvecs[i * 4 + imin]
    hnorm = sqrt(hnorm)
    h3 = eigvecs[3 * 4 + imin]
    if fabs(h3) <= 1e-12 * hnorm:
        return 1
    for i in range(3):
        point[i] = eigvecs[i * 4 + imin] / h3
    return 0


def triangulate_batch(norm_xy, conf, det_uv, rots, trans, intrinsics, dists,
                      double huber_k, int max_iter, double weight_tol,
                      double exclude_rel, double degenerate_ratio):
    """See ``_core_py.triangulate_batch``."""
    cdef const double[:, :, ::1] nxy = np.ascontiguousarray(norm_xy, dtype=np.float64)
    cdef const double[:, ::1] cf = np.ascontiguousarray(conf, dtype=np.float64)
    cdef const double[:, :, ::1] duv = np.ascontiguousarray(det_uv, dtype=np.float64)
    cdef const double[:, :, ::1] rr = np.ascontiguousarray(rots, dtype=np.float64)
    cdef const double[:, ::1] tt = np.ascontiguousarray(trans, dtype=np.float64)
    cdef const double[:, ::1] intr = np.ascontiguousarray(intrinsics, dtype=np.float64)
    cdef const double[:, ::1] dd = np.ascontiguousarray(dists, dtype=np.float64)

    cdef Py_ssize_t n_views = cf.shape[0]
    cdef Py_ssize_t n_pts = cf.shape[1]

    points_arr = np.full((n_pts, 3), np.nan)
    weights_arr = np.zeros((n_views, n_pts))
    valid_arr = np.zeros(n_pts, dtype=bool)
    degen_arr = np.zeros(n_pts, dtype=bool)
    eff_arr = np.zeros(n_pts, dtype=np.int32)
    cdef double[:, ::1] points = points_arr
    cdef double[:, ::1] weights = weights_arr
    cdef cnp.uint8_t[::1] valid = valid_arr.view(np.uint8)
    cdef cnp.uint8_t[::1] degen = degen_arr.view(np.uint8)
    cdef cnp.int32_t[::1] eff = eff_arr

    view_idx_arr = np.empty(n_views, dtype=np.intp)
    keep_idx_arr = np.empty(n_views, dtype=np.intp)
    scratch2 = np.empty((n_views, 2))
    cdef Py_ssize_t[::1] view_idx = view_idx_arr
    cdef Py_ssize_t[::1] keep_idx = keep_idx_arr
    cdef double[:, ::1] axy = scratch2
    w_arr = np.empty(n_views)
    wn_arr = np.empty(n_views)
    res_arr = np.empty(n_views)
    tmp_arr = np.empty(n_views)
    dev_arr = np.empty(n_views)
    cdef double[::1] w = w_arr
    cdef double[::1] w_new = wn_arr
    cdef double[::1] res = res_arr
    cdef double[::1] tmp = tmp_arr
    cdef double[::1] dev = dev_arr

    cdef Py_ssize_t n, k, v, n_active, n_keep, it, i
    cdef double point[3]
    cdef double cx3, cy3, cz, x, y, xd, yd, u, vv, du, dv
    cdef double med, sigma, z, hub, wmax, dmax, c
    cdef int status
    cdef bint is_degen, changed

    for n in range(n_pts):
        n_active = 0
        for v in range(n_views):
            c = cf[v, n]
            if c > 0.0 and nxy[v, n, 0] == nxy[v, n, 0] and nxy[v, n, 1] == nxy[v, n, 1]:
                view_idx[n_active] = v
                axy[n_active, 0] = nxy[v, n, 0]
                axy[n_active, 1] = nxy[v, n, 1]
                w[n_active] = c
                n_active += 1
        if n_active < 2:
            eff[n] = <cnp.int32_t>n_active
            continue

        is_degen = False
        for it in range(max_iter):
            status = _solve_dlt(axy, &w[0], n_active, rr, tt, &view_idx[0],
                                degenerate_ratio, point)
            if status != 0:
                is_degen = True
                break
            # pixel residuals against the detected coordinates
            for k in range(n_active):
                v = view_idx[k]
                cx3 = rr[v, 0, 0] * point[0] + rr[v, 0, 1] * point[1] + rr[v, 0, 2] * point[2] + tt[v, 0]
                cy3 = rr[v, 1, 0] * point[0] + rr[v, 1, 1] * point[1] + rr[v, 1, 2] * point[2] + tt[v, 1]
                cz = rr[v, 2, 0] * point[0] + rr[v, 2, 1] * point[1] + rr[v, 2, 2] * point[2] + tt[v, 2]
                if cz > 0.0:
                    x = cx3 / cz
                    y = cy3 / cz
                    _distort(x, y, &dd[v, 0], &xd, &yd)
                    u = intr[v, 0] * xd + intr[v, 4] * yd + intr[v, 2]
                    vv = intr[v, 1] * yd + intr[v, 3]
                    du = u - duv[v, n, 0]
                    dv = vv - duv[v, n, 1]
                    res[k] = sqrt(du * du + dv * dv)
                else:
                    res[k] = BIG_RESIDUAL
            med = _median(&res[0], &tmp[0], n_active)
            for k in range(n_active):
                dev[k] = fabs(res[k] - med)
            sigma = 1.4826 * _median(&dev[0], &tmp[0], n_active)
            if sigma < 1.0:
                sigma = 1.0
            changed = False
            dmax = 0.0
            for k in range(n_active):
                z = res[k] / sigma
                hub = 1.0 if z <= huber_k else huber_k / z
                w_new[k] = cf[view_idx[k], n] * hub
                if fabs(w_new[k] - w[k]) > dmax:
                    dmax = fabs(w_new[k] - w[k])
            for k in range(n_active):
                w[k] = w_new[k]
            if dmax < weight_tol:
                break

        if is_degen:
            degen[n] = 1
            eff[n] = <cnp.int32_t>n_active
            continue

        wmax = 0.0
        for k in range(n_active):
            if w[k] > wmax:
                wmax = w[k]
        n_keep = 0
        for k in range(n_active):
            if w[k] >= exclude_rel * wmax:
                keep_idx[n_keep] = view_idx[k]
                axy[n_keep, 0] = nxy[view_idx[k], n, 0]
                axy[n_keep, 1] = nxy[view_idx[k], n, 1]
                w_new[n_keep] = w[k]
                n_keep += 1
        eff[n] = <cnp.int32_t>n_keep
        if n_keep < 2:
            for k in range(n_active):
                if w[k] >= exclude_rel * wmax:
                    weights[view_idx[k], n] = w[k]
            continue
        if n_keep != n_active:
            status = _solve_dlt(axy, &w_new[0], n_keep, rr, tt, &keep_idx[0],
                                degenerate_ratio, point)
            if status != 0:
                degen[n] = 1
                continue
        for k in range(n_active):
            if w[k] >= exclude_rel * wmax:
                weights[view_idx[k], n] = w[k]
        points[n, 0] = point[0]
        points[n, 1] = point[1]
        points[n, 2] = point[2]
        valid[n] = 1

    return points_arr, weights_arr, valid_arr, degen_arr, eff_arr
