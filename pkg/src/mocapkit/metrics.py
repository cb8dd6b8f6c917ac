"""Evaluation metrics: reprojection error, geometric consistency, position error.

Aggregation order follows frames -> cameras -> keypoints; the overall value
of every metric is the mean of its per-keypoint values over the active
keypoint mask, so per-keypoint tables always reconcile with the headline
numbers. Positions are meters internally and millimeters in reports.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentError, InputMismatchError
from .triangulation import DetectionSequence, Pose3DSequence

GC_THRESHOLDS_PX = (5.0, 10.0)
CONFIDENCE_LAMBDA = 0.5


@dataclass(frozen=True)
class SimilarityTransform:
    """x -> scale * rotation @ x + translation."""

    scale: float
    rotation: np.ndarray  # (3, 3), det +1
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        if not self.scale > 0:
            raise AlignmentError("similarity scale must be positive")

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return self.scale * pts @ self.rotation.T + self.translation


@dataclass
class KeypointMetrics:
    reprojection_error_px: float | None = None
    gc: dict[tuple[float, float], float | None] = field(default_factory=dict)
    position_error_mm: float | None = None
    n_reprojection_samples: int = 0
    n_position_frames: int = 0


@dataclass
class MetricReport:
    """Per-trial metric aggregates for one detection method."""

    trial_id: str
    method: str
    mean_reprojection_error: float | None
    gc: dict[tuple[float, float], float | None]
    mean_position_error: float | None
    per_keypoint: dict[str, KeypointMetrics]
    n_frames: int
    n_cameras: int
    keypoint_mask: list[str]


def residual_grid(
    detected: dict[str, DetectionSequence],
    reprojected: dict[str, np.ndarray],
):
    """Per-sample pixel errors and confidences on a (camera, frame, keypoint) grid.

    Entries where either side is missing are NaN / 0-confidence. Camera order
    follows sorted camera ids for determinism.
    """
    cam_ids = sorted(detected.keys())
    if set(reprojected.keys()) < set(cam_ids):
        missing = set(cam_ids) - set(reprojected.keys())
        raise InputMismatchError(f"reprojections missing for cameras: {sorted(missing)}")
    first = detected[cam_ids[0]]
    n_frames, n_kp = first.num_frames, first.num_keypoints
    errors = np.full((len(cam_ids), n_frames, n_kp), np.nan)
    confs = np.zeros((len(cam_ids), n_frames, n_kp))
    for i, cid in enumerate(cam_ids):
        det = detected[cid]
        rep = np.asarray(reprojected[cid], dtype=np.float64)
        if det.points.shape[:2] != (n_frames, n_kp) or rep.shape != (n_frames, n_kp, 2):
            raise InputMismatchError(f"camera {cid}: detection/reprojection shapes disagree")
        duv = det.points[:, :, :2] - rep
        err = np.sqrt(np.sum(duv * duv, axis=2))
        have = np.all(np.isfinite(det.points[:, :, :2]), axis=2) & np.all(
            np.isfinite(rep), axis=2
        )
        errors[i][have] = err[have]
        confs[i] = np.where(np.isfinite(det.points[:, :, 2]), det.points[:, :, 2], 0.0)
    return errors, confs, list(first.keypoint_names)


def _mask_indices(keypoint_names: list[str], mask) -> np.ndarray:
    if mask is None:
        return np.arange(len(keypoint_names))
    wanted = list(mask)
    unknown = [m for m in wanted if m not in keypoint_names]
    if unknown:
        raise InputMismatchError(f"mask names not in keypoint set: {unknown}")
    return np.array([keypoint_names.index(m) for m in wanted], dtype=int)


def reprojection_error(
    detected: dict[str, DetectionSequence],
    reprojected: dict[str, np.ndarray],
    keypoint_mask=None,
):
    """Mean pixel distance between detections and reprojections.

    Returns (per_keypoint dict name -> (mean px | None, n_samples), overall mean | None).
    Per-keypoint values average frames first, then cameras; the overall value
    is the mean of per-keypoint values over the mask.
    """
    errors, _, names = residual_grid(detected, reprojected)
    per_keypoint: dict[str, tuple[float | None, int]] = {}
    for k, name in enumerate(names):
        grid = errors[:, :, k]  # (C, F)
        n = int(np.count_nonzero(np.isfinite(grid)))
        with np.errstate(invalid="ignore"):
            per_cam = np.nanmean(grid, axis=1)
        if np.all(np.isnan(per_cam)):
            per_keypoint[name] = (None, 0)
        else:
            per_keypoint[name] = (float(np.nanmean(per_cam)), n)
    idx = _mask_indices(names, keypoint_mask)
    vals = [per_keypoint[names[i]][0] for i in idx if per_keypoint[names[i]][0] is not None]
    overall = float(np.mean(vals)) if vals else None
    return per_keypoint, overall


def geometric_consistency(errors, confidences, d: float, lam: float) -> float | None:
    """Fraction of samples with error < d among samples with confidence > lam.

    Returns None when the conditioning set is empty.
    """
    if not d > 0:
        raise ValueError("d must be positive")
    if not (0 <= lam < 1):
        raise ValueError("lambda must lie in [0, 1)")
    errors = np.asarray(errors, dtype=np.float64).reshape(-1)
    confidences = np.asarray(confidences, dtype=np.float64).reshape(-1)
    sel = (confidences > lam) & np.isfinite(errors)
    if not np.any(sel):
        return None
    return float(np.mean(errors[sel] < d))


def gc_per_keypoint(
    errors: np.ndarray,
    confs: np.ndarray,
    names: list[str],
    d: float,
    lam: float,
    camera_aggregation: str = "pooled",
):
    """Geometric consistency per keypoint, pooled over (camera, frame) samples.

    With ``camera_aggregation='per_camera_mean'`` each camera's fraction is
    computed first and cameras are averaged.
    """
    out: dict[str, float | None] = {}
    for k, name in enumerate(names):
        if camera_aggregation == "pooled":
            out[name] = geometric_consistency(errors[:, :, k], confs[:, :, k], d, lam)
        elif camera_aggregation == "per_camera_mean":
            vals = [
                geometric_consistency(errors[c, :, k], confs[c, :, k], d, lam)
                for c in range(errors.shape[0])
            ]
            vals = [v for v in vals if v is not None]
            out[name] = float(np.mean(vals)) if vals else None
        else:
            raise ValueError(f"unknown camera_aggregation {camera_aggregation!r}")
    return out


def procrustes_align(source, target, validity_mask=None):
    """Least-squares similarity alignment of source onto target.

    Closed-form solution via the SVD of the cross-covariance, with a
    reflection guard that flips the smallest singular direction when the
    optimal orthogonal matrix has determinant -1.

    Returns (SimilarityTransform, aligned source with NaN outside the mask).
    """
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if source.shape != target.shape or source.ndim != 2 or source.shape[1] != 3:
        raise InputMismatchError("source and target must both be (N, 3)")
    if validity_mask is None:
        mask = np.all(np.isfinite(source), axis=1) & np.all(np.isfinite(target), axis=1)
    else:
        mask = np.asarray(validity_mask, dtype=bool)
        mask = mask & np.all(np.isfinite(source), axis=1) & np.all(np.isfinite(target), axis=1)
    n = int(np.count_nonzero(mask))
    if n < 3:
        raise AlignmentError(f"alignment needs >= 3 valid correspondences, got {n}")

    src = source[mask]
    tgt = target[mask]
    mu_s = src.mean(axis=0)
    mu_t = tgt.mean(axis=0)
    xs = src - mu_s
    xt = tgt - mu_t

    sv_s = np.linalg.svd(xs, compute_uv=False)
    sv_t = np.linalg.svd(xt, compute_uv=False)
    if sv_s[1] <= 1e-9 * sv_s[0] or sv_t[1] <= 1e-9 * sv_t[0]:
        raise AlignmentError("alignment undefined for collinear configuration")

    cov = xt.T @ xs / n
    u, dvals, vt = np.linalg.svd(cov)
    s = np.ones(3)
    if np.linalg.det(u @ vt) < 0:
        s[-1] = -1.0
    rot = u @ np.diag(s) @ vt
    var_s = float(np.mean(np.sum(xs * xs, axis=1)))
    scale = float(np.sum(dvals * s)) / var_s
    if scale <= 0:
        raise AlignmentError("degenerate configuration produced non-positive scale")
    trans = mu_t - scale * rot @ mu_s

    transform = SimilarityTransform(scale=scale, rotation=rot, translation=trans)
    aligned = np.full_like(source, np.nan)
    aligned[mask] = transform.apply(source[mask])
    return transform, aligned


def position_error(
    monocular: Pose3DSequence,
    reference: Pose3DSequence,
    keypoint_mask=None,
):
    """Procrustes-aligned per-keypoint Euclidean error, millimeters.

    Each frame is aligned independently; frames failing the alignment
    preconditions are excluded. Returns (per_keypoint dict name ->
    (mean mm | None, n_frames), overall mean mm | None, n_frames_used).
    """
    if monocular.keypoint_names != reference.keypoint_names:
        raise InputMismatchError("monocular and reference keypoint names differ")
    if monocular.num_frames != reference.num_frames:
        raise InputMismatchError("monocular and reference frame counts differ")
    names = reference.keypoint_names
    idx = _mask_indices(names, keypoint_mask)

    n_frames = reference.num_frames
    dists = np.full((n_frames, len(names)), np.nan)
    used = 0
    for f in range(n_frames):
        mask = monocular.valid[f] & reference.valid[f]
        mask_sel = np.zeros_like(mask)
        mask_sel[idx] = mask[idx]
        try:
            _, aligned = procrustes_align(
                monocular.positions[f], reference.positions[f], mask_sel
            )
        except AlignmentError:
            continue
        used += 1
        diff = aligned - reference.positions[f]
        d = np.sqrt(np.sum(diff * diff, axis=1)) * 1000.0
        dists[f, mask_sel] = d[mask_sel]

    per_keypoint: dict[str, tuple[float | None, int]] = {}
    for k, name in enumerate(names):
        col = dists[:, k]
        n = int(np.count_nonzero(np.isfinite(col)))
        per_keypoint[name] = (float(np.nanmean(col)) if n else None, n)
    vals = [per_keypoint[names[i]][0] for i in idx if per_keypoint[names[i]][0] is not None]
    overall = float(np.mean(vals)) if vals else None
    return per_keypoint, overall, used


def compute_metric_report(
    trial_id: str,
    method: str,
    detected: dict[str, DetectionSequence],
    reprojected: dict[str, np.ndarray],
    monocular: Pose3DSequence | None = None,
    reference: Pose3DSequence | None = None,
    gc_thresholds=GC_THRESHOLDS_PX,
    confidence_lambda: float = CONFIDENCE_LAMBDA,
    keypoint_mask=None,
    gc_camera_aggregation: str = "pooled",
) -> MetricReport:
    """Assemble the full per-trial report for one method."""
    errors, confs, names = residual_grid(detected, reprojected)
    idx = _mask_indices(names, keypoint_mask)
    mask_names = [names[i] for i in idx]

    reproj_pk, reproj_mean = reprojection_error(detected, reprojected, keypoint_mask)
    per_keypoint = {
        name: KeypointMetrics(
            reprojection_error_px=reproj_pk[name][0],
            n_reprojection_samples=reproj_pk[name][1],
        )
        for name in names
    }

    gc_overall: dict[tuple[float, float], float | None] = {}
    for d in gc_thresholds:
        key = (float(d), float(confidence_lambda))
        pk = gc_per_keypoint(errors, confs, names, d, confidence_lambda, gc_camera_aggregation)
        for name in names:
            per_keypoint[name].gc[key] = pk[name]
        vals = [pk[n] for n in mask_names if pk[n] is not None]
        gc_overall[key] = float(np.mean(vals)) if vals else None

    pos_mean = None
    if monocular is not None:
        if reference is None:
            raise InputMismatchError("position error requires a reference sequence")
        pos_pk, pos_mean, _ = position_error(monocular, reference, keypoint_mask)
        for name in names:
            per_keypoint[name].position_error_mm = pos_pk[name][0]
            per_keypoint[name].n_position_frames = pos_pk[name][1]

    return MetricReport(
        trial_id=trial_id,
        method=method,
        mean_reprojection_error=reproj_mean,
        gc=gc_overall,
        mean_position_error=pos_mean,
        per_keypoint=per_keypoint,
        n_frames=detected[sorted(detected)[0]].num_frames,
        n_cameras=len(detected),
        keypoint_mask=mask_names,
    )
