"""File formats: detections, 3D poses, trial manifests, ground-truth sidecars.

All text formats are deterministic: floats are written with shortest
round-trip repr, rows in fixed order. Schemas are documented in the README.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import InputMismatchError
from .triangulation import DetectionSequence, Pose3DSequence


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# detections: one CSV per camera, metadata in leading comment lines
# ---------------------------------------------------------------------------

def save_detections(det: DetectionSequence, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(f"# camera_id: {det.camera_id}\n")
        writer = csv.writer(fh)
        header = ["frame"]
        for name in det.keypoint_names:
            header += [f"{name}_u", f"{name}_v", f"{name}_c"]
        writer.writerow(header)
        for f in range(det.num_frames):
            row = [str(f)]
            for k in range(det.num_keypoints):
                u, v, c = det.points[f, k]
                row += [_fmt(u), _fmt(v), _fmt(c)]
            writer.writerow(row)


def load_detections(path) -> DetectionSequence:
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        first = fh.readline()
        if not first.startswith("# camera_id:"):
            raise InputMismatchError(f"{path}: missing '# camera_id:' header line")
        camera_id = first.split(":", 1)[1].strip()
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "frame" or (len(header) - 1) % 3 != 0:
            raise InputMismatchError(f"{path}: malformed detections header")
        names = [col[:-2] for col in header[1::3]]
        rows = [row for row in reader if row]
    points = np.empty((len(rows), len(names), 3))
    for i, row in enumerate(rows):
        vals = np.array([float(x) for x in row[1:]])
        points[i] = vals.reshape(len(names), 3)
    return DetectionSequence(camera_id=camera_id, keypoint_names=names, points=points)


# ---------------------------------------------------------------------------
# 3D pose sequences
# ---------------------------------------------------------------------------

def save_pose3d(pose: Pose3DSequence, path) -> None:
    path = Path(path)
    with_views = pose.effective_views is not None
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        header = ["frame"]
        for name in pose.keypoint_names:
            header += [f"{name}_x", f"{name}_y", f"{name}_z", f"{name}_valid"]
            if with_views:
                header.append(f"{name}_views")
        writer.writerow(header)
        for f in range(pose.num_frames):
            row = [str(f)]
            for k in range(len(pose.keypoint_names)):
                x, y, z = pose.positions[f, k]
                row += [_fmt(x), _fmt(y), _fmt(z), str(int(pose.valid[f, k]))]
                if with_views:
                    row.append(str(int(pose.effective_views[f, k])))
            writer.writerow(row)


def load_pose3d(path) -> Pose3DSequence:
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "frame":
            raise InputMismatchError(f"{path}: malformed pose3d header")
        with_views = header[-1].endswith("_views")
        stride = 5 if with_views else 4
        if (len(header) - 1) % stride != 0:
            raise InputMismatchError(f"{path}: malformed pose3d header")
        names = [col[:-2] for col in header[1::stride]]
        rows = [row for row in reader if row]
    n_kp = len(names)
    positions = np.empty((len(rows), n_kp, 3))
    valid = np.empty((len(rows), n_kp), dtype=bool)
    views = np.zeros((len(rows), n_kp), dtype=np.int32) if with_views else None
    for i, row in enumerate(rows):
        vals = row[1:]
        for k in range(n_kp):
            base = k * stride
            positions[i, k] = [float(vals[base + j]) for j in range(3)]
            valid[i, k] = bool(int(vals[base + 3]))
            if with_views:
                views[i, k] = int(vals[base + 4])
    return Pose3DSequence(
        keypoint_names=names, positions=positions, valid=valid, effective_views=views
    )


# ---------------------------------------------------------------------------
# trial manifests
# ---------------------------------------------------------------------------

@dataclass
class TrialManifest:
    """Describes one trial's input files (paths resolved against its directory)."""

    session_id: str
    trial_id: str
    calibration: Path
    methods: dict[str, dict]  # name -> {"detections": {cam_id: path}, "monocular_pose3d": path?}
    front_camera: str | None = None
    keypoint_mask: str | None = None  # name of a mask in ``masks``
    masks: dict[str, list[str] | None] = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path)

    def mask_names(self) -> list[str] | None:
        """Resolved keypoint mask (None means all keypoints)."""
        if self.keypoint_mask is None:
            return None
        if self.keypoint_mask not in self.masks:
            raise InputMismatchError(
                f"trial {self.trial_id}: mask {self.keypoint_mask!r} is not defined"
            )
        return self.masks[self.keypoint_mask]


def load_manifest(path) -> TrialManifest:
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except (OSError, yaml.YAMLError) as exc:
        raise InputMismatchError(f"cannot read manifest {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise InputMismatchError(f"{path}: manifest must be a mapping")
    base = path.parent
    try:
        methods = {}
        for name, entry in doc["methods"].items():
            det = {cid: base / p for cid, p in entry["detections"].items()}
            methods[name] = {"detections": det}
            if entry.get("monocular_pose3d"):
                methods[name]["monocular_pose3d"] = base / entry["monocular_pose3d"]
        manifest = TrialManifest(
            session_id=str(doc.get("session_id", "session")),
            trial_id=str(doc.get("trial_id", path.stem)),
            calibration=base / doc["calibration"],
            methods=methods,
            front_camera=doc.get("front_camera"),
            keypoint_mask=doc.get("keypoint_mask"),
            masks=doc.get("masks", {}) or {},
            base_dir=base,
        )
    except (KeyError, TypeError) as exc:
        raise InputMismatchError(f"{path}: malformed manifest ({exc})") from exc
    return manifest


def save_manifest(manifest: TrialManifest, path) -> None:
    path = Path(path)
    base = path.parent

    def rel(p: Path) -> str:
        try:
            return str(Path(p).relative_to(base))
        except ValueError:
            return str(p)

    doc = {
        "session_id": manifest.session_id,
        "trial_id": manifest.trial_id,
        "calibration": rel(manifest.calibration),
        "methods": {
            name: {
                "detections": {cid: rel(p) for cid, p in entry["detections"].items()},
                **(
                    {"monocular_pose3d": rel(entry["monocular_pose3d"])}
                    if "monocular_pose3d" in entry
                    else {}
                ),
            }
            for name, entry in manifest.methods.items()
        },
    }
    if manifest.front_camera is not None:
        doc["front_camera"] = manifest.front_camera
    if manifest.keypoint_mask is not None:
        doc["keypoint_mask"] = manifest.keypoint_mask
    if manifest.masks:
        doc["masks"] = manifest.masks
    with path.open("w", encoding="utf-8") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def validate_manifest(manifest: TrialManifest, rig_ids: list[str] | None = None) -> None:
    """Check file existence and camera-id consistency before any processing."""
    if not Path(manifest.calibration).exists():
        raise InputMismatchError(
            f"trial {manifest.trial_id}: calibration file missing: {manifest.calibration}"
        )
    if not manifest.methods:
        raise InputMismatchError(f"trial {manifest.trial_id}: no methods defined")
    wants_position_error = False
    for name, entry in manifest.methods.items():
        for cid, p in entry["detections"].items():
            if not Path(p).exists():
                raise InputMismatchError(
                    f"trial {manifest.trial_id}, method {name}: detections file missing "
                    f"for camera {cid}: {p}"
                )
            if rig_ids is not None and cid not in rig_ids:
                raise InputMismatchError(
                    f"trial {manifest.trial_id}, method {name}: camera {cid} not in rig"
                )
        mono = entry.get("monocular_pose3d")
        if mono is not None:
            wants_position_error = True
            if not Path(mono).exists():
                raise InputMismatchError(
                    f"trial {manifest.trial_id}, method {name}: monocular file missing: {mono}"
                )
    if wants_position_error:
        if manifest.front_camera is None:
            raise InputMismatchError(
                f"trial {manifest.trial_id}: position error requested but no front camera set"
            )
        if rig_ids is not None and manifest.front_camera not in rig_ids:
            raise InputMismatchError(
                f"trial {manifest.trial_id}: front camera {manifest.front_camera} not in rig"
            )


# ---------------------------------------------------------------------------
# ground-truth sidecar (synthetic scenes)
# ---------------------------------------------------------------------------

def save_ground_truth(path, *, keypoint_names, markers, q=None, root=None,
                      scales=None, event_span=None, template=None) -> None:
    doc = {
        "keypoint_names": list(keypoint_names),
        "markers": np.asarray(markers).tolist(),
    }
    if q is not None:
        doc["q"] = np.asarray(q).tolist()
    if root is not None:
        doc["root"] = np.asarray(root).tolist()
    if scales is not None:
        doc["scales"] = {"overall": scales.overall, "groups": scales.groups}
    if event_span is not None:
        doc["event_span"] = [int(event_span[0]), int(event_span[1])]
    if template is not None:
        doc["template"] = template
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_ground_truth(path) -> dict:
    with Path(path).open("r", encoding="utf-8") as fh:
        doc = json.load(fh)
    doc["markers"] = np.asarray(doc["markers"], dtype=np.float64)
    for key in ("q", "root"):
        if key in doc:
            doc[key] = np.asarray(doc[key], dtype=np.float64)
    return doc
