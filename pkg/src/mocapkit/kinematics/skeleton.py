"""Scalable articulated skeleton: segment tree, DOF spec, markers, scale groups.

Segments form a tree rooted at the pelvis. A segment's ``offset`` is the
position of its joint in the parent frame at unit scale and is scaled by the
parent segment's effective scale (the parent owns that bone). Marker offsets
are expressed in their segment's frame and scaled by that segment's
effective scale. Effective scale is ``overall * group_scale``, where
segments without a named scale group (the pelvis) use ``overall`` alone.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field

import numpy as np
import yaml

from ..errors import SkeletonError

SCALE_GROUP_NAMES = (
    "head",
    "torso",
    "upper_leg",
    "lower_leg",
    "foot",
    "upper_arm",
    "forearm",
    "hand",
)

SCALE_BOUNDS = (0.3, 3.0)


@dataclass(frozen=True)
class Dof:
    """One rotational degree of freedom: unit axis in the segment-local frame."""

    name: str
    axis: np.ndarray
    lower: float  # radians
    upper: float

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=np.float64).reshape(3)
        norm = np.linalg.norm(axis)
        if norm < 1e-12:
            raise SkeletonError(f"dof {self.name}: zero axis")
        axis = axis / norm
        axis.setflags(write=False)
        object.__setattr__(self, "axis", axis)
        if not self.lower < self.upper:
            raise SkeletonError(f"dof {self.name}: lower limit must be below upper")


@dataclass(frozen=True)
class Segment:
    name: str
    parent: str | None
    offset: np.ndarray  # joint position in parent frame at unit scale, meters
    scale_group: str | None
    dofs: tuple[Dof, ...]

    def __post_init__(self):
        offset = np.asarray(self.offset, dtype=np.float64).reshape(3)
        offset.setflags(write=False)
        object.__setattr__(self, "offset", offset)
        object.__setattr__(self, "dofs", tuple(self.dofs))
        if self.scale_group is not None and self.scale_group not in SCALE_GROUP_NAMES:
            raise SkeletonError(f"segment {self.name}: unknown scale group {self.scale_group!r}")


@dataclass(frozen=True)
class Marker:
    name: str
    segment: str
    offset: np.ndarray  # segment-local, unit scale

    def __post_init__(self):
        offset = np.asarray(self.offset, dtype=np.float64).reshape(3)
        offset.setflags(write=False)
        object.__setattr__(self, "offset", offset)


@dataclass(frozen=True)
class ScaleSet:
    """Per-group scales plus an overall multiplier applied to every segment."""

    groups: dict[str, float] = field(default_factory=lambda: {g: 1.0 for g in SCALE_GROUP_NAMES})
    overall: float = 1.0

    def __post_init__(self):
        groups = {g: float(self.groups.get(g, 1.0)) for g in SCALE_GROUP_NAMES}
        lo, hi = SCALE_BOUNDS
        for g, v in groups.items():
            if not (lo <= v <= hi):
                raise SkeletonError(f"scale {g}={v} outside bounds [{lo}, {hi}]")
        if not (lo <= self.overall <= hi):
            raise SkeletonError(f"overall scale {self.overall} outside bounds [{lo}, {hi}]")
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "overall", float(self.overall))

    def effective(self, group: str | None) -> float:
        if group is None:
            return self.overall
        return self.overall * self.groups[group]

    def as_vector(self) -> np.ndarray:
        """[overall, groups in SCALE_GROUP_NAMES order]."""
        return np.array([self.overall] + [self.groups[g] for g in SCALE_GROUP_NAMES])

    @classmethod
    def from_vector(cls, vec) -> "ScaleSet":
        vec = np.asarray(vec, dtype=np.float64).reshape(len(SCALE_GROUP_NAMES) + 1)
        return cls(
            groups={g: float(v) for g, v in zip(SCALE_GROUP_NAMES, vec[1:])},
            overall=float(vec[0]),
        )


class SkeletonModel:
    """Validated kinematic tree with marker map and derived index tables."""

    def __init__(self, name: str, segments: list[Segment], markers: list[Marker]):
        self.name = name
        self.segments = tuple(segments)
        self.markers = tuple(markers)
        self._validate()
        self._build_tables()

    def _validate(self) -> None:
        names = [s.name for s in self.segments]
        if len(set(names)) != len(names):
            raise SkeletonError("duplicate segment names")
        roots = [s for s in self.segments if s.parent is None]
        if len(roots) != 1:
            raise SkeletonError(f"expected exactly one root segment, found {len(roots)}")
        index = {s.name: i for i, s in enumerate(self.segments)}
        for s in self.segments:
            if s.parent is not None:
                if s.parent not in index:
                    raise SkeletonError(f"segment {s.name}: unknown parent {s.parent}")
                if index[s.parent] >= index[s.name]:
                    raise SkeletonError(
                        f"segment {s.name}: parents must precede children in the segment list"
                    )
        seg_names = set(names)
        marker_names = [m.name for m in self.markers]
        if len(set(marker_names)) != len(marker_names):
            raise SkeletonError("duplicate marker names")
        for m in self.markers:
            if m.segment not in seg_names:
                raise SkeletonError(f"marker {m.name}: unknown segment {m.segment}")
        dof_names = [d.name for s in self.segments for d in s.dofs]
        if len(set(dof_names)) != len(dof_names):
            raise SkeletonError("duplicate dof names")
        # left/right symmetric segments must share a scale group
        group_of = {s.name: s.scale_group for s in self.segments}
        for s in self.segments:
            if s.name.startswith("l_"):
                twin = "r_" + s.name[2:]
                if twin in group_of and group_of[twin] != s.scale_group:
                    raise SkeletonError(
                        f"segments {s.name}/{twin} must share a scale group"
                    )

    def _build_tables(self) -> None:
        self.segment_index = {s.name: i for i, s in enumerate(self.segments)}
        self.root = next(s for s in self.segments if s.parent is None)
        self.dof_names: list[str] = []
        self.dof_segment: list[int] = []  # segment index owning each dof
        self._dof_slices: dict[str, slice] = {}
        for s in self.segments:
            start = len(self.dof_names)
            for d in s.dofs:
                self.dof_names.append(d.name)
                self.dof_segment.append(self.segment_index[s.name])
            self._dof_slices[s.name] = slice(start, len(self.dof_names))
        self.n_dofs = len(self.dof_names)
        self.dof_lower = np.array(
            [d.lower for s in self.segments for d in s.dofs], dtype=np.float64
        )
        self.dof_upper = np.array(
            [d.upper for s in self.segments for d in s.dofs], dtype=np.float64
        )
        self.marker_names = [m.name for m in self.markers]
        self.marker_segment = np.array(
            [self.segment_index[m.segment] for m in self.markers], dtype=int
        )
        # ancestry[i, j] True when segment j is segment i or one of its ancestors
        n = len(self.segments)
        anc = np.zeros((n, n), dtype=bool)
        for i, s in enumerate(self.segments):
            anc[i, i] = True
            p = s.parent
            while p is not None:
                j = self.segment_index[p]
                anc[i, j] = True
                p = self.segments[j].parent
        self.ancestry = anc

        # flat arrays consumed by the FK hot path
        def group_col(group: str | None) -> int:
            return 0 if group is None else SCALE_GROUP_NAMES.index(group) + 1

        self.seg_parent = np.array(
            [-1 if s.parent is None else self.segment_index[s.parent] for s in self.segments],
            dtype=int,
        )
        self.seg_offset = np.stack([s.offset for s in self.segments])
        self.seg_group_col = np.array([group_col(s.scale_group) for s in self.segments])
        self.seg_dof_start = np.array(
            [self._dof_slices[s.name].start for s in self.segments], dtype=int
        )
        self.seg_dof_count = np.array([len(s.dofs) for s in self.segments], dtype=int)
        self.marker_offset = np.stack([m.offset for m in self.markers])
        self.marker_group_col = self.seg_group_col[self.marker_segment]
        axes = [d.axis for s in self.segments for d in s.dofs]
        self.dof_axes = np.stack(axes) if axes else np.zeros((0, 3))
        # cached skew and outer-product matrices for Rodrigues evaluation
        def skew(a):
            return np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])

        self.dof_skew = np.stack([skew(a) for a in axes]) if axes else np.zeros((0, 3, 3))
        self.dof_outer = (
            np.stack([np.outer(a, a) for a in axes]) if axes else np.zeros((0, 3, 3))
        )

    def dof_slice(self, segment_name: str) -> slice:
        return self._dof_slices[segment_name]

    def dof_index(self, dof_name: str) -> int:
        try:
            return self.dof_names.index(dof_name)
        except ValueError as exc:
            raise SkeletonError(f"unknown dof {dof_name!r}") from exc

    @property
    def n_markers(self) -> int:
        return len(self.markers)


def _segment_from_mapping(entry: dict) -> Segment:
    dofs = []
    for d in entry.get("dof", []) or []:
        lo, hi = d.get("limits_deg", [-180.0, 180.0])
        dofs.append(
            Dof(
                name=str(d["name"]),
                axis=np.asarray(d["axis"], dtype=np.float64),
                lower=float(np.deg2rad(lo)),
                upper=float(np.deg2rad(hi)),
            )
        )
    return Segment(
        name=str(entry["name"]),
        parent=entry.get("parent"),
        offset=np.asarray(entry.get("offset", [0.0, 0.0, 0.0]), dtype=np.float64),
        scale_group=entry.get("scale_group"),
        dofs=tuple(dofs),
    )


def load_skeleton(path=None) -> SkeletonModel:
    """Load a skeleton YAML; defaults to the bundled infant model."""
    if path is None:
        source = importlib.resources.files("mocapkit.data").joinpath("infant_skeleton.yaml")
        text = source.read_text(encoding="utf-8")
    else:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise SkeletonError(f"cannot parse skeleton file: {exc}") from exc
    if not isinstance(doc, dict) or "segments" not in doc or "markers" not in doc:
        raise SkeletonError("skeleton file must define 'segments' and 'markers'")
    try:
        segments = [_segment_from_mapping(e) for e in doc["segments"]]
        markers = [
            Marker(
                name=str(m["name"]),
                segment=str(m["segment"]),
                offset=np.asarray(m["offset"], dtype=np.float64),
            )
            for m in doc["markers"]
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise SkeletonError(f"malformed skeleton file: {exc}") from exc
    return SkeletonModel(name=str(doc.get("name", "skeleton")), segments=segments, markers=markers)
