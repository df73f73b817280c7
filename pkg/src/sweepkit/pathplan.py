"""Path-aligned 2D projection, key-point detection and probe-pose planning."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DegeneratePath, EmptyPath, NoNormals

DEFAULT_KEYPOINT_THRESHOLD_MM = 5.0
DEFAULT_MERGE_THRESHOLD = 50.0  # index * mm


@dataclass(frozen=True)
class PathFrame2D:
    """Path points expressed along/across the start-to-end chord."""

    xp: np.ndarray   # along-chord coordinate per point, mm
    yp: np.ndarray   # lateral magnitude per point, mm
    origin: np.ndarray
    axis: np.ndarray  # unit start->end direction


@dataclass(frozen=True)
class KeyPointSet:
    indices: np.ndarray  # strictly increasing indices into the 3D path
    threshold: float


@dataclass(frozen=True)
class ProbePose:
    """Position plus right-handed orthonormal probe axes (tcp_x = tcp_y x tcp_z)."""

    position: np.ndarray
    tcp_x: np.ndarray
    tcp_y: np.ndarray
    tcp_z: np.ndarray

    def __post_init__(self):
        for name in ("position", "tcp_x", "tcp_y", "tcp_z"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3))

    def axes_matrix(self) -> np.ndarray:
        """Columns are tcp_x, tcp_y, tcp_z."""
        return np.column_stack([self.tcp_x, self.tcp_y, self.tcp_z])

    def to_json(self) -> dict:
        return {"position": self.position.tolist(), "tcpX": self.tcp_x.tolist(),
                "tcpY": self.tcp_y.tolist(), "tcpZ": self.tcp_z.tolist()}

    @staticmethod
    def from_json(d: dict) -> "ProbePose":
        return ProbePose(d["position"], d["tcpX"], d["tcpY"], d["tcpZ"])


@dataclass(frozen=True)
class SweepPlan:
    """Contiguous index segments over the path, one pose orientation each."""

    segments: list  # [(start_idx, end_idx)], end inclusive, shared boundaries
    poses: list     # one ProbePose per path point
    merge_threshold: float

    def __len__(self) -> int:
        return len(self.poses)

    def to_json(self) -> dict:
        return {"mergeThreshold": self.merge_threshold,
                "segments": [[int(a), int(b)] for a, b in self.segments],
                "poses": [p.to_json() for p in self.poses]}

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2)

    @staticmethod
    def from_json(d: dict) -> "SweepPlan":
        return SweepPlan([(int(a), int(b)) for a, b in d["segments"]],
                         [ProbePose.from_json(p) for p in d["poses"]],
                         d["mergeThreshold"])


def project_path(p3d: np.ndarray) -> PathFrame2D:
    """Project 3D path points onto (along, across) chord coordinates.

    xp(i) = (P_i - P_s) . X_p, yp(i) = ||(P_i - P_s) x X_p|| with
    X_p the unit start-to-end direction, so xp increases along the path.
    """
    p3d = np.asarray(p3d, dtype=float).reshape(-1, 3)
    if len(p3d) < 2:
        raise DegeneratePath("path needs at least 2 points")
    ps, pe = p3d[0], p3d[-1]
    chord = pe - ps
    norm = np.linalg.norm(chord)
    if norm <= 1.0:
        raise DegeneratePath(f"start and end are {norm:.3f} mm apart")
    axis = chord / norm
    rel = p3d - ps
    xp = rel @ axis
    yp = np.linalg.norm(np.cross(rel, axis), axis=1)
    return PathFrame2D(xp, yp, ps, axis)


def detect_key_points(frame: PathFrame2D,
                      threshold: float = DEFAULT_KEYPOINT_THRESHOLD_MM) -> KeyPointSet:
    """Thresholded sign changes of the first-order lateral difference.

    Index k is a key point iff D(k-1) * D(k) <= 0 and |D(k-1)| + |D(k)| > T
    where D(i) = yp(i+1) - yp(i).
    """
    yp = np.asarray(frame.yp, dtype=float)
    if len(yp) < 3:
        raise DegeneratePath("need at least 3 points to difference")
    d = np.diff(yp)
    prev, nxt = d[:-1], d[1:]
    hit = (prev * nxt <= 0) & (np.abs(prev) + np.abs(nxt) > threshold)
    indices = np.nonzero(hit)[0] + 1
    return KeyPointSet(indices, threshold)


def _normalize(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0:
        raise DegeneratePath("zero-length vector while building probe axes")
    return v / n


def _segment_pose_axes(p3d: np.ndarray, normals: np.ndarray,
                       a: int, b: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Orientation for the interval [a, b]: mean normal, chord, cross products."""
    mean_n = normals[a:b].mean(axis=0)
    tcp_z = _normalize(mean_n)
    chord = p3d[b] - p3d[a]
    tcp_y = _normalize(np.cross(mean_n, chord))
    # mean normal and chord are not exactly perpendicular; re-orthonormalize
    tcp_y = _normalize(tcp_y - np.dot(tcp_y, tcp_z) * tcp_z)
    tcp_x = np.cross(tcp_y, tcp_z)
    return tcp_x, tcp_y, tcp_z


def optimize_orientations(p3d: np.ndarray, keypoints: KeyPointSet,
                          normals: np.ndarray,
                          merge_threshold: float = DEFAULT_MERGE_THRESHOLD) -> SweepPlan:
    """Interval-wise probe orientations between merged key points.

    Start and end indices are always interval boundaries. Adjacent key
    points j and j+m merge while |I(j+m) - I(j)| * ||P(I(j+m)) - P(I(j))||
    stays below the threshold (index-gap times chord-length product, taken
    literally). Per interval the probe centerline is the normalized mean
    normal, the long axis the normal-chord cross product, and the moving
    direction completes the right-handed triad.
    """
    p3d = np.asarray(p3d, dtype=float).reshape(-1, 3)
    if len(p3d) == 0:
        raise EmptyPath("empty path")
    normals = np.asarray(normals, dtype=float).reshape(-1, 3)
    if len(normals) != len(p3d):
        raise NoNormals(f"{len(normals)} normals for {len(p3d)} path points")
    n = len(p3d)
    idx = sorted({0, n - 1, *(int(i) for i in keypoints.indices if 0 < i < n - 1)})
    if len(idx) == 1:  # single-point path
        idx = [0, 0]

    segments: list[tuple[int, int]] = []
    j, m = 0, 1
    while j + m < len(idx):
        at_end = j + m == len(idx) - 1
        gap = abs(idx[j + m] - idx[j])
        dist = float(np.linalg.norm(p3d[idx[j + m]] - p3d[idx[j]]))
        if not at_end and gap * dist <= merge_threshold:
            m += 1
        else:
            segments.append((idx[j], idx[j + m]))
            j += m
            m = 1

    poses: list[ProbePose] = []
    axes_per_segment = []
    for a, b in segments:
        upper = max(b, a + 1)  # degenerate single-point interval
        axes_per_segment.append(_segment_pose_axes(p3d, normals, a, upper))
    for i in range(n):
        seg_i = 0
        for k, (a, b) in enumerate(segments):
            if a <= i <= b:
                seg_i = k
                break
        tx, ty, tz = axes_per_segment[seg_i]
        poses.append(ProbePose(p3d[i], tx, ty, tz))
    return SweepPlan(segments, poses, merge_threshold)
