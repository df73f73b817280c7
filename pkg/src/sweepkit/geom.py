"""Rigid transforms, the calibration frame graph and pinhole backprojection.

All positions are millimeters. Rotations are stored as 3x3 orthonormal
matrices; angles at API boundaries are degrees, radians internally.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    CoplanarPoints,
    DegenerateConfiguration,
    InsufficientPoints,
    InvalidDepth,
    MissingEdge,
)

_ORTHO_TOL = 1e-9


def _orthonormalize(r: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense (polar decomposition)."""
    u, _, vt = np.linalg.svd(r)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) pose: p_out = rotation @ p_in + translation (mm)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        drift = np.linalg.norm(r.T @ r - np.eye(3))
        if drift > 1e-12:
            r = _orthonormalize(r)
        if np.linalg.norm(r.T @ r - np.eye(3)) > _ORTHO_TOL or abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise DegenerateConfiguration("rotation is not a proper rotation matrix")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    @staticmethod
    def from_matrix(m: np.ndarray) -> "RigidTransform":
        m = np.asarray(m, dtype=float).reshape(4, 4)
        return RigidTransform(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one point (3,) or many points (N, 3)."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def rotate(self, vectors: np.ndarray) -> np.ndarray:
        """Rotation only, for direction vectors."""
        return np.asarray(vectors, dtype=float) @ self.rotation.T

    def to_json(self) -> list:
        return self.as_matrix().reshape(-1).tolist()

    @staticmethod
    def from_json(data: Sequence[float]) -> "RigidTransform":
        return RigidTransform.from_matrix(np.asarray(data, dtype=float).reshape(4, 4))


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Composition a after b: (a o b)(p) = a(b(p))."""
    return RigidTransform(a.rotation @ b.rotation,
                          a.rotation @ b.translation + a.translation)


def rot_x(deg: float) -> RigidTransform:
    c, s = np.cos(np.radians(deg)), np.sin(np.radians(deg))
    return RigidTransform(np.array([[1, 0, 0], [0, c, -s], [0, s, c]]), np.zeros(3))


def rot_y(deg: float) -> RigidTransform:
    c, s = np.cos(np.radians(deg)), np.sin(np.radians(deg))
    return RigidTransform(np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]]), np.zeros(3))


def rot_z(deg: float) -> RigidTransform:
    c, s = np.cos(np.radians(deg)), np.sin(np.radians(deg))
    return RigidTransform(np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]]), np.zeros(3))


def translation(t) -> RigidTransform:
    return RigidTransform(np.eye(3), np.asarray(t, dtype=float))


class FrameId(Enum):
    """The six coordinate frames of the calibration chain."""

    IMAGE = "i"
    CAMERA = "c"
    BASE = "b"
    FLANGE = "f"
    TCP = "tcp"
    FIDUCIAL = "ar"


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise DegenerateConfiguration("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise DegenerateConfiguration("principal point outside image")

    def to_json(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @staticmethod
    def from_json(d: dict) -> "CameraIntrinsics":
        return CameraIntrinsics(d["fx"], d["fy"], d["cx"], d["cy"], d["width"], d["height"])


@dataclass(frozen=True)
class CalibrationPair:
    """Same physical point expressed in the camera and the base frame (mm)."""

    p_camera: np.ndarray
    p_base: np.ndarray

    def __post_init__(self):
        pc = np.asarray(self.p_camera, dtype=float).reshape(3)
        pb = np.asarray(self.p_base, dtype=float).reshape(3)
        if not (np.all(np.isfinite(pc)) and np.all(np.isfinite(pb))):
            raise DegenerateConfiguration("calibration pair contains non-finite values")
        object.__setattr__(self, "p_camera", pc)
        object.__setattr__(self, "p_base", pb)


@dataclass(frozen=True)
class FrameGraph:
    """Immutable set of directed frame-to-frame transforms.

    Queries compose along the shortest edge path; the reverse direction of
    any stored edge is available implicitly as its inverse.
    """

    edges: dict = field(default_factory=dict)
    intrinsics: CameraIntrinsics | None = None

    def with_edge(self, a: FrameId, b: FrameId, t: RigidTransform) -> "FrameGraph":
        """New graph with the a->b transform set (replacing any previous one)."""
        new = dict(self.edges)
        new.pop((b, a), None)
        new[(a, b)] = t
        return FrameGraph(new, self.intrinsics)

    def with_intrinsics(self, k: CameraIntrinsics) -> "FrameGraph":
        return FrameGraph(dict(self.edges), k)

    def has_edge(self, a: FrameId, b: FrameId) -> bool:
        return (a, b) in self.edges or (b, a) in self.edges

    def query(self, a: FrameId, b: FrameId) -> RigidTransform:
        """Transform taking coordinates in frame a to frame b."""
        if a == b:
            return RigidTransform.identity()
        # BFS over undirected adjacency
        adj: dict[FrameId, list[tuple[FrameId, RigidTransform]]] = {}
        for (u, v), t in self.edges.items():
            # edge (u, v) stores u->v coordinates mapping
            adj.setdefault(u, []).append((v, t))
            adj.setdefault(v, []).append((u, t.inverse()))
        frontier = [(a, RigidTransform.identity())]
        seen = {a}
        while frontier:
            node, acc = frontier.pop(0)
            for nxt, t in adj.get(node, []):
                if nxt in seen:
                    continue
                nxt_acc = compose(t, acc)
                if nxt == b:
                    return nxt_acc
                seen.add(nxt)
                frontier.append((nxt, nxt_acc))
        raise MissingEdge(f"no path from frame {a.value!r} to {b.value!r}")

    def to_json(self) -> dict:
        out = {"edges": [{"from": a.value, "to": b.value, "matrix": t.to_json()}
                         for (a, b), t in sorted(self.edges.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value))]}
        if self.intrinsics is not None:
            out["intrinsics"] = self.intrinsics.to_json()
        return out

    @staticmethod
    def from_json(d: dict) -> "FrameGraph":
        edges = {}
        for e in d.get("edges", []):
            edges[(FrameId(e["from"]), FrameId(e["to"]))] = RigidTransform.from_json(e["matrix"])
        k = CameraIntrinsics.from_json(d["intrinsics"]) if "intrinsics" in d else None
        return FrameGraph(edges, k)


def _as_point_arrays(pairs: Iterable[CalibrationPair]) -> tuple[np.ndarray, np.ndarray]:
    src = np.array([p.p_camera for p in pairs], dtype=float)
    dst = np.array([p.p_base for p in pairs], dtype=float)
    return src, dst


def solve_rigid_alignment(pairs: Sequence[CalibrationPair]) -> tuple[RigidTransform, float]:
    """Closed-form least-squares rigid fit mapping camera points onto base points.

    Minimizes mean ||T p_camera - p_base||^2 over SE(3) via SVD of the
    cross-covariance (Kabsch), with the reflection case corrected by
    flipping the last singular direction. Returns (transform, rmse in mm).
    """
    if len(pairs) < 3:
        raise InsufficientPoints(f"need at least 3 pairs, got {len(pairs)}")
    src, dst = _as_point_arrays(pairs)
    src_mean = src.mean(axis=0)
    dst_mean = dst.mean(axis=0)
    src_c = src - src_mean
    dst_c = dst - dst_mean
    sv = np.linalg.svd(src_c, compute_uv=False)
    if sv[1] <= 1e-6 * sv[0]:
        raise DegenerateConfiguration("source points are collinear or coincident")
    h = src_c.T @ dst_c
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    t = dst_mean - r @ src_mean
    transform = RigidTransform(r, t)
    residual = transform.apply(src) - dst
    rmse = float(np.sqrt(np.mean(np.sum(residual ** 2, axis=1))))
    return transform, rmse


def hand_eye_calibrate(pairs: Sequence[CalibrationPair],
                       graph: FrameGraph | None = None) -> tuple[RigidTransform, FrameGraph]:
    """Estimate the camera-to-base transform from >= 4 non-coplanar pairs.

    Returns the transform and a graph with the camera->base edge installed.
    """
    if len(pairs) < 4:
        raise InsufficientPoints(f"need at least 4 pairs, got {len(pairs)}")
    src, _ = _as_point_arrays(pairs)
    sv = np.linalg.svd(src - src.mean(axis=0), compute_uv=False)
    if sv[2] <= 1e-6 * sv[0]:
        raise CoplanarPoints("calibration points are coplanar")
    t_b_c, _ = solve_rigid_alignment(pairs)
    graph = graph if graph is not None else FrameGraph()
    return t_b_c, graph.with_edge(FrameId.CAMERA, FrameId.BASE, t_b_c)


def anchor_fiducial(t_c_ar: RigidTransform, graph: FrameGraph) -> FrameGraph:
    """Fix the fiducial pose in the base frame from a camera observation."""
    t_b_c = graph.query(FrameId.CAMERA, FrameId.BASE)
    t_b_ar = compose(t_b_c, t_c_ar)
    return graph.with_edge(FrameId.FIDUCIAL, FrameId.BASE, t_b_ar)


def refresh_extrinsics(t_c_ar: RigidTransform,
                       graph: FrameGraph) -> tuple[RigidTransform, FrameGraph]:
    """Re-derive camera-to-base from a fresh fiducial observation.

    The fiducial is rigid w.r.t. the base, so a new camera pose follows from
    the fixed base<-fiducial edge and the observed camera<-fiducial pose.
    """
    if not graph.has_edge(FrameId.FIDUCIAL, FrameId.BASE):
        raise MissingEdge("fiducial was never anchored to the base frame")
    t_b_ar = graph.query(FrameId.FIDUCIAL, FrameId.BASE)
    t_b_c = compose(t_b_ar, t_c_ar.inverse())
    return t_b_c, graph.with_edge(FrameId.CAMERA, FrameId.BASE, t_b_c)


def pixel_to_camera(px, depth: float, k: CameraIntrinsics) -> np.ndarray:
    """Pinhole backprojection of one pixel at the given depth (mm)."""
    if not np.isfinite(depth) or depth <= 0:
        raise InvalidDepth(f"depth must be positive and finite, got {depth}")
    u, v = float(px[0]), float(px[1])
    return np.array([(u - k.cx) * depth / k.fx,
                     (v - k.cy) * depth / k.fy,
                     depth])


def camera_to_pixel(p, k: CameraIntrinsics) -> tuple[np.ndarray, float]:
    """Forward projection: camera-frame point -> (pixel, depth)."""
    p = np.asarray(p, dtype=float)
    if p[2] <= 0:
        raise InvalidDepth("point behind the camera")
    return np.array([k.fx * p[0] / p[2] + k.cx, k.fy * p[1] / p[2] + k.cy]), float(p[2])


def image_to_base(px, depth: float, graph: FrameGraph) -> np.ndarray:
    """Backproject a pixel and move it into the robot base frame."""
    if graph.intrinsics is None:
        raise MissingEdge("frame graph carries no camera intrinsics")
    p_cam = pixel_to_camera(px, depth, graph.intrinsics)
    return graph.query(FrameId.CAMERA, FrameId.BASE).apply(p_cam)


def load_calibration_pairs(path) -> list[CalibrationPair]:
    """Read pairs from a JSON array of {camera: [x,y,z], base: [x,y,z]} in mm."""
    with open(path) as f:
        data = json.load(f)
    return [CalibrationPair(d["camera"], d["base"]) for d in data]


def save_calibration_pairs(path, pairs: Sequence[CalibrationPair]) -> None:
    data = [{"camera": p.p_camera.tolist(), "base": p.p_base.tolist()} for p in pairs]
    with open(path, "w") as f:
        json.dump(data, f, indent=2)
