"""3D lifting of the extracted trajectory and local surface-normal estimation."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import IllConditionedPatch, TooFewNeighbors, TooManyHoles
from .geom import FrameGraph, FrameId, image_to_base, pixel_to_camera
from .imgproc import ImageBundle, Trajectory2D

DEFAULT_RADIUS_MM = 10.0
_CONDITION_LIMIT = 1e6


@dataclass(frozen=True)
class SurfacePatch:
    center: np.ndarray
    neighbors: np.ndarray  # (N, 3) mm
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        object.__setattr__(self, "neighbors", np.asarray(self.neighbors, dtype=float).reshape(-1, 3))


@dataclass(frozen=True)
class SurfaceNormal:
    direction: np.ndarray  # unit vector
    fit_residual: float    # RMS, mm

    def __post_init__(self):
        object.__setattr__(self, "direction", np.asarray(self.direction, dtype=float).reshape(3))


def backproject_trajectory(traj: Trajectory2D | np.ndarray, bundle: ImageBundle,
                           graph: FrameGraph) -> np.ndarray:
    """Lift 2D trajectory pixels into the base frame through the depth map.

    Pixels over depth holes (0 or negative depth) are skipped, never
    interpolated; more than 50 % holes is an error. Accepts either a
    Trajectory2D (uses its per-column centerline) or an (N, 2) pixel array.
    """
    if isinstance(traj, Trajectory2D):
        pixels = traj.centerline()
    else:
        pixels = np.asarray(traj, dtype=float).reshape(-1, 2)
    h, w = bundle.shape
    out = []
    skipped = 0
    for u, v in pixels:
        ui = int(np.clip(round(u), 0, w - 1))
        vi = int(np.clip(round(v), 0, h - 1))
        d = bundle.depth[vi, ui]
        if not np.isfinite(d) or d <= 0:
            skipped += 1
            continue
        out.append(image_to_base((u, v), float(d), graph))
    if len(pixels) and skipped > 0.5 * len(pixels):
        raise TooManyHoles(f"{skipped}/{len(pixels)} trajectory pixels over depth holes")
    return np.array(out).reshape(-1, 3)


def depth_cloud(bundle: ImageBundle, graph: FrameGraph, stride: int = 1) -> np.ndarray:
    """Full depth-image point cloud in the base frame, holes dropped."""
    h, w = bundle.shape
    vs, us = np.mgrid[0:h:stride, 0:w:stride]
    d = bundle.depth[vs, us].ravel().astype(float)
    us = us.ravel().astype(float)
    vs = vs.ravel().astype(float)
    ok = np.isfinite(d) & (d > 0)
    k = bundle.intrinsics
    pc = np.stack([(us[ok] - k.cx) * d[ok] / k.fx,
                   (vs[ok] - k.cy) * d[ok] / k.fy,
                   d[ok]], axis=1)
    t = graph.query(FrameId.CAMERA, FrameId.BASE)
    return t.apply(pc)


def neighborhood(cloud: np.ndarray, center, radius: float = DEFAULT_RADIUS_MM) -> SurfacePatch:
    """All cloud points within `radius` mm of `center`."""
    cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
    center = np.asarray(center, dtype=float).reshape(3)
    d2 = np.sum((cloud - center) ** 2, axis=1)
    nb = cloud[d2 <= radius * radius]
    if len(nb) < 3:
        raise TooFewNeighbors(f"only {len(nb)} points within {radius} mm")
    return SurfacePatch(center, nb, radius)


def estimate_normal(patch: SurfacePatch, orient_toward=(0.0, 0.0, 1.0)) -> SurfaceNormal:
    """Least-squares plane fit z = a x + b y + c; normal is (-a, -b, 1) normalized.

    The normal is flipped, if needed, so it points into the hemisphere of
    `orient_toward` (by default +z of the cloud frame, i.e. toward an
    overhead camera). Near-vertical patches are rejected: the centered 2x2
    normal-equation matrix must have condition number < 1e6.
    """
    pts = patch.neighbors
    xy = pts[:, :2] - pts[:, :2].mean(axis=0)
    m = xy.T @ xy
    sv = np.linalg.svd(m, compute_uv=False)
    if sv[1] <= 0 or sv[0] / sv[1] >= _CONDITION_LIMIT:
        raise IllConditionedPatch("patch is near-vertical; explicit plane fit is unstable")
    a_mat = np.column_stack([pts[:, 0], pts[:, 1], np.ones(len(pts))])
    coef, *_ = np.linalg.lstsq(a_mat, pts[:, 2], rcond=None)
    a, b, _c = coef
    n = np.array([-a, -b, 1.0])
    n /= np.linalg.norm(n)
    if np.dot(n, np.asarray(orient_toward, dtype=float)) < 0:
        n = -n
    residual = float(np.sqrt(np.mean((a_mat @ coef - pts[:, 2]) ** 2)))
    return SurfaceNormal(n, residual)


def normals_along(cloud: np.ndarray, centers: np.ndarray,
                  radius: float = DEFAULT_RADIUS_MM,
                  orient_toward=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Per-point surface normals using a KD-tree for the radius queries."""
    cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
    centers = np.asarray(centers, dtype=float).reshape(-1, 3)
    tree = cKDTree(cloud)
    out = np.empty_like(centers)
    for i, c in enumerate(centers):
        idx = tree.query_ball_point(c, radius)
        if len(idx) < 3:
            raise TooFewNeighbors(f"only {len(idx)} points within {radius} mm of path point {i}")
        patch = SurfacePatch(c, cloud[idx], radius)
        out[i] = estimate_normal(patch, orient_toward).direction
    return out


def save_cloud(path, points: np.ndarray, normals: np.ndarray | None = None) -> None:
    """Write [x, y, z] (optionally with [nx, ny, nz] appended) rows as JSON."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if normals is None:
        rows = points.tolist()
    else:
        normals = np.asarray(normals, dtype=float).reshape(-1, 3)
        rows = np.hstack([points, normals]).tolist()
    with open(path, "w") as f:
        json.dump(rows, f)


def load_cloud(path) -> tuple[np.ndarray, np.ndarray | None]:
    with open(path) as f:
        rows = np.asarray(json.load(f), dtype=float)
    if rows.size == 0:
        return rows.reshape(0, 3), None
    if rows.shape[1] == 6:
        return rows[:, :3], rows[:, 3:]
    return rows[:, :3], None
