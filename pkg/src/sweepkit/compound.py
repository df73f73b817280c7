"""Step-wise 3D volume compounding of posed 2D frames and a vessel metric.

Frame-plane convention: image columns run along tcp_x (lateral, centered on
the probe tip), image rows along tcp_z (depth). Frames are forward-splatted
to the nearest voxel with hit-count averaging, which is order-free.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import EmptyInput, NoVesselFound
from .motion import ObjectFrameLedger
from .pathplan import ProbePose


@dataclass(frozen=True)
class USFrame:
    pixels: np.ndarray         # H x W uint8 intensity
    spacing: tuple             # (mm/px along rows, mm/px along columns)
    pose: ProbePose            # probe tip in the base frame
    stage: int = 0

    def __post_init__(self):
        if self.spacing[0] <= 0 or self.spacing[1] <= 0:
            raise ValueError("pixel spacing must be positive")

    def pixel_positions(self) -> np.ndarray:
        """Base-frame 3D position of every pixel, shape (H*W, 3)."""
        h, w = self.pixels.shape
        rows, cols = np.mgrid[0:h, 0:w]
        lateral = (cols.ravel() - (w - 1) / 2.0) * self.spacing[1]
        depth = rows.ravel() * self.spacing[0]
        return (self.pose.position
                + lateral[:, None] * self.pose.tcp_x
                + depth[:, None] * self.pose.tcp_z)


@dataclass
class Volume:
    """Voxel grid indexed [z, y, x]; written to disk x-fastest."""

    sums: np.ndarray
    counts: np.ndarray
    voxel_size: float
    origin: np.ndarray  # object-frame position of voxel (0, 0, 0) corner

    @property
    def shape(self) -> tuple:
        return self.sums.shape

    def intensity(self) -> np.ndarray:
        out = np.zeros_like(self.sums, dtype=np.float32)
        hit = self.counts > 0
        out[hit] = self.sums[hit] / self.counts[hit]
        return out

    def save(self, raw_path, sidecar_path) -> None:
        data = self.intensity().astype("<f4")
        data.tofile(raw_path)
        nz, ny, nx = self.shape
        sidecar = {"dims": [nx, ny, nz], "voxelSizeMm": self.voxel_size,
                   "origin": self.origin.tolist()}
        with open(sidecar_path, "w") as f:
            json.dump(sidecar, f, indent=2)

    @staticmethod
    def load(raw_path, sidecar_path) -> "Volume":
        with open(sidecar_path) as f:
            sc = json.load(f)
        nx, ny, nz = sc["dims"]
        data = np.fromfile(raw_path, dtype="<f4").reshape(nz, ny, nx)
        counts = (data > 0).astype(np.int32)
        return Volume(data.astype(np.float64), counts, sc["voxelSizeMm"],
                      np.asarray(sc["origin"], dtype=float))


@dataclass(frozen=True)
class CenterlineMetric:
    """Per-slice vessel centroids along the volume x axis, in object-frame mm."""

    slice_indices: np.ndarray   # slices where a cross-section was detected
    centroids: np.ndarray       # (N, 2) mm, (y, z) per detected slice
    max_jump: float             # largest distance between successive centroids

    def to_json(self) -> dict:
        return {"sliceIndices": self.slice_indices.tolist(),
                "centroids": self.centroids.tolist(),
                "maxJumpMm": self.max_jump}


def compound(frames, ledger: ObjectFrameLedger, voxel_size: float) -> Volume:
    """Average all frame pixels into an object-frame voxel grid.

    Each pixel goes through its frame's pose to the base frame, then through
    the ledger's stage transform into the object frame, then to the nearest
    voxel. Shuffling the frame order cannot change the result.
    """
    frames = list(frames)
    if not frames:
        raise EmptyInput("no frames to compound")
    pts = []
    vals = []
    for fr in frames:
        p = ledger.to_object_frame(fr.stage, fr.pixel_positions())
        pts.append(p)
        vals.append(fr.pixels.ravel().astype(np.float64))
    pts = np.vstack(pts)
    vals = np.concatenate(vals)
    lo = np.floor(pts.min(axis=0) / voxel_size) * voxel_size
    idx = np.round((pts - lo) / voxel_size).astype(int)
    dims = idx.max(axis=0) + 1  # (x, y, z) extents
    nz, ny, nx = int(dims[2]), int(dims[1]), int(dims[0])
    sums = np.zeros((nz, ny, nx))
    counts = np.zeros((nz, ny, nx), dtype=np.int64)
    flat = (idx[:, 2] * ny + idx[:, 1]) * nx + idx[:, 0]
    np.add.at(sums.ravel(), flat, vals)
    np.add.at(counts.ravel(), flat, 1)
    return Volume(sums, counts, voxel_size, lo)


def vessel_centerline(volume: Volume, threshold: float) -> CenterlineMetric:
    """Track the dark vessel lumen slice by slice along the volume x axis.

    Per slice, observed voxels with intensity <= threshold are labeled and
    the centroid of the largest connected component is taken; the metric
    reports the maximum jump between successive detected centroids.
    """
    intensity = volume.intensity()
    observed = volume.counts > 0
    if not observed.any():
        raise NoVesselFound("volume is empty")
    nz, ny, nx = volume.shape
    indices = []
    cents = []
    structure = np.ones((3, 3), dtype=int)
    for i in range(nx):
        mask = observed[:, :, i] & (intensity[:, :, i] <= threshold)
        if not mask.any():
            continue
        labels, n = ndimage.label(mask, structure=structure)
        sizes = ndimage.sum_labels(np.ones_like(labels), labels, index=range(1, n + 1))
        best = int(np.argmax(sizes)) + 1
        zc, yc = ndimage.center_of_mass(mask, labels, best)
        indices.append(i)
        # centroid in object-frame mm: (y, z)
        cents.append([(yc + 0.5) * volume.voxel_size + volume.origin[1],
                      (zc + 0.5) * volume.voxel_size + volume.origin[2]])
    if not cents:
        raise NoVesselFound(f"no voxels at or below intensity {threshold}")
    cents = np.asarray(cents)
    if len(cents) > 1:
        max_jump = float(np.max(np.linalg.norm(np.diff(cents, axis=0), axis=1)))
    else:
        max_jump = 0.0
    return CenterlineMetric(np.asarray(indices), cents, max_jump)
