"""Hand-drawn trajectory extraction from RGB images.

The drawn line is found in the Cr chroma plane (red ink stands out there)
inside a marker-anchored region of interest. A seed line per column slice
gives starting points, and a bidirectional moving-box search with an
adaptive intensity band grows the trajectory from each seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import MarkersMissing, NoSeeds, OutOfBounds
from .geom import CameraIntrinsics


def to_ycrcb(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """BT.601 full-range RGB -> (Y, Cr, Cb), 8-bit planes.

    Fixed-coefficient conversion so golden tests are bit-exact:
      Y  = 0.299 R + 0.587 G + 0.114 B
      Cr = 128 + 0.5 R - 0.419 G - 0.081 B
      Cb = 128 - 0.169 R - 0.331 G + 0.5 B
    rounded to nearest and clamped to [0, 255].
    """
    r = rgb[..., 0].astype(np.float64)
    g = rgb[..., 1].astype(np.float64)
    b = rgb[..., 2].astype(np.float64)
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cr = 128.0 + 0.5 * r - 0.419 * g - 0.081 * b
    cb = 128.0 - 0.169 * r - 0.331 * g + 0.5 * b

    def q(plane):
        return np.clip(np.round(plane), 0, 255).astype(np.uint8)

    return q(y), q(cr), q(cb)


@dataclass(frozen=True)
class ImageBundle:
    """One RGB-D capture plus its derived color planes. depth in mm, 0 = hole."""

    rgb: np.ndarray
    gray: np.ndarray
    cr: np.ndarray
    cb: np.ndarray
    depth: np.ndarray
    intrinsics: CameraIntrinsics

    @staticmethod
    def from_rgb_depth(rgb: np.ndarray, depth: np.ndarray,
                       intrinsics: CameraIntrinsics) -> "ImageBundle":
        rgb = np.asarray(rgb, dtype=np.uint8)
        depth = np.asarray(depth, dtype=np.float64)
        if rgb.shape[:2] != depth.shape:
            raise ValueError("rgb and depth shapes differ")
        y, cr, cb = to_ycrcb(rgb)
        return ImageBundle(rgb, y, cr, cb, depth, intrinsics)

    @property
    def shape(self) -> tuple[int, int]:
        return self.rgb.shape[:2]


@dataclass(frozen=True)
class MarkerObservation:
    id: int
    pixel: np.ndarray  # (u, v)
    position: np.ndarray  # mm, camera frame

    def __post_init__(self):
        object.__setattr__(self, "pixel", np.asarray(self.pixel, dtype=float).reshape(2))
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))


@dataclass(frozen=True)
class ExtractionParams:
    box_width: int = 20        # B_w, pixels
    box_height: int = 100      # B_h, pixels
    cr_tolerance: int = 25     # I_rt, intensity band half-width
    min_pixels: int = 10       # N_ep, pixels per box to keep searching
    seed_count: int = 9        # N_s, number of seed lines
    boundary_feature_floor: int = 10  # reject seeds whose edges are flatter

    def __post_init__(self):
        if self.box_width < 1 or self.box_height < 1 or self.seed_count < 1:
            raise ValueError("box size and seed count must be >= 1")
        if self.cr_tolerance < 0:
            raise ValueError("cr_tolerance must be >= 0")


@dataclass(frozen=True)
class SeedPoint:
    pixel: tuple[int, int]   # (x, y) in rectified ROI coordinates
    cr_value: int
    accepted: bool = False
    channel: str | None = None  # 'cr' or 'gray' once accepted


@dataclass(frozen=True)
class RectifiedROI:
    """Marker-chord-aligned crop in which the chord is horizontal.

    `cr`/`cb`/`gray` are nearest-neighbor resampled planes of shape
    (height, width); (x, y) ROI coordinates map back to the original image
    through the inverse of the rectifying rotation.
    """

    cr: np.ndarray
    cb: np.ndarray
    gray: np.ndarray
    valid: np.ndarray           # which ROI pixels fall inside the source image
    center: np.ndarray          # chord midpoint, original image coords
    angle_rad: float            # rotation applied to rectify (about center)
    origin: np.ndarray          # ROI (0,0) in rectified full-image coords
    chord_x: tuple[float, float]  # chord endpoints' x in ROI coords
    chord_y: float              # chord row in ROI coords
    cr_band: tuple[int, int]    # acceptance band sampled along the chord
    cb_band: tuple[int, int]

    @property
    def shape(self) -> tuple[int, int]:
        return self.cr.shape

    def to_image(self, pts: np.ndarray) -> np.ndarray:
        """Map ROI (x, y) points back to original image pixel coordinates."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        p = pts + self.origin - self.center
        c, s = np.cos(-self.angle_rad), np.sin(-self.angle_rad)
        rot = np.array([[c, -s], [s, c]])
        return p @ rot.T + self.center

    def from_image(self, pts: np.ndarray) -> np.ndarray:
        """Map original image pixel coordinates into ROI (x, y)."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        c, s = np.cos(self.angle_rad), np.sin(self.angle_rad)
        rot = np.array([[c, -s], [s, c]])
        return (pts - self.center) @ rot.T + self.center - self.origin


@dataclass(frozen=True)
class Trajectory2D:
    """Extracted trajectory pixels, ordered by x along the marker chord."""

    points: np.ndarray       # (N, 2) int, original image (u, v)
    roi_points: np.ndarray   # (N, 2) int, rectified ROI (x, y)
    seed_index: np.ndarray   # (N,) provenance: which seed found each pixel

    def __len__(self) -> int:
        return len(self.points)

    def centerline(self) -> np.ndarray:
        """Per-column mean in ROI coordinates, mapped back to image pixels.

        Collapses the drawn line's width so downstream 3D paths follow the
        stroke center rather than its full thickness. Returned as float
        image coordinates ordered by ROI x.
        """
        xs = self.roi_points[:, 0]
        order = np.argsort(xs, kind="stable")
        xs_sorted = xs[order]
        img = self.points[order].astype(float)
        uniq, start = np.unique(xs_sorted, return_index=True)
        out = np.empty((len(uniq), 2))
        bounds = np.append(start, len(xs_sorted))
        for i in range(len(uniq)):
            out[i] = img[bounds[i]:bounds[i + 1]].mean(axis=0)
        return out

    def to_json(self) -> list:
        return [[int(x), int(y)] for x, y in self.points]

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(), f)


def _rotate_about(pts: np.ndarray, center: np.ndarray, angle_rad: float) -> np.ndarray:
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    rot = np.array([[c, -s], [s, c]])
    return (pts - center) @ rot.T + center


def extract_roi(bundle: ImageBundle,
                marker_a: MarkerObservation | None,
                marker_b: MarkerObservation | None,
                params: ExtractionParams = ExtractionParams()) -> RectifiedROI:
    """Rectified region of interest around the chord joining the end markers.

    The crop is rotated so the chord is horizontal, extends 1.5 * box_height
    above and below it, and records Cr/Cb acceptance bands sampled on the
    chord (band = [min - tol, max + tol] of the sampled values).
    """
    h, w = bundle.shape
    for m in (marker_a, marker_b):
        if m is None:
            raise MarkersMissing("an end marker is not visible")
        u, v = m.pixel
        if not (0 <= u < w and 0 <= v < h):
            raise MarkersMissing(f"marker {m.id} outside the image")
    pa, pb = marker_a.pixel, marker_b.pixel
    if pa[0] > pb[0]:
        pa, pb = pb, pa
    chord = pb - pa
    angle = float(np.arctan2(chord[1], chord[0]))
    center = (pa + pb) / 2.0

    # chord endpoints in rectified full-image coordinates
    ra, rb = _rotate_about(np.array([pa, pb]), center, -angle)
    margin_y = 1.5 * params.box_height
    x0 = int(np.floor(ra[0])) - params.box_width
    x1 = int(np.ceil(rb[0])) + params.box_width
    y0 = int(np.floor(ra[1] - margin_y))
    y1 = int(np.ceil(ra[1] + margin_y))
    origin = np.array([x0, y0], dtype=float)

    # nearest-neighbor resample of the planes on the rectified grid
    xs = np.arange(x0, x1 + 1)
    ys = np.arange(y0, y1 + 1)
    gx, gy = np.meshgrid(xs, ys)
    grid = np.stack([gx.ravel(), gy.ravel()], axis=1).astype(float)
    src = _rotate_about(grid, center, angle)
    su = np.round(src[:, 0]).astype(int)
    sv = np.round(src[:, 1]).astype(int)
    valid = (su >= 0) & (su < w) & (sv >= 0) & (sv < h)
    su_c = np.clip(su, 0, w - 1)
    sv_c = np.clip(sv, 0, h - 1)
    shape = gx.shape

    def sample(plane):
        out = plane[sv_c, su_c]
        out[~valid] = 0
        return out.reshape(shape)

    cr = sample(bundle.cr)
    cb = sample(bundle.cb)
    gray = sample(bundle.gray)

    # acceptance bands from pixels on the chord itself
    n_samp = max(2, int(np.ceil(rb[0] - ra[0])))
    ts = np.linspace(0.0, 1.0, n_samp)
    chord_pts = pa + ts[:, None] * (pb - pa)
    cu = np.clip(np.round(chord_pts[:, 0]).astype(int), 0, w - 1)
    cv = np.clip(np.round(chord_pts[:, 1]).astype(int), 0, h - 1)
    tol = params.cr_tolerance
    cr_samples = bundle.cr[cv, cu].astype(int)
    cb_samples = bundle.cb[cv, cu].astype(int)

    return RectifiedROI(
        cr=cr, cb=cb, gray=gray, valid=valid.reshape(shape),
        center=center, angle_rad=-angle, origin=origin,
        chord_x=(float(ra[0] - x0), float(rb[0] - x0)),
        chord_y=float(ra[1] - y0),
        cr_band=(int(cr_samples.min() - tol), int(cr_samples.max() + tol)),
        cb_band=(int(cb_samples.min() - tol), int(cb_samples.max() + tol)),
    )


def seed_points(roi: RectifiedROI,
                params: ExtractionParams = ExtractionParams()) -> list[SeedPoint]:
    """Candidate seeds: per seed line, the pixel of maximum Cr.

    Seed line i sits at x = chord_start + (chord_end - chord_start) / N_s * i
    for i = 1..N_s. Argmax ties break toward smaller y.
    """
    h, w = roi.shape
    xs0, xs1 = roi.chord_x
    seeds = []
    for i in range(1, params.seed_count + 1):
        x = int(round(xs0 + (xs1 - xs0) / params.seed_count * i))
        if not (0 <= x < w):
            continue
        col = roi.cr[:, x]
        y = int(np.argmax(col))  # first maximum: smallest y
        seeds.append(SeedPoint(pixel=(x, y), cr_value=int(col[y])))
    return seeds


def boundary_features(plane: np.ndarray, seed: SeedPoint) -> tuple[int, int]:
    """Max absolute adjacent-pixel step over 8 px above and below the seed."""
    x, y = seed.pixel
    h = plane.shape[0]
    if y - 9 < 0 or y + 9 > h - 1:
        raise OutOfBounds("seed closer than 9 px to the ROI top/bottom")
    col = plane[:, x].astype(int)
    ups = [abs(col[y + j + 1] - col[y + j]) for j in range(1, 9)]
    downs = [abs(col[y - j - 1] - col[y - j]) for j in range(1, 9)]
    return max(ups), max(downs)


def filter_seeds(roi: RectifiedROI, seeds: list[SeedPoint],
                 params: ExtractionParams = ExtractionParams()) -> list[SeedPoint]:
    """Keep seeds with a real boundary in Cr, else retry on gray, else drop.

    Each accepted seed is tagged with the channel that passed; the box
    search later runs on that channel for that seed.
    """
    accepted = []
    floor = params.boundary_feature_floor
    for s in seeds:
        for channel, plane in (("cr", roi.cr), ("gray", roi.gray)):
            try:
                f_up, f_down = boundary_features(plane, s)
            except OutOfBounds:
                break
            if max(f_up, f_down) >= floor:
                accepted.append(SeedPoint(s.pixel, s.cr_value, True, channel))
                break
    return accepted


def _box_search(plane: np.ndarray, start: tuple[int, int], stop_x: int,
                direction: int, params: ExtractionParams,
                fixed_anchor_value: int | None) -> list[tuple[int, int]]:
    """March a box from `start` toward `stop_x` collecting in-band pixels.

    direction +1 searches right, -1 left. The intensity band follows the
    last detected pixel unless `fixed_anchor_value` pins it (ablation mode).
    The search stops when a box yields too few in-band pixels.
    """
    h, w = plane.shape
    bw, bh, tol, nep = params.box_width, params.box_height, params.cr_tolerance, params.min_pixels
    x, y = start
    anchor_value = int(plane[y, x]) if fixed_anchor_value is None else fixed_anchor_value
    collected: list[tuple[int, int]] = []
    while (x < stop_x) if direction > 0 else (x > stop_x):
        if direction > 0:
            cols = np.arange(x, min(x + bw, w))
        else:
            cols = np.arange(max(x - bw + 1, 0), x + 1)
        rows = np.arange(max(y - bh // 2, 0), min(y + bh // 2, h))
        if len(cols) == 0 or len(rows) == 0:
            break
        box = plane[np.ix_(rows, cols)].astype(int)
        mask = np.abs(box - anchor_value) <= tol
        n = int(mask.sum())
        if n <= nep:
            break
        rr, cc = np.nonzero(mask)
        pts_x = cols[cc]
        pts_y = rows[rr]
        collected.extend(zip(pts_x.tolist(), pts_y.tolist()))
        # re-anchor at the last pixel in scan order (outer loop over columns)
        if direction > 0:
            last = np.lexsort((pts_y, pts_x))[-1]
            new_x = int(pts_x[last])
            if new_x <= x:
                new_x = x + 1
        else:
            last = np.lexsort((pts_y, -pts_x))[-1]
            new_x = int(pts_x[last])
            if new_x >= x:
                new_x = x - 1
        y = int(pts_y[last])
        x = new_x
        if fixed_anchor_value is None:
            yc = min(max(y, 0), h - 1)
            xc = min(max(x, 0), w - 1)
            anchor_value = int(plane[yc, xc])
    return collected


def extract_trajectory(roi: RectifiedROI, seeds: list[SeedPoint],
                       params: ExtractionParams = ExtractionParams(),
                       adaptive: bool = True) -> Trajectory2D:
    """Bidirectional seeded box search over the rectified ROI.

    Every accepted seed searches rightward to the next seed and leftward to
    the previous one (outer seeds run to the ROI edges); per-seed pixel sets
    are merged by union. With adaptive=False the intensity band stays pinned
    at each seed's own value (fixed-threshold ablation).
    """
    accepted = sorted((s for s in seeds if s.accepted), key=lambda s: s.pixel[0])
    if not accepted:
        raise NoSeeds("no accepted seed points")
    h, w = roi.shape
    found: dict[tuple[int, int], int] = {}
    for i, s in enumerate(accepted):
        plane = roi.cr if s.channel == "cr" else roi.gray
        right_stop = accepted[i + 1].pixel[0] if i + 1 < len(accepted) else w - 1
        left_stop = accepted[i - 1].pixel[0] if i > 0 else 0
        fixed = None if adaptive else int(plane[s.pixel[1], s.pixel[0]])
        pts = _box_search(plane, s.pixel, right_stop, +1, params, fixed)
        pts += _box_search(plane, s.pixel, left_stop, -1, params, fixed)
        pts.append(s.pixel)
        for p in pts:
            found.setdefault(p, i)

    roi_pts = np.array(sorted(found.keys()), dtype=int)
    seed_idx = np.array([found[tuple(p)] for p in roi_pts], dtype=int)
    img_pts = np.round(roi.to_image(roi_pts)).astype(int)
    # drop duplicates introduced by rounding back to the image grid
    _, keep = np.unique(img_pts, axis=0, return_index=True)
    keep = np.sort(keep)
    return Trajectory2D(points=img_pts[keep], roi_points=roi_pts[keep],
                        seed_index=seed_idx[keep])


def column_coverage(traj: Trajectory2D, roi: RectifiedROI) -> float:
    """Fraction of chord columns with at least one extracted pixel."""
    x0, x1 = roi.chord_x
    cols = np.unique(traj.roi_points[:, 0])
    cols = cols[(cols >= x0) & (cols <= x1)]
    span = max(1, int(round(x1 - x0)) + 1)
    return len(cols) / span
