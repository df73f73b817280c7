"""Deterministic synthetic world and the scenario engine.

Renders a phantom surface with a drawn trajectory and markers to RGB-D,
produces analytic ultrasound frames of an embedded tube, injects scripted
motion events, and drives the full pipeline end to end against known
ground truth. All randomness flows through one seeded generator.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import compound as compounding
from .control import ComplianceParams
from .errors import AbortedSweep, PhantomNotVisible
from .geom import (
    CalibrationPair,
    CameraIntrinsics,
    FrameGraph,
    FrameId,
    RigidTransform,
    camera_to_pixel,
    compose,
    hand_eye_calibrate,
    rot_z,
    translation,
)
from .imgproc import (
    ExtractionParams,
    ImageBundle,
    MarkerObservation,
    extract_roi,
    extract_trajectory,
    filter_seeds,
    seed_points,
)
from .motion import (
    BACKOFF_MM,
    DETECTION_THRESHOLD_MM,
    RESUME_THRESHOLD_MM,
    Decision,
    MarkerSet,
    MotionEventRecord,
    ObjectFrameLedger,
    compute_compensation,
    detect_motion,
    gate_resume,
    remap_plan,
    write_events,
)
from .pathplan import (
    DEFAULT_KEYPOINT_THRESHOLD_MM,
    DEFAULT_MERGE_THRESHOLD,
    ProbePose,
    SweepPlan,
    detect_key_points,
    optimize_orientations,
    project_path,
)
from .surface import DEFAULT_RADIUS_MM, backproject_trajectory, depth_cloud, normals_along

SKIN_RGB = (205, 170, 150)
STROKE_RGB = (180, 30, 30)
STROKE_JITTER = 10  # per-pixel, stroke only; the skin stays flat
MARKER_RGB = (245, 245, 245)


@dataclass(frozen=True)
class SurfaceModel:
    """Analytic phantom surface: flat | inclined | crease | hemisphere.

    All surfaces are height fields z = h(x, y) over the object frame.
    `inclined` tilts about the y axis through x = x0; `crease` is a tent
    with its ridge along y at x = x0; `hemisphere` is a spherical cap on a
    flat base.
    """

    kind: str = "flat"
    z0: float = 0.0
    tilt_deg: float = 0.0    # inclined / crease face tilt
    x0: float = 0.0          # hinge / ridge position
    cap_center: tuple = (0.0, 0.0)
    cap_radius: float = 100.0

    def height(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "flat":
            return np.full_like(x, self.z0)
        if self.kind == "inclined":
            return self.z0 + np.tan(np.radians(self.tilt_deg)) * (x - self.x0)
        if self.kind == "crease":
            return self.z0 - np.tan(np.radians(self.tilt_deg)) * np.abs(x - self.x0)
        if self.kind == "hemisphere":
            rho2 = (x - self.cap_center[0]) ** 2 + (y - self.cap_center[1]) ** 2
            h = np.where(rho2 < self.cap_radius ** 2,
                         np.sqrt(np.maximum(self.cap_radius ** 2 - rho2, 0.0)), 0.0)
            return self.z0 + h
        raise ValueError(f"unknown surface kind {self.kind!r}")

    def normal(self, x, y):
        """Unit upward surface normal(s) at (x, y)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "flat":
            n = np.broadcast_to(np.array([0.0, 0.0, 1.0]), x.shape + (3,)).copy()
        elif self.kind == "inclined":
            g = np.tan(np.radians(self.tilt_deg))
            n = np.stack([np.full_like(x, -g), np.zeros_like(x), np.ones_like(x)], axis=-1)
        elif self.kind == "crease":
            g = np.tan(np.radians(self.tilt_deg)) * np.sign(x - self.x0)
            n = np.stack([g, np.zeros_like(x), np.ones_like(x)], axis=-1)
        elif self.kind == "hemisphere":
            dx = x - self.cap_center[0]
            dy = y - self.cap_center[1]
            rho2 = dx ** 2 + dy ** 2
            inside = rho2 < self.cap_radius ** 2
            dz = np.sqrt(np.maximum(self.cap_radius ** 2 - rho2, 1e-12))
            n = np.stack([np.where(inside, dx, 0.0), np.where(inside, dy, 0.0),
                          np.where(inside, dz, 1.0)], axis=-1)
        else:
            raise ValueError(f"unknown surface kind {self.kind!r}")
        return n / np.linalg.norm(n, axis=-1, keepdims=True)

    def intersect_rays(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """Hit points for rays origin + t * dirs (all in the object frame)."""
        o = np.asarray(origin, dtype=float)
        d = np.asarray(dirs, dtype=float).reshape(-1, 3)

        def plane_hit(p0, n):
            n = np.asarray(n, dtype=float)
            denom = d @ n
            denom = np.where(np.abs(denom) < 1e-12, 1e-12, denom)
            t = ((p0 - o) @ n) / denom
            return o + t[:, None] * d

        if self.kind == "flat":
            return plane_hit(np.array([0.0, 0.0, self.z0]), np.array([0.0, 0.0, 1.0]))
        if self.kind == "inclined":
            g = np.tan(np.radians(self.tilt_deg))
            return plane_hit(np.array([self.x0, 0.0, self.z0]), np.array([-g, 0.0, 1.0]))
        if self.kind == "crease":
            g = np.tan(np.radians(self.tilt_deg))
            left = plane_hit(np.array([self.x0, 0.0, self.z0]), np.array([-g, 0.0, 1.0]))
            right = plane_hit(np.array([self.x0, 0.0, self.z0]), np.array([g, 0.0, 1.0]))
            # the left face model is valid for x <= ridge, the right one beyond
            use_left = left[:, 0] <= self.x0
            return np.where(use_left[:, None], left, right)
        if self.kind == "hemisphere":
            base = plane_hit(np.array([0.0, 0.0, self.z0]), np.array([0.0, 0.0, 1.0]))
            c = np.array([self.cap_center[0], self.cap_center[1], self.z0])
            oc = o - c
            a = np.sum(d * d, axis=1)
            b = 2.0 * d @ oc
            cq = oc @ oc - self.cap_radius ** 2
            disc = b ** 2 - 4 * a * cq
            ok = disc > 0
            t = np.where(ok, (-b - np.sqrt(np.maximum(disc, 0.0))) / (2 * a), np.inf)
            sphere = o + t[:, None] * d
            valid = ok & (sphere[:, 2] >= self.z0) & np.isfinite(t)
            return np.where(valid[:, None], sphere, base)
        raise ValueError(f"unknown surface kind {self.kind!r}")


@dataclass(frozen=True)
class TubeSpec:
    """Straight tube below the surface, in object-frame coordinates."""

    point: tuple = (0.0, 0.0, -15.0)
    direction: tuple = (1.0, 0.0, 0.0)
    inner_radius: float = 5.0
    wall: float = 1.5

    def axis(self) -> tuple[np.ndarray, np.ndarray]:
        p = np.asarray(self.point, dtype=float)
        d = np.asarray(self.direction, dtype=float)
        return p, d / np.linalg.norm(d)


# registration markers near the phantom corners, validation near the middle;
# the central validation marker keeps the rotation-error lever arm short
DEFAULT_MARKER_XY = ((-80.0, -62.0), (82.0, -58.0), (78.0, 60.0), (-78.0, 58.0), (6.0, 8.0))


@dataclass(frozen=True)
class PhantomSpec:
    surface: SurfaceModel = SurfaceModel()
    trajectory_xy: tuple = ((-75.0, 0.0), (75.0, 0.0))  # polyline, object frame mm
    stroke_width: float = 5.0       # mm
    tube: TubeSpec = TubeSpec()
    marker_xy: tuple = DEFAULT_MARKER_XY  # 4 registration + 1 validation
    marker_radius: float = 4.0      # mm, rendered disc
    end_marker_offset: float = 10.0  # mm beyond each stroke end

    def trajectory_polyline(self, spacing: float = 0.5) -> np.ndarray:
        """Dense 3D sampling of the stroke on the surface (object frame)."""
        pts = np.asarray(self.trajectory_xy, dtype=float)
        out = []
        for a, b in zip(pts[:-1], pts[1:]):
            n = max(2, int(np.ceil(np.linalg.norm(b - a) / spacing)) + 1)
            ts = np.linspace(0.0, 1.0, n)
            seg = a + ts[:, None] * (b - a)
            out.append(seg if not out else seg[1:])
        xy = np.vstack(out)
        z = self.surface.height(xy[:, 0], xy[:, 1])
        return np.column_stack([xy, z])

    def motion_markers(self) -> np.ndarray:
        xy = np.asarray(self.marker_xy, dtype=float)
        z = self.surface.height(xy[:, 0], xy[:, 1])
        return np.column_stack([xy, z])

    def end_marker_positions(self) -> np.ndarray:
        pts = np.asarray(self.trajectory_xy, dtype=float)
        d0 = pts[0] - pts[1]
        d1 = pts[-1] - pts[-2]
        a = pts[0] + self.end_marker_offset * d0 / np.linalg.norm(d0)
        b = pts[-1] + self.end_marker_offset * d1 / np.linalg.norm(d1)
        xy = np.array([a, b])
        z = self.surface.height(xy[:, 0], xy[:, 1])
        return np.column_stack([xy, z])


@dataclass(frozen=True)
class GroundTruth:
    path3d: np.ndarray          # dense stroke samples, object frame
    normals: np.ndarray         # analytic surface normals along path3d
    extrinsics: RigidTransform  # true camera-to-base
    object_pose: RigidTransform
    tube: TubeSpec


def overhead_camera(height_mm: float = 600.0) -> RigidTransform:
    """Camera looking straight down at the object-frame origin."""
    r = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])
    return RigidTransform(r, np.array([0.0, 0.0, height_mm]))


DEFAULT_INTRINSICS = CameraIntrinsics(fx=600.0, fy=600.0, cx=320.0, cy=240.0,
                                      width=640, height=480)


def _point_polyline_distance(points: np.ndarray, polyline: np.ndarray) -> np.ndarray:
    """Distance from each point to the closest polyline segment (any dim)."""
    points = np.atleast_2d(points)
    best = np.full(len(points), np.inf)
    for a, b in zip(polyline[:-1], polyline[1:]):
        ab = b - a
        denom = float(ab @ ab)
        if denom == 0:
            d = np.linalg.norm(points - a, axis=1)
        else:
            t = np.clip((points - a) @ ab / denom, 0.0, 1.0)
            d = np.linalg.norm(points - (a + t[:, None] * ab), axis=1)
        best = np.minimum(best, d)
    return best


def render_scene(spec: PhantomSpec, camera_pose: RigidTransform,
                 intrinsics: CameraIntrinsics, depth_sigma: float,
                 rng: np.random.Generator,
                 object_pose: RigidTransform = RigidTransform.identity(),
                 ) -> tuple[ImageBundle, list[MarkerObservation], MarkerSet, GroundTruth]:
    """Ray-render the phantom to an RGB-D bundle with markers and ground truth.

    Deterministic for a given generator state. Depth is reported in whole
    millimeters (sensor quantization) with optional Gaussian noise applied
    before rounding.
    """
    h, w = intrinsics.height, intrinsics.width
    us, vs = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    dirs_cam = np.stack([(us.ravel() - intrinsics.cx) / intrinsics.fx,
                         (vs.ravel() - intrinsics.cy) / intrinsics.fy,
                         np.ones(h * w)], axis=1)
    dirs_base = camera_pose.rotate(dirs_cam)
    origin_base = camera_pose.translation

    to_obj = object_pose.inverse()
    origin_obj = to_obj.apply(origin_base)
    dirs_obj = to_obj.rotate(dirs_base)
    hits_obj = spec.surface.intersect_rays(origin_obj, dirs_obj)

    # depth = camera-frame z of the hit point
    hits_base = object_pose.apply(hits_obj)
    hits_cam = camera_pose.inverse().apply(hits_base)
    depth = hits_cam[:, 2]
    if depth_sigma > 0:
        depth = depth + rng.normal(0.0, depth_sigma, depth.shape)
    depth = np.round(np.maximum(depth, 0.0)).reshape(h, w)

    rgb = np.empty((h * w, 3), dtype=np.int16)
    rgb[:] = SKIN_RGB
    stroke_xy = np.asarray(spec.trajectory_xy, dtype=float)
    stroke_mask = _point_polyline_distance(hits_obj[:, :2], stroke_xy) <= spec.stroke_width / 2
    if not stroke_mask.any():
        raise PhantomNotVisible("trajectory stroke outside the camera view")
    n_stroke = int(stroke_mask.sum())
    jitter = rng.integers(-STROKE_JITTER, STROKE_JITTER + 1, size=(n_stroke, 3))
    rgb[stroke_mask] = np.clip(np.asarray(STROKE_RGB) + jitter, 0, 255)

    marker_obj = np.vstack([spec.motion_markers(), spec.end_marker_positions()])
    for m in marker_obj:
        disc = np.linalg.norm(hits_obj[:, :2] - m[:2], axis=1) <= spec.marker_radius
        rgb[disc] = MARKER_RGB
    rgb = rgb.reshape(h, w, 3).astype(np.uint8)

    bundle = ImageBundle.from_rgb_depth(rgb, depth, intrinsics)

    # marker observations come from the tracking system, not from color
    cam_inv = camera_pose.inverse()
    end_obs = []
    for i, m in enumerate(object_pose.apply(spec.end_marker_positions())):
        p_cam = cam_inv.apply(m)
        px, _ = camera_to_pixel(p_cam, intrinsics)
        end_obs.append(MarkerObservation(id=100 + i, pixel=px, position=p_cam))

    markers = MarkerSet.from_positions(object_pose.apply(spec.motion_markers()))

    gt_path = spec.trajectory_polyline()
    gt_normals = spec.surface.normal(gt_path[:, 0], gt_path[:, 1])
    gt = GroundTruth(gt_path, gt_normals, camera_pose, object_pose, spec.tube)
    return bundle, end_obs, markers, gt


def render_us_frame(spec: PhantomSpec, probe_pose: ProbePose,
                    rng: np.random.Generator,
                    object_pose: RigidTransform = RigidTransform.identity(),
                    size: tuple = (64, 64), spacing: tuple = (0.5, 0.5),
                    stage: int = 0) -> compounding.USFrame:
    """Analytic B-mode-like frame: dark tube lumen, bright wall, speckle.

    The imaging plane follows the compounding convention: columns along
    tcp_x, rows (depth) along tcp_z from the probe tip.
    """
    frame = compounding.USFrame(np.zeros(size, dtype=np.uint8), spacing, probe_pose, stage)
    pts_base = frame.pixel_positions()
    pts_obj = object_pose.inverse().apply(pts_base)
    p0, d = spec.tube.axis()
    rel = pts_obj - p0
    dist = np.linalg.norm(rel - np.outer(rel @ d, d), axis=1)
    r_in = spec.tube.inner_radius
    r_out = r_in + spec.tube.wall
    speckle = np.clip(rng.normal(100.0, 15.0, len(dist)), 0, 255)
    px = np.where(dist < r_in, 20.0, np.where(dist <= r_out, 220.0, speckle))
    return compounding.USFrame(px.reshape(size).astype(np.uint8), spacing, probe_pose, stage)


@dataclass(frozen=True)
class MotionEventSpec:
    at_step: int
    transform: RigidTransform

    @staticmethod
    def translation_event(at_step: int, offset) -> "MotionEventSpec":
        return MotionEventSpec(at_step, translation(offset))

    @staticmethod
    def rotation_event(at_step: int, angle_deg: float, center=(0.0, 0.0, 0.0)) -> "MotionEventSpec":
        r = rot_z(angle_deg)
        c = np.asarray(center, dtype=float)
        return MotionEventSpec(at_step, RigidTransform(r.rotation, c - r.rotation @ c))

    def to_json(self) -> dict:
        return {"atStep": self.at_step, "transform": self.transform.to_json()}

    @staticmethod
    def from_json(d: dict) -> "MotionEventSpec":
        return MotionEventSpec(d["atStep"], RigidTransform.from_json(d["transform"]))


@dataclass(frozen=True)
class PipelineConfig:
    """Every tunable of the pipeline, addressable by dotted key from the CLI."""

    extraction: ExtractionParams = ExtractionParams()
    normal_radius: float = DEFAULT_RADIUS_MM
    keypoint_threshold: float = DEFAULT_KEYPOINT_THRESHOLD_MM
    merge_threshold: float = DEFAULT_MERGE_THRESHOLD
    detection_threshold: float = DETECTION_THRESHOLD_MM
    resume_threshold: float = RESUME_THRESHOLD_MM
    backoff: float = BACKOFF_MM
    step_mm: float = 2.0
    voxel_size: float = 1.0
    vessel_threshold: float = 60.0
    us_frame_size: tuple = (64, 64)
    us_spacing: tuple = (0.5, 0.5)
    cloud_stride: int = 4
    compliance: ComplianceParams = ComplianceParams()

    def with_overrides(self, overrides: dict) -> "PipelineConfig":
        """Apply {'extraction.crTolerance': 25, ...}-style dotted overrides."""
        from .errors import UnknownParameter

        alias = {
            "crTolerance": "cr_tolerance", "boxWidth": "box_width",
            "boxHeight": "box_height", "minPixels": "min_pixels",
            "seedCount": "seed_count", "boundaryFeatureFloor": "boundary_feature_floor",
        }
        cfg = self
        for key, value in overrides.items():
            head, _, tail = key.partition(".")
            if tail:
                if head != "extraction":
                    raise UnknownParameter(f"unknown parameter group {head!r}")
                field_name = alias.get(tail, tail)
                if not hasattr(cfg.extraction, field_name):
                    raise UnknownParameter(f"unknown extraction parameter {tail!r}")
                cfg = replace(cfg, extraction=replace(cfg.extraction, **{field_name: type(getattr(cfg.extraction, field_name))(value)}))
            else:
                if not hasattr(cfg, head) or head in ("extraction", "compliance"):
                    raise UnknownParameter(f"unknown parameter {head!r}")
                cfg = replace(cfg, **{head: type(getattr(cfg, head))(value)})
        return cfg


@dataclass(frozen=True)
class ScenarioScript:
    """Reproducible experiment description. `seed` is mandatory."""

    kind: str = "sweep"  # "sweep" | "compensation"
    seed: int = 0
    depth_sigma: float = 0.0
    marker_sigma: float = 0.0
    motion_events: tuple = ()
    compensate: bool = True
    # compensation-kind settings
    magnitudes: tuple = (50.0, 100.0, 150.0, 200.0)
    motion_type: str = "translation"  # "translation" | "rotation"
    trials_per_magnitude: int = 10

    def to_json(self) -> dict:
        return {"kind": self.kind, "seed": self.seed,
                "noise": {"depthSigma": self.depth_sigma, "markerSigma": self.marker_sigma},
                "motionEvents": [e.to_json() for e in self.motion_events],
                "compensate": self.compensate,
                "magnitudes": list(self.magnitudes),
                "motionType": self.motion_type,
                "trialsPerMagnitude": self.trials_per_magnitude}

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2)

    @staticmethod
    def from_json(d: dict) -> "ScenarioScript":
        noise = d.get("noise", {})
        return ScenarioScript(
            kind=d.get("kind", "sweep"),
            seed=d["seed"],
            depth_sigma=noise.get("depthSigma", 0.0),
            marker_sigma=noise.get("markerSigma", 0.0),
            motion_events=tuple(MotionEventSpec.from_json(e) for e in d.get("motionEvents", [])),
            compensate=d.get("compensate", True),
            magnitudes=tuple(d.get("magnitudes", (50.0, 100.0, 150.0, 200.0))),
            motion_type=d.get("motionType", "translation"),
            trials_per_magnitude=d.get("trialsPerMagnitude", 10),
        )

    @staticmethod
    def load(path) -> "ScenarioScript":
        with open(path) as f:
            return ScenarioScript.from_json(json.load(f))


@dataclass
class SweepRun:
    poses: list                 # executed ProbePose per step, base frame
    stages: list                # ledger stage of each executed step
    frames: list                # USFrame per step
    events: list                # MotionEventRecord
    ledger: ObjectFrameLedger
    volume: compounding.Volume | None
    metrics: dict

    def dump(self, out_dir) -> None:
        os.makedirs(out_dir, exist_ok=True)
        from PIL import Image

        frames_dir = os.path.join(out_dir, "frames")
        os.makedirs(frames_dir, exist_ok=True)
        for i, fr in enumerate(self.frames):
            Image.fromarray(fr.pixels).save(os.path.join(frames_dir, f"frame_{i:04d}.png"))
        with open(os.path.join(out_dir, "poses.jsonl"), "w") as f:
            for pose, stage in zip(self.poses, self.stages):
                row = pose.to_json()
                row["stage"] = stage
                f.write(json.dumps(row) + "\n")
        write_events(os.path.join(out_dir, "events.jsonl"), self.events)
        if self.volume is not None:
            self.volume.save(os.path.join(out_dir, "volume.raw"),
                             os.path.join(out_dir, "volume.json"))
        with open(os.path.join(out_dir, "metrics.json"), "w") as f:
            json.dump(self.metrics, f, sort_keys=True, indent=2)


def _calibrate_from_truth(t_b_c: RigidTransform, intrinsics: CameraIntrinsics) -> FrameGraph:
    """Hand-eye calibration from eight exact chessboard intersections."""
    chess = np.array([[x, y, z]
                      for z in (0.0, 40.0)
                      for x, y in ((-60.0, -40.0), (60.0, -40.0), (60.0, 40.0), (-60.0, 40.0))])
    t_c_b = t_b_c.inverse()
    pairs = [CalibrationPair(t_c_b.apply(p), p) for p in chess]
    _, graph = hand_eye_calibrate(pairs, FrameGraph())
    return graph.with_intrinsics(intrinsics)


def _imaging_pose(pose: ProbePose) -> ProbePose:
    """Plan poses hold tcp_z away from the tissue; imaging looks into it."""
    return ProbePose(pose.position, -pose.tcp_x, pose.tcp_y, -pose.tcp_z)


def _subsample_path(path: np.ndarray, step_mm: float) -> np.ndarray:
    seg = np.linalg.norm(np.diff(path, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    keep = [0]
    next_arc = step_mm
    for i in range(1, len(path)):
        if arc[i] >= next_arc:
            keep.append(i)
            next_arc = arc[i] + step_mm
    if keep[-1] != len(path) - 1:
        keep.append(len(path) - 1)
    return path[keep]


def run_sweep_scenario(script: ScenarioScript, spec: PhantomSpec = PhantomSpec(),
                       config: PipelineConfig = PipelineConfig(),
                       camera_pose: RigidTransform | None = None,
                       intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS) -> SweepRun:
    """Full pipeline: calibrate, extract, plan, sweep with motion events, compound."""
    rng = np.random.default_rng(script.seed)
    camera_pose = camera_pose if camera_pose is not None else overhead_camera()
    graph = _calibrate_from_truth(camera_pose, intrinsics)

    bundle, end_obs, markers0, gt = render_scene(spec, camera_pose, intrinsics,
                                                 script.depth_sigma, rng)
    roi = extract_roi(bundle, end_obs[0], end_obs[1], config.extraction)
    seeds = filter_seeds(roi, seed_points(roi, config.extraction), config.extraction)
    traj2d = extract_trajectory(roi, seeds, config.extraction)
    path = backproject_trajectory(traj2d, bundle, graph)
    path = _subsample_path(path, config.step_mm)
    cloud = depth_cloud(bundle, graph, stride=config.cloud_stride)
    normals = normals_along(cloud, path, radius=config.normal_radius)
    frame2d = project_path(path)
    keypoints = detect_key_points(frame2d, config.keypoint_threshold)
    plan = optimize_orientations(path, keypoints, normals, config.merge_threshold)

    path_error = float(np.mean(_point_polyline_distance(path, gt.path3d)))
    path_error_max = float(np.max(_point_polyline_distance(path, gt.path3d)))

    events_by_step = {e.at_step: e for e in script.motion_events}
    object_pose = RigidTransform.identity()
    ledger = ObjectFrameLedger()
    markers_ref = markers0
    executed_poses: list[ProbePose] = []
    executed_stages: list[int] = []
    frames = []
    events: list[MotionEventRecord] = []

    i = 0
    step_counter = 0
    while i < len(plan.poses):
        if step_counter in events_by_step:
            object_pose = compose(events_by_step.pop(step_counter).transform, object_pose)
        markers_true = markers0.transformed(object_pose)
        # detection runs on the temporally filtered track, compensation on a
        # single noisy snapshot
        if detect_motion(markers_ref, markers_true, config.detection_threshold):
            observed = (markers_true.perturbed(script.marker_sigma, rng)
                        if script.marker_sigma > 0 else markers_true)
            m_hat, e_mc = compute_compensation(markers_ref, observed)
            decision = gate_resume(e_mc, config.resume_threshold)
            events.append(MotionEventRecord(ledger.stage, m_hat, e_mc, decision))
            if decision is Decision.ABORT:
                raise AbortedSweep(f"e_mc = {e_mc:.2f} mm over the resume threshold",
                                   stage=ledger.stage, e_mc=e_mc)
            ledger.update(m_hat)
            plan, resume_idx = remap_plan(plan, m_hat, i, config.backoff)
            markers_ref = markers_true
            i = resume_idx
        pose = plan.poses[i]
        frames.append(render_us_frame(spec, _imaging_pose(pose), rng,
                                      object_pose=object_pose,
                                      size=config.us_frame_size,
                                      spacing=config.us_spacing,
                                      stage=ledger.stage))
        executed_poses.append(pose)
        executed_stages.append(ledger.stage)
        i += 1
        step_counter += 1

    compound_ledger = ledger if script.compensate else ObjectFrameLedger()
    if not script.compensate:
        frames = [compounding.USFrame(f.pixels, f.spacing, f.pose, 0) for f in frames]
    volume = compounding.compound(frames, compound_ledger, config.voxel_size)
    centerline = compounding.vessel_centerline(volume, config.vessel_threshold)

    # executed positions mapped back to the object frame must track the stroke
    exec_obj = np.array([ledger.to_object_frame(s, p.position)
                         for p, s in zip(executed_poses, executed_stages)])
    follow = _point_polyline_distance(exec_obj, gt.path3d)

    metrics = {
        "seed": script.seed,
        "steps": len(executed_poses),
        "motionEvents": len(events),
        "eMcMm": [round(e.e_mc, 9) for e in events],
        "pathErrorMeanMm": round(path_error, 6),
        "pathErrorMaxMm": round(path_error_max, 6),
        "followErrorMeanMm": round(float(follow.mean()), 6),
        "followErrorMaxMm": round(float(follow.max()), 6),
        "followErrorPerStepMm": [round(float(v), 6) for v in follow],
        "centerlineMaxJumpMm": round(centerline.max_jump, 6),
        "centerlineSlices": len(centerline.slice_indices),
        "compensate": script.compensate,
    }
    run = SweepRun(executed_poses, executed_stages, frames, events, ledger, volume, metrics)
    run.centerline = centerline
    run.ground_truth = gt
    run.plan = plan
    return run


def run_compensation_scenario(script: ScenarioScript,
                              spec: PhantomSpec = PhantomSpec()) -> dict:
    """Marker-level batch reproducing the motion-compensation experiments.

    Per magnitude and per trial: place the markers (jittered layout), apply
    a random translation of the given length or a rotation of the given
    angle about a random in-view axis, observe the moved markers with
    Gaussian noise, and record the validation residual e_mc.
    """
    rng = np.random.default_rng(script.seed)
    base_layout = spec.motion_markers()
    results = {"kind": script.motion_type, "magnitudes": {}, "all": []}
    for mag in script.magnitudes:
        errs = []
        for _ in range(script.trials_per_magnitude):
            layout = base_layout + rng.uniform(-20.0, 20.0, base_layout.shape)
            markers = MarkerSet.from_positions(layout)
            if script.motion_type == "translation":
                direction = rng.normal(size=3)
                direction /= np.linalg.norm(direction)
                m = translation(mag * direction)
            else:
                center = rng.uniform(-100.0, 100.0, 3)
                r = rot_z(mag)
                m = RigidTransform(r.rotation, center - r.rotation @ center)
            moved = markers.transformed(m)
            observed = moved.perturbed(script.marker_sigma, rng) if script.marker_sigma > 0 else moved
            _, e_mc = compute_compensation(markers, observed)
            errs.append(e_mc)
        results["magnitudes"][str(mag)] = [round(e, 9) for e in errs]
        results["all"].extend(errs)
    arr = np.asarray(results["all"])
    results["medianMm"] = round(float(np.median(arr)), 6)
    results["meanMm"] = round(float(arr.mean()), 6)
    results["stdMm"] = round(float(arr.std()), 6)
    results["fractionBelow4mm"] = round(float((arr < 4.0).mean()), 6)
    results["all"] = [round(e, 9) for e in results["all"]]
    return results


def run_scenario(script: ScenarioScript, spec: PhantomSpec = PhantomSpec(),
                 config: PipelineConfig = PipelineConfig()):
    """Dispatch on the script kind; see run_sweep_scenario / run_compensation_scenario."""
    if script.kind == "compensation":
        return run_compensation_scenario(script, spec)
    return run_sweep_scenario(script, spec, config)


def v_path_spec(amplitude: float = 40.0) -> PhantomSpec:
    """Flat phantom with a V-shaped stroke (one turning point)."""
    return PhantomSpec(trajectory_xy=((-75.0, 0.0), (0.0, amplitude), (75.0, 0.0)))


def crease_spec(tilt_deg: float = 10.0) -> PhantomSpec:
    """Tent-crease phantom with a straight stroke crossing the ridge."""
    return PhantomSpec(surface=SurfaceModel(kind="crease", tilt_deg=tilt_deg, z0=0.0),
                       tube=TubeSpec(point=(0.0, 0.0, -25.0)))
