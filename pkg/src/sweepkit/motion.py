"""Marker-based motion monitoring, compensation and the object-frame ledger."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import (
    DegenerateConfiguration,
    IndexOutOfRange,
    LabelMismatch,
    UnknownStage,
)
from .geom import CalibrationPair, RigidTransform, compose, solve_rigid_alignment
from .pathplan import ProbePose, SweepPlan

DETECTION_THRESHOLD_MM = 5.0
RESUME_THRESHOLD_MM = 10.0
BACKOFF_MM = 5.0


@dataclass(frozen=True)
class MarkerSet:
    """Labeled marker positions (mm, base frame): 4 for registration, 1 held out."""

    positions: dict  # label -> (3,) array
    registration: tuple  # 4 labels
    validation: str      # the held-out label

    def __post_init__(self):
        pos = {k: np.asarray(v, dtype=float).reshape(3) for k, v in self.positions.items()}
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "registration", tuple(self.registration))
        labels = set(self.registration) | {self.validation}
        if len(self.registration) != 4 or len(labels) != 5:
            raise LabelMismatch("need 4 unique registration labels plus 1 validation label")
        missing = labels - set(pos)
        if missing:
            raise LabelMismatch(f"positions missing for labels {sorted(missing)}")

    @staticmethod
    def from_positions(points: np.ndarray, labels=None) -> "MarkerSet":
        """Five points; the first four register, the last validates."""
        points = np.asarray(points, dtype=float).reshape(5, 3)
        labels = list(labels) if labels is not None else [f"m{i}" for i in range(5)]
        return MarkerSet(dict(zip(labels, points)), labels[:4], labels[4])

    def transformed(self, t: RigidTransform) -> "MarkerSet":
        return MarkerSet({k: t.apply(v) for k, v in self.positions.items()},
                         self.registration, self.validation)

    def perturbed(self, sigma: float, rng: np.random.Generator) -> "MarkerSet":
        return MarkerSet({k: v + rng.normal(0.0, sigma, 3) for k, v in self.positions.items()},
                         self.registration, self.validation)


class Decision(Enum):
    RESUME = "Resume"
    ABORT = "Abort"


@dataclass(frozen=True)
class MotionEventRecord:
    stage: int
    transform: RigidTransform
    e_mc: float
    decision: Decision

    def to_json(self) -> dict:
        return {"stage": self.stage, "transform": self.transform.to_json(),
                "e_mc": self.e_mc, "decision": self.decision.value}

    @staticmethod
    def from_json(d: dict) -> "MotionEventRecord":
        return MotionEventRecord(d["stage"], RigidTransform.from_json(d["transform"]),
                                 d["e_mc"], Decision(d["decision"]))


def _check_labels(prev: MarkerSet, now: MarkerSet) -> None:
    if set(prev.positions) != set(now.positions) or prev.registration != now.registration \
            or prev.validation != now.validation:
        raise LabelMismatch("marker sets carry different labels or roles")


def detect_motion(prev: MarkerSet, now: MarkerSet,
                  threshold: float = DETECTION_THRESHOLD_MM) -> bool:
    """True iff any single marker moved strictly more than `threshold` mm."""
    _check_labels(prev, now)
    return any(np.linalg.norm(now.positions[k] - prev.positions[k]) > threshold
               for k in prev.positions)


def compute_compensation(prev: MarkerSet, now: MarkerSet) -> tuple[RigidTransform, float]:
    """Rigid transform taking pre-motion markers onto post-motion markers.

    Solved on the four registration markers; the residual e_mc is the
    distance between the held-out marker's observed position and its
    predicted one, ||P' - (R P + T)||.
    """
    _check_labels(prev, now)
    pairs = [CalibrationPair(prev.positions[k], now.positions[k]) for k in prev.registration]
    transform, _ = solve_rigid_alignment(pairs)
    v = prev.validation
    e_mc = float(np.linalg.norm(now.positions[v] - transform.apply(prev.positions[v])))
    return transform, e_mc


def compensation_error(transform: RigidTransform, p_before, p_after) -> float:
    """Independent evaluation of the validation residual."""
    return float(np.linalg.norm(np.asarray(p_after, dtype=float)
                                - transform.apply(p_before)))


def gate_resume(e_mc: float, resume_threshold: float = RESUME_THRESHOLD_MM) -> Decision:
    """Resume the sweep only while the validation residual stays below threshold."""
    return Decision.RESUME if e_mc < resume_threshold else Decision.ABORT


def remap_plan(plan: SweepPlan, m: RigidTransform, breakpoint_idx: int,
               backoff: float = BACKOFF_MM) -> tuple[SweepPlan, int]:
    """Carry the sweep plan along with the moved object.

    Positions are mapped by m, axes by its rotation only. The resume index
    is the last index at least `backoff` mm of arc length before the
    breakpoint (0 if the path is shorter than that).
    """
    if not (0 <= breakpoint_idx < len(plan.poses)):
        raise IndexOutOfRange(f"breakpoint {breakpoint_idx} outside plan of {len(plan.poses)}")
    positions = np.array([p.position for p in plan.poses])
    seg_len = np.linalg.norm(np.diff(positions, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg_len)])
    resume_idx = 0
    for i in range(breakpoint_idx, -1, -1):
        if arc[breakpoint_idx] - arc[i] >= backoff:
            resume_idx = i
            break
    new_poses = [ProbePose(m.apply(p.position), m.rotate(p.tcp_x),
                           m.rotate(p.tcp_y), m.rotate(p.tcp_z))
                 for p in plan.poses]
    return SweepPlan(plan.segments, new_poses, plan.merge_threshold), resume_idx


class ObjectFrameLedger:
    """Stage-indexed accumulated object-to-base transforms; T_0 is identity.

    Single-writer: update() appends T_k = M_k o T_{k-1} for each motion
    event's compensation transform M_k. Poses captured at stage k map into
    the object frame through T_k^{-1} and stay valid under later events.
    """

    def __init__(self):
        self._transforms = [RigidTransform.identity()]

    @property
    def stage(self) -> int:
        return len(self._transforms) - 1

    def update(self, m: RigidTransform) -> int:
        self._transforms.append(compose(m, self._transforms[-1]))
        return self.stage

    def transform_at(self, stage: int) -> RigidTransform:
        if not (0 <= stage <= self.stage):
            raise UnknownStage(f"stage {stage} not in ledger (current {self.stage})")
        return self._transforms[stage]

    def to_object_frame(self, stage: int, points_in_base: np.ndarray) -> np.ndarray:
        return self.transform_at(stage).inverse().apply(points_in_base)

    def pose_to_object_frame(self, stage: int, pose: ProbePose) -> ProbePose:
        t = self.transform_at(stage).inverse()
        return ProbePose(t.apply(pose.position), t.rotate(pose.tcp_x),
                         t.rotate(pose.tcp_y), t.rotate(pose.tcp_z))


def write_events(path, events) -> None:
    """Motion events as JSON lines."""
    with open(path, "w") as f:
        for e in events:
            f.write(json.dumps(e.to_json()) + "\n")


def read_events(path) -> list[MotionEventRecord]:
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(MotionEventRecord.from_json(json.loads(line)))
    return out


def read_marker_stream(path) -> list[MarkerSet]:
    """Replay file: one JSON object per line with positions/registration/validation."""
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            out.append(MarkerSet(d["positions"], d["registration"], d["validation"]))
    return out
