import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sweepkit.errors import IndexOutOfRange, LabelMismatch, UnknownStage
from sweepkit.geom import RigidTransform, compose, rot_z, translation
from sweepkit.motion import (
    BACKOFF_MM,
    DETECTION_THRESHOLD_MM,
    Decision,
    MarkerSet,
    MotionEventRecord,
    ObjectFrameLedger,
    compensation_error,
    compute_compensation,
    detect_motion,
    gate_resume,
    read_events,
    read_marker_stream,
    remap_plan,
    write_events,
)
from sweepkit.pathplan import KeyPointSet, optimize_orientations

from .conftest import random_rigid

CORNERS = np.array([[-80.0, -60, 0], [80, -60, 0], [80, 60, 0], [-80, 60, 0], [5, 5, 0]])


def marker_set():
    return MarkerSet.from_positions(CORNERS)


def straight_plan(n=21, length=100.0):
    p = np.stack([np.linspace(0, length, n), np.zeros(n), np.zeros(n)], axis=1)
    return optimize_orientations(p, KeyPointSet(np.array([], int), 5.0),
                                 np.tile([0.0, 0, 1], (n, 1)))


class TestMarkerSet:
    def test_roles(self):
        ms = marker_set()
        assert len(ms.registration) == 4 and ms.validation == "m4"

    def test_duplicate_labels_rejected(self):
        with pytest.raises(LabelMismatch):
            MarkerSet(dict(zip("aabcd", CORNERS)), ("a", "a", "b", "c"), "d")

    def test_missing_position_rejected(self):
        with pytest.raises(LabelMismatch):
            MarkerSet({"a": CORNERS[0]}, ("a", "b", "c", "d"), "e")

    def test_transformed(self):
        t = translation([10, 0, 0])
        moved = marker_set().transformed(t)
        assert np.allclose(moved.positions["m0"], CORNERS[0] + [10, 0, 0])


class TestDetectMotion:
    def test_still_object(self):
        assert not detect_motion(marker_set(), marker_set())

    def test_sub_threshold_jitter_ignored(self):
        now = marker_set().transformed(translation([4.9, 0, 0]))
        assert not detect_motion(marker_set(), now)

    def test_single_marker_over_threshold(self):
        ms = marker_set()
        pos = dict(ms.positions)
        pos["m2"] = pos["m2"] + np.array([0, 0, 5.1])
        now = MarkerSet(pos, ms.registration, ms.validation)
        assert detect_motion(ms, now)

    def test_exactly_at_threshold_not_motion(self):
        now = marker_set().transformed(translation([DETECTION_THRESHOLD_MM, 0, 0]))
        assert not detect_motion(marker_set(), now)

    def test_label_mismatch(self):
        other = MarkerSet.from_positions(CORNERS, labels=list("abcde"))
        with pytest.raises(LabelMismatch):
            detect_motion(marker_set(), other)


class TestComputeCompensation:
    def test_pure_translation_exact(self):
        t = translation([30, -12, 4])
        m, e_mc = compute_compensation(marker_set(), marker_set().transformed(t))
        assert np.allclose(m.as_matrix(), t.as_matrix(), atol=1e-9)
        assert e_mc < 1e-9

    def test_rotation_about_center(self, rng):
        t = compose(translation([10, 20, 0]), rot_z(15))
        m, e_mc = compute_compensation(marker_set(), marker_set().transformed(t))
        assert np.allclose(m.as_matrix(), t.as_matrix(), atol=1e-9)
        assert e_mc < 1e-9

    def test_validation_marker_held_out(self):
        # corrupting only the validation marker leaves the estimate intact
        # but shows up fully in e_mc
        t = translation([20, 0, 0])
        moved = marker_set().transformed(t)
        pos = dict(moved.positions)
        pos["m4"] = pos["m4"] + np.array([0, 3.0, 0])
        now = MarkerSet(pos, moved.registration, moved.validation)
        m, e_mc = compute_compensation(marker_set(), now)
        assert np.allclose(m.as_matrix(), t.as_matrix(), atol=1e-9)
        assert abs(e_mc - 3.0) < 1e-9

    def test_compensation_error_matches(self, rng):
        t = random_rigid(rng)
        before, after = rng.uniform(-50, 50, 3), rng.uniform(-50, 50, 3)
        assert compensation_error(t, before, after) == pytest.approx(
            np.linalg.norm(after - t.apply(before)))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_round_trip_any_rigid_motion(self, seed):
        r = np.random.default_rng(seed)
        t = random_rigid(r)
        m, e_mc = compute_compensation(marker_set(), marker_set().transformed(t))
        assert np.linalg.norm(m.translation - t.translation) < 1e-6
        assert e_mc < 1e-6


class TestGate:
    def test_below_threshold_resumes(self):
        assert gate_resume(9.99) is Decision.RESUME

    def test_at_and_above_aborts(self):
        assert gate_resume(10.0) is Decision.ABORT
        assert gate_resume(25.0) is Decision.ABORT


class TestRemapPlan:
    def test_positions_and_axes_carried(self, rng):
        plan = straight_plan()
        t = compose(translation([5, 40, 0]), rot_z(30))
        new_plan, _ = remap_plan(plan, t, breakpoint_idx=10)
        for old, new in zip(plan.poses, new_plan.poses):
            assert np.allclose(new.position, t.apply(old.position), atol=1e-9)
            assert np.allclose(new.axes_matrix(), t.rotation @ old.axes_matrix(), atol=1e-9)
            m = new.axes_matrix()
            assert np.allclose(m.T @ m, np.eye(3), atol=1e-9)

    def test_backoff_arc_length(self):
        # 5 mm spacing: the default 5 mm back-off steps exactly one index
        plan = straight_plan(n=21, length=100.0)
        _, resume = remap_plan(plan, RigidTransform.identity(), breakpoint_idx=10)
        assert resume == 9

    def test_backoff_fine_spacing(self):
        # 1 mm spacing: back-off walks 5 indices
        plan = straight_plan(n=101, length=100.0)
        _, resume = remap_plan(plan, RigidTransform.identity(), breakpoint_idx=50,
                               backoff=BACKOFF_MM)
        assert resume == 45

    def test_backoff_clamped_at_start(self):
        plan = straight_plan(n=21, length=100.0)
        _, resume = remap_plan(plan, RigidTransform.identity(), breakpoint_idx=0)
        assert resume == 0

    def test_breakpoint_out_of_range(self):
        with pytest.raises(IndexOutOfRange):
            remap_plan(straight_plan(), RigidTransform.identity(), breakpoint_idx=99)


class TestLedger:
    def test_initial_identity(self):
        led = ObjectFrameLedger()
        assert led.stage == 0
        assert np.allclose(led.transform_at(0).as_matrix(), np.eye(4))

    def test_accumulates_left_composition(self, rng):
        led = ObjectFrameLedger()
        m1, m2 = random_rigid(rng), random_rigid(rng)
        led.update(m1)
        led.update(m2)
        assert np.allclose(led.transform_at(1).as_matrix(), m1.as_matrix())
        assert np.allclose(led.transform_at(2).as_matrix(),
                           compose(m2, m1).as_matrix(), atol=1e-9)

    def test_object_frame_points_stable_across_motion(self, rng):
        # the same physical point observed before and after motion maps to
        # one object-frame location
        led = ObjectFrameLedger()
        p_obj = np.array([10.0, -5.0, 2.0])
        m = random_rigid(rng)
        before = led.to_object_frame(0, p_obj)
        led.update(m)
        after = led.to_object_frame(1, m.apply(p_obj))
        assert np.allclose(before, after, atol=1e-9)

    def test_pose_to_object_frame(self, rng):
        led = ObjectFrameLedger()
        m = random_rigid(rng)
        led.update(m)
        pose = straight_plan().poses[3]
        moved = remap_plan(straight_plan(), m, 0)[0].poses[3]
        back = led.pose_to_object_frame(1, moved)
        assert np.allclose(back.position, pose.position, atol=1e-9)
        assert np.allclose(back.axes_matrix(), pose.axes_matrix(), atol=1e-9)

    def test_unknown_stage(self):
        with pytest.raises(UnknownStage):
            ObjectFrameLedger().transform_at(3)


class TestFiles:
    def test_events_round_trip(self, tmp_path, rng):
        events = [MotionEventRecord(1, random_rigid(rng), 2.5, Decision.RESUME),
                  MotionEventRecord(2, random_rigid(rng), 12.0, Decision.ABORT)]
        path = tmp_path / "events.jsonl"
        write_events(path, events)
        loaded = read_events(path)
        assert len(loaded) == 2
        for a, b in zip(events, loaded):
            assert a.stage == b.stage and a.decision is b.decision
            assert a.e_mc == pytest.approx(b.e_mc)
            assert np.allclose(a.transform.as_matrix(), b.transform.as_matrix())

    def test_marker_stream(self, tmp_path):
        import json

        ms = marker_set()
        line = json.dumps({"positions": {k: v.tolist() for k, v in ms.positions.items()},
                           "registration": list(ms.registration),
                           "validation": ms.validation})
        path = tmp_path / "markers.jsonl"
        path.write_text(line + "\n\n" + line + "\n")
        sets = read_marker_stream(path)
        assert len(sets) == 2
        assert not detect_motion(sets[0], sets[1])
