import json

import numpy as np
import pytest

from sweepkit.errors import AbortedSweep, PhantomNotVisible, UnknownParameter
from sweepkit.compound import Volume
from sweepkit.geom import RigidTransform, rot_z, translation
from sweepkit.imgproc import to_ycrcb
from sweepkit.motion import Decision
from sweepkit.pathplan import ProbePose
from sweepkit.simscene import (
    DEFAULT_INTRINSICS,
    SKIN_RGB,
    STROKE_RGB,
    MotionEventSpec,
    PhantomSpec,
    PipelineConfig,
    ScenarioScript,
    SurfaceModel,
    _point_polyline_distance,
    overhead_camera,
    render_scene,
    render_us_frame,
    run_compensation_scenario,
    run_scenario,
    run_sweep_scenario,
    v_path_spec,
)


class TestSurfaceModel:
    def test_flat(self):
        s = SurfaceModel(kind="flat", z0=3.0)
        assert np.all(s.height([0, 10], [0, -5]) == 3.0)
        assert np.allclose(s.normal(np.array([0.0]), np.array([0.0])), [[0, 0, 1]])

    def test_inclined(self):
        s = SurfaceModel(kind="inclined", tilt_deg=10.0)
        g = np.tan(np.radians(10.0))
        assert s.height(np.array([20.0]), np.array([0.0]))[0] == pytest.approx(20 * g)
        n = s.normal(np.array([5.0]), np.array([0.0]))[0]
        assert n[2] == pytest.approx(np.cos(np.radians(10)))
        assert n[0] == pytest.approx(-np.sin(np.radians(10)))

    def test_crease_tent(self):
        s = SurfaceModel(kind="crease", tilt_deg=15.0)
        g = np.tan(np.radians(15.0))
        assert s.height(np.array([-10.0]), np.array([0.0]))[0] == pytest.approx(-10 * g)
        assert s.height(np.array([10.0]), np.array([0.0]))[0] == pytest.approx(-10 * g)
        left = s.normal(np.array([-10.0]), np.array([0.0]))[0]
        right = s.normal(np.array([10.0]), np.array([0.0]))[0]
        assert left[0] == pytest.approx(-right[0])
        assert left[0] < 0 < right[0] or left[0] > 0 > right[0]

    def test_hemisphere_cap(self):
        s = SurfaceModel(kind="hemisphere", cap_radius=50.0)
        assert s.height(np.array([0.0]), np.array([0.0]))[0] == pytest.approx(50.0)
        assert s.height(np.array([80.0]), np.array([0.0]))[0] == pytest.approx(0.0)
        n = s.normal(np.array([30.0]), np.array([0.0]))[0]
        assert np.allclose(n, [30 / 50, 0, 40 / 50], atol=1e-9)

    def test_ray_intersection_matches_height(self):
        for kind in ("flat", "inclined", "crease", "hemisphere"):
            s = SurfaceModel(kind=kind, tilt_deg=10.0, cap_radius=60.0)
            origin = np.array([7.0, -3.0, 600.0])
            hit = s.intersect_rays(origin, np.array([[0.0, 0.0, -1.0]]))[0]
            assert hit[2] == pytest.approx(float(s.height(hit[0], hit[1])), abs=1e-6)
            assert np.allclose(hit[:2], origin[:2], atol=1e-9)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            SurfaceModel(kind="sinusoid").height(np.array([0.0]), np.array([0.0]))


class TestPhantomSpec:
    def test_polyline_dense_and_on_surface(self):
        spec = v_path_spec()
        path = spec.trajectory_polyline(spacing=0.5)
        seg = np.linalg.norm(np.diff(path, axis=0), axis=1)
        assert np.all(seg <= 0.51)
        assert np.allclose(path[:, 2],
                           spec.surface.height(path[:, 0], path[:, 1]), atol=1e-9)

    def test_end_markers_beyond_stroke(self):
        spec = PhantomSpec()
        ends = spec.end_marker_positions()
        assert np.allclose(ends[0][:2], [-85.0, 0.0])
        assert np.allclose(ends[1][:2], [85.0, 0.0])

    def test_five_motion_markers(self):
        m = PhantomSpec().motion_markers()
        assert m.shape == (5, 3)


def test_overhead_camera_geometry():
    cam = overhead_camera(600.0)
    # a point 600 mm along the optical axis lands at the world origin
    assert np.allclose(cam.apply([0.0, 0.0, 600.0]), [0, 0, 0], atol=1e-12)
    assert np.allclose(cam.translation, [0, 0, 600])


def test_point_polyline_distance_hand_values():
    line = np.array([[0.0, 0.0], [10.0, 0.0]])
    pts = np.array([[5.0, 3.0], [-4.0, 0.0], [13.0, 4.0]])
    d = _point_polyline_distance(pts, line)
    assert np.allclose(d, [3.0, 4.0, 5.0])


class TestRenderScene:
    def setup_scene(self, depth_sigma=0.0, seed=3, spec=None,
                    object_pose=RigidTransform.identity()):
        rng = np.random.default_rng(seed)
        return render_scene(spec or PhantomSpec(), overhead_camera(),
                            DEFAULT_INTRINSICS, depth_sigma, rng,
                            object_pose=object_pose)

    def test_depth_is_whole_mm(self):
        bundle, *_ = self.setup_scene()
        assert np.all(bundle.depth == np.round(bundle.depth))
        # flat phantom at z=0 under a 600 mm camera
        assert bundle.depth[240, 320] == 600.0

    def test_skin_flat_stroke_jittered(self):
        bundle, *_ = self.setup_scene()
        # far corner: skin, exactly the flat color
        assert tuple(bundle.rgb[5, 5]) == SKIN_RGB
        # stroke center: red-ish, within the jitter band of the stroke color
        center = bundle.rgb[240, 320].astype(int)
        assert np.all(np.abs(center - np.array(STROKE_RGB)) <= 10)

    def test_stroke_cr_above_skin(self):
        _, cr_skin, _ = to_ycrcb(np.array([[SKIN_RGB]], dtype=np.uint8))
        _, cr_stroke, _ = to_ycrcb(np.array([[STROKE_RGB]], dtype=np.uint8))
        assert int(cr_stroke[0, 0]) - int(cr_skin[0, 0]) > 40

    def test_marker_observations_project_correctly(self):
        bundle, end_obs, markers, gt = self.setup_scene()
        assert len(end_obs) == 2
        # left end marker at (-85, 0, 0): u = cx + fx * (-85) / 600
        u_expected = 320.0 + 600.0 * (-85.0) / 600.0
        assert end_obs[0].pixel[0] == pytest.approx(u_expected, abs=1e-6)
        assert end_obs[0].pixel[1] == pytest.approx(240.0, abs=1e-6)

    def test_marker_set_follows_object_pose(self):
        t = translation([12.0, -7.0, 0.0])
        _, _, moved, _ = self.setup_scene(object_pose=t)
        _, _, still, _ = self.setup_scene()
        for k in still.positions:
            assert np.allclose(moved.positions[k], still.positions[k] + [12, -7, 0])

    def test_deterministic_per_seed(self):
        a, *_ = self.setup_scene(depth_sigma=2.0, seed=11)
        b, *_ = self.setup_scene(depth_sigma=2.0, seed=11)
        c, *_ = self.setup_scene(depth_sigma=2.0, seed=12)
        assert np.array_equal(a.rgb, b.rgb) and np.array_equal(a.depth, b.depth)
        assert not np.array_equal(a.depth, c.depth)

    def test_stroke_out_of_view(self):
        spec = PhantomSpec(trajectory_xy=((2000.0, 0.0), (2100.0, 0.0)))
        with pytest.raises(PhantomNotVisible):
            self.setup_scene(spec=spec)


class TestRenderUsFrame:
    def test_lumen_wall_speckle_bands(self):
        # probe just above the tube, imaging straight down (+depth = -z)
        pose = ProbePose((0.0, 0.0, 0.0), (0, 1, 0), (1, 0, 0), (0, 0, -1))
        fr = render_us_frame(PhantomSpec(), pose, np.random.default_rng(0))
        # tube axis along x at (y=0, z=-15): depth rows at 0.5 mm spacing
        col = fr.pixels[:, 32].astype(int)  # center column, y ~ 0.25 mm
        assert np.all(col[22:38] == 20)     # lumen: |z + 15| < 5 -> rows 20..40
        assert col[18] == 220 and col[42] == 220  # wall ring
        assert 40 <= col[5] <= 160          # speckle above the tube

    def test_stage_carried(self):
        pose = ProbePose((0.0, 0.0, 0.0), (0, 1, 0), (1, 0, 0), (0, 0, -1))
        fr = render_us_frame(PhantomSpec(), pose, np.random.default_rng(0), stage=3)
        assert fr.stage == 3


class TestMotionEventSpec:
    def test_rotation_leaves_center_fixed(self):
        ev = MotionEventSpec.rotation_event(5, 30.0, center=(10.0, -4.0, 0.0))
        assert np.allclose(ev.transform.apply([10.0, -4.0, 0.0]), [10, -4, 0], atol=1e-9)

    def test_json_round_trip(self):
        ev = MotionEventSpec.translation_event(7, [30.0, 0, 0])
        back = MotionEventSpec.from_json(json.loads(json.dumps(ev.to_json())))
        assert back.at_step == 7
        assert np.allclose(back.transform.as_matrix(), ev.transform.as_matrix())


class TestPipelineConfig:
    def test_extraction_override_with_alias(self):
        cfg = PipelineConfig().with_overrides({"extraction.crTolerance": "30"})
        assert cfg.extraction.cr_tolerance == 30

    def test_top_level_override(self):
        cfg = PipelineConfig().with_overrides({"voxel_size": "0.5", "step_mm": "1"})
        assert cfg.voxel_size == 0.5 and cfg.step_mm == 1.0

    def test_unknown_parameter(self):
        with pytest.raises(UnknownParameter):
            PipelineConfig().with_overrides({"warp_drive": "9"})
        with pytest.raises(UnknownParameter):
            PipelineConfig().with_overrides({"extraction.flux": "1"})


class TestScenarioScript:
    def test_file_round_trip(self, tmp_path):
        script = ScenarioScript(kind="sweep", seed=42, depth_sigma=2.0, marker_sigma=1.5,
                                motion_events=(MotionEventSpec.translation_event(10, [50, 0, 0]),),
                                compensate=False)
        path = tmp_path / "scenario.json"
        script.save(path)
        back = ScenarioScript.load(path)
        assert back.kind == "sweep" and back.seed == 42
        assert back.depth_sigma == 2.0 and back.marker_sigma == 1.5
        assert back.compensate is False
        assert len(back.motion_events) == 1 and back.motion_events[0].at_step == 10

    def test_defaults_from_minimal_json(self):
        s = ScenarioScript.from_json({"seed": 1})
        assert s.kind == "sweep" and s.compensate and s.motion_events == ()


@pytest.fixture(scope="module")
def flat_run():
    return run_sweep_scenario(ScenarioScript(seed=7))


@pytest.fixture(scope="module")
def event_run():
    script = ScenarioScript(seed=7, motion_events=(
        MotionEventSpec.translation_event(20, [30.0, 10.0, 0.0]),))
    return run_sweep_scenario(script)


class TestSweepScenario:
    def test_noiseless_path_accuracy(self, flat_run):
        m = flat_run.metrics
        assert m["steps"] > 50
        assert m["motionEvents"] == 0
        assert m["pathErrorMeanMm"] < 0.5
        # the stroke's rounded end caps extend half a stroke width past the
        # ground-truth polyline, so the last step may sit ~2 mm off it
        assert m["followErrorMaxMm"] < 3.0
        assert np.median(m["followErrorPerStepMm"]) < 0.5

    def test_noiseless_centerline_straight(self, flat_run):
        assert flat_run.metrics["centerlineMaxJumpMm"] < 2.0
        assert flat_run.metrics["centerlineSlices"] > 20

    def test_event_compensated(self, event_run):
        m = event_run.metrics
        assert m["motionEvents"] == 1
        assert m["eMcMm"][0] < 1e-6  # noiseless markers
        assert event_run.events[0].decision is Decision.RESUME
        assert m["centerlineMaxJumpMm"] < 2.0
        # ledger advanced and later steps carry the new stage
        assert event_run.ledger.stage == 1
        assert event_run.stages[0] == 0 and event_run.stages[-1] == 1

    def test_abort_on_bad_compensation(self):
        script = ScenarioScript(seed=7, marker_sigma=60.0, motion_events=(
            MotionEventSpec.translation_event(10, [40.0, 0.0, 0.0]),))
        with pytest.raises(AbortedSweep) as err:
            run_sweep_scenario(script)
        assert err.value.e_mc >= 10.0

    def test_dump_layout(self, flat_run, tmp_path):
        out = tmp_path / "run"
        flat_run.dump(out)
        assert (out / "poses.jsonl").exists()
        assert (out / "events.jsonl").exists()
        assert (out / "metrics.json").exists()
        assert len(list((out / "frames").glob("*.png"))) == flat_run.metrics["steps"]
        vol = Volume.load(out / "volume.raw", out / "volume.json")
        assert vol.shape == flat_run.volume.shape
        with open(out / "metrics.json") as f:
            metrics = json.load(f)
        assert metrics["steps"] == flat_run.metrics["steps"]
        # poses carry their ledger stage
        with open(out / "poses.jsonl") as f:
            first = json.loads(f.readline())
        assert {"position", "tcpX", "tcpY", "tcpZ", "stage"} <= set(first)


class TestCompensationScenario:
    def test_noiseless_residual_zero(self):
        script = ScenarioScript(kind="compensation", seed=5, marker_sigma=0.0,
                                magnitudes=(50.0, 200.0), trials_per_magnitude=5)
        res = run_compensation_scenario(script)
        assert res["medianMm"] < 1e-6
        assert res["fractionBelow4mm"] == 1.0

    def test_noisy_statistics_shape(self):
        script = ScenarioScript(kind="compensation", seed=5, marker_sigma=1.5,
                                magnitudes=(50.0, 100.0), trials_per_magnitude=8)
        res = run_compensation_scenario(script)
        assert set(res["magnitudes"]) == {"50.0", "100.0"}
        assert len(res["all"]) == 16
        assert res["medianMm"] > 0

    def test_rotation_mode(self):
        script = ScenarioScript(kind="compensation", seed=5, motion_type="rotation",
                                magnitudes=(10.0,), trials_per_magnitude=4)
        res = run_compensation_scenario(script)
        assert res["kind"] == "rotation"
        assert res["medianMm"] < 1e-6

    def test_deterministic(self):
        script = ScenarioScript(kind="compensation", seed=9, marker_sigma=1.5,
                                magnitudes=(100.0,), trials_per_magnitude=6)
        assert run_compensation_scenario(script) == run_compensation_scenario(script)

    def test_dispatcher(self):
        script = ScenarioScript(kind="compensation", seed=5, magnitudes=(50.0,),
                                trials_per_magnitude=2)
        assert isinstance(run_scenario(script), dict)
