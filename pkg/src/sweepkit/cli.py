"""Command-line front end: calibrate, extract, plan, run, report."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .errors import NoNormals, SweepKitError
from .geom import FrameGraph, hand_eye_calibrate, load_calibration_pairs, solve_rigid_alignment
from .imgproc import (
    ExtractionParams,
    ImageBundle,
    MarkerObservation,
    extract_roi,
    extract_trajectory,
    filter_seeds,
    seed_points,
)
from .pathplan import detect_key_points, optimize_orientations, project_path
from .simscene import PipelineConfig, ScenarioScript, run_scenario
from .surface import load_cloud


def _seed_from_env(args_seed):
    if args_seed is not None:
        return args_seed
    env = os.environ.get("SWEEPKIT_SEED")
    return int(env) if env else None


def _parse_overrides(pairs):
    out = {}
    for item in pairs or []:
        key, _, value = item.partition("=")
        if not _:
            raise SweepKitError(f"override {item!r} is not of the form key=value")
        out[key] = value
    return out


def _load_image(path) -> np.ndarray:
    from PIL import Image

    return np.asarray(Image.open(path))


def cmd_calibrate(args) -> int:
    pairs = load_calibration_pairs(args.pairs)
    _, rmse = solve_rigid_alignment(pairs)
    _, graph = hand_eye_calibrate(pairs)
    with open(args.out, "w") as f:
        json.dump(graph.to_json(), f, indent=2)
    print(f"rmse: {rmse:.6g} mm")
    print(f"frame graph written to {args.out}")
    return 0


def cmd_extract(args) -> int:
    from PIL import Image

    rgb = _load_image(args.image)[..., :3]
    depth = _load_image(args.depth).astype(np.float64)
    with open(args.markers) as f:
        marker_data = json.load(f)
    markers = [MarkerObservation(m["id"], m["pixel"], m.get("position", (0, 0, 0)))
               for m in marker_data]
    if len(markers) < 2:
        raise SweepKitError("markers file must contain the two end markers")
    from .geom import CameraIntrinsics

    h, w = rgb.shape[:2]
    k = CameraIntrinsics(600.0, 600.0, w / 2, h / 2, w, h)
    bundle = ImageBundle.from_rgb_depth(rgb, depth, k)
    params = PipelineConfig().with_overrides(_parse_overrides(args.set)).extraction
    roi = extract_roi(bundle, markers[0], markers[1], params)
    seeds = filter_seeds(roi, seed_points(roi, params), params)
    traj = extract_trajectory(roi, seeds, params)
    traj.save(args.out)
    from .imgproc import column_coverage

    print(f"extracted {len(traj)} pixels, chord coverage {column_coverage(traj, roi):.1%}")

    overlay = rgb.copy()
    pts = traj.points
    ok = (pts[:, 0] >= 0) & (pts[:, 0] < w) & (pts[:, 1] >= 0) & (pts[:, 1] < h)
    overlay[pts[ok, 1], pts[ok, 0]] = (0, 255, 0)
    Image.fromarray(overlay).save(args.overlay)
    return 0


def cmd_plan(args) -> int:
    points, normals = load_cloud(args.trajectory)
    if normals is None:
        raise NoNormals("trajectory file carries no [nx, ny, nz] columns")
    cfg = PipelineConfig().with_overrides(_parse_overrides(args.set))
    frame = project_path(points)
    keypoints = detect_key_points(frame, cfg.keypoint_threshold)
    plan = optimize_orientations(points, keypoints, normals, cfg.merge_threshold)
    plan.save(args.out)
    print(f"{len(plan.segments)} segments, {len(plan.poses)} poses written to {args.out}")
    return 0


def cmd_run(args) -> int:
    script = ScenarioScript.load(args.scenario)
    seed = _seed_from_env(args.seed)
    if seed is not None:
        from dataclasses import replace

        script = replace(script, seed=seed)
    cfg = PipelineConfig().with_overrides(_parse_overrides(args.set))
    result = run_scenario(script, config=cfg)
    os.makedirs(args.out, exist_ok=True)
    if isinstance(result, dict):  # compensation batch
        with open(os.path.join(args.out, "metrics.json"), "w") as f:
            json.dump(result, f, sort_keys=True, indent=2)
        print(f"median e_mc {result['medianMm']:.2f} mm, "
              f"{result['fractionBelow4mm']:.0%} below 4 mm")
    else:
        result.dump(args.out)
        print(f"{result.metrics['steps']} steps, {result.metrics['motionEvents']} motion events, "
              f"centerline max jump {result.metrics['centerlineMaxJumpMm']:.2f} mm")
    return 0


def _load_metrics(run_dir) -> dict:
    path = os.path.join(run_dir, "metrics.json")
    if not os.path.exists(path):
        raise SweepKitError(f"no metrics.json in {run_dir}")
    with open(path) as f:
        return json.load(f)


def cmd_report(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    all_metrics = [(d, _load_metrics(d)) for d in args.runs]
    comp = [(d, m) for d, m in all_metrics if "magnitudes" in m]
    sweeps = [(d, m) for d, m in all_metrics if "magnitudes" not in m]

    for d, m in comp:
        print(f"\ncompensation run {d} ({m['kind']}):")
        print(f"  {'magnitude':>10}  {'median e_mc (mm)':>18}")
        for mag, errs in m["magnitudes"].items():
            print(f"  {mag:>10}  {np.median(errs):>18.2f}")
        print(f"  overall: {m['meanMm']:.2f} +/- {m['stdMm']:.2f} mm, "
              f"{m['fractionBelow4mm']:.0%} below 4 mm")
        fig, ax = plt.subplots()
        mags = list(m["magnitudes"])
        ax.boxplot([m["magnitudes"][k] for k in mags], tick_labels=mags)
        ax.axhline(4.0, color="r", linestyle="--", linewidth=1)
        ax.set_xlabel(f"{m['kind']} magnitude")
        ax.set_ylabel("e_mc (mm)")
        fig.savefig(os.path.join(d, "compensation_error.png"), dpi=120)
        plt.close(fig)

    if len(comp) == 2:
        from scipy import stats

        a = np.asarray(comp[0][1]["all"])
        b = np.asarray(comp[1][1]["all"])
        _, p = stats.ttest_ind(a, b, equal_var=False)
        print(f"\nt-test between the two sets: p = {p:.3f}")

    for d, m in sweeps:
        print(f"\nsweep run {d}:")
        print(f"  steps: {m['steps']}, motion events: {m['motionEvents']}")
        print(f"  follow error: {m['followErrorMeanMm']:.2f} mm mean, "
              f"{m['followErrorMaxMm']:.2f} mm max")
        print(f"  centerline max jump: {m['centerlineMaxJumpMm']:.2f} mm "
              f"over {m['centerlineSlices']} slices")
        if m.get("eMcMm"):
            print(f"  e_mc per event: {', '.join(f'{e:.2f}' for e in m['eMcMm'])} mm")
        fig, ax = plt.subplots()
        ax.plot(m["followErrorPerStepMm"])
        ax.set_xlabel("sweep step")
        ax.set_ylabel("trajectory error (mm)")
        fig.savefig(os.path.join(d, "trajectory_error.png"), dpi=120)
        plt.close(fig)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sweepkit",
                                     description="Motion-aware robotic ultrasound sweep pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="hand-eye calibration from paired points")
    p.add_argument("pairs", help="JSON array of {camera: [x,y,z], base: [x,y,z]} in mm")
    p.add_argument("-o", "--out", default="frame_graph.json")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("extract", help="trajectory extraction from RGB-D images")
    p.add_argument("--image", required=True, help="8-bit RGB PNG")
    p.add_argument("--depth", required=True, help="16-bit PNG depth in mm")
    p.add_argument("--markers", required=True, help="JSON list of end-marker observations")
    p.add_argument("-o", "--out", default="trajectory.json")
    p.add_argument("--overlay", default="overlay.png")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="parameter override, e.g. extraction.crTolerance=25")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("plan", help="probe-pose planning from a 3D trajectory")
    p.add_argument("trajectory", help="JSON rows of [x,y,z,nx,ny,nz] in mm")
    p.add_argument("-o", "--out", default="sweep_plan.json")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("run", help="execute a scenario script")
    p.add_argument("scenario", help="scenario JSON file")
    p.add_argument("-o", "--out", required=True, help="output run directory")
    p.add_argument("--seed", type=int, default=None,
                   help="override the script seed (SWEEPKIT_SEED also honored)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="tables and plots from run directories")
    p.add_argument("runs", nargs="+", help="one or more run directories")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SweepKitError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
