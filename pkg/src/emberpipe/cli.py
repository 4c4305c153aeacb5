"""Command line entry point.

Exit codes: 0 success, 1 bad input file, 2 scenario validation error, 3 mission abort.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import io as eio
from .geometry import PinholeCamera, Pose
from .holes import HoleParams, detect_holes
from .localization import RegistrationFailure, register_scan
from .metrics import (IncompleteReportError, bin_jumps, build_bbox_calibration, distance_csv, distance_sweep,
                      distance_table, eval_metrics)
from .mission import MissionAbort, MissionReport, run_mission
from .scenario import Scenario, ScenarioError, load_scenario
from .thermal import (DistanceCalibration, Extrinsics, NonConvergenceError, OutOfRangeError, calibrate_extrinsics,
                      detect_heat, estimate_distance_bbox)
from .tracking import TrackerState, check_timeout, estimate, ingest_with_reason

log = logging.getLogger("emberpipe")

EXIT_OK, EXIT_INPUT, EXIT_INVALID, EXIT_ABORT = 0, 1, 2, 3
RULE = "-" * 60


def _setup_logging():
    level = os.environ.get("EMBERPIPE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _fmt_pose(p: Pose) -> str:
    r, pi, y = (math.degrees(a) for a in p.rpy())
    x, yy, z = p.translation
    return f"{x:.4f} {yy:.4f} {z:.4f} {r:.3f} {pi:.3f} {y:.3f}"


# --- simulate ----------------------------------------------------------------------------

def _write_outputs(rep: MissionReport, scenario: Scenario, out: Path, plots: bool) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    written = []
    p = out / "report.ndjson"
    p.write_text(rep.to_ndjson(), encoding="utf-8")
    written.append(p)
    for robot in sorted(rep.final_states):
        p = out / f"trace_{robot}.txt"
        p.write_text("".join(line + "\n" for line in rep.trace_lines(robot)), encoding="utf-8")
        written.append(p)
    p = out / "run_info.json"
    p.write_text(json.dumps({"wall_time_s": round(rep.wall_time, 3)}, indent=2) + "\n", encoding="utf-8")
    written.append(p)
    if rep.complete:
        arena = scenario.build_arena()
        m = eval_metrics(rep, arena)
        p = out / "metrics.json"
        clean = {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in m.items()}
        p.write_text(json.dumps(clean, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        written.append(p)
        if rep.distances:
            p = out / "distance_comparison.csv"
            p.write_text(distance_csv(distance_table(rep.distances)), encoding="utf-8")
            written.append(p)
        if plots:
            from .plotting import plot_localization, plot_trajectory
            written.append(plot_trajectory(rep, arena, out / "trajectory.png"))
            if rep.localization:
                written.append(plot_localization(rep, out / "localization.png"))
    return written


def cmd_simulate(args) -> int:
    try:
        sc = load_scenario(args.scenario)
    except ScenarioError as exc:
        for e in exc.errors:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    out = Path(args.out)
    t0 = time.perf_counter()
    code = EXIT_OK
    try:
        rep = run_mission(sc, seed=args.seed)
    except MissionAbort as exc:
        rep = exc.report
        code = EXIT_ABORT
        print(f"mission aborted: {exc}", file=sys.stderr)
    rep.wall_time = time.perf_counter() - t0
    files = _write_outputs(rep, sc, out, plots=not args.no_plots)
    print(RULE)
    print(f"scenario {rep.scenario} seed {rep.seed} end_time {rep.end_time:.2f} complete {rep.complete}")
    for robot, state in sorted(rep.final_states.items()):
        print(f"robot {robot} final_state {state} water_remaining {rep.water_remaining[robot]:.4f}")
    for hole, v in sorted(rep.water_delivered.items()):
        print(f"hole {hole} water_delivered {v:.4f}")
    print(RULE)
    for f in files:
        print(f"wrote {f}")
    return code


# --- metrics -----------------------------------------------------------------------------

def cmd_metrics(args) -> int:
    rep = MissionReport.from_ndjson(Path(args.report).read_text(encoding="utf-8"))
    if args.scenario:
        sc = load_scenario(args.scenario)
    elif rep.scenario_doc is not None:
        sc = Scenario.model_validate(rep.scenario_doc)
    else:
        print("error: report carries no scenario; pass --scenario", file=sys.stderr)
        return EXIT_INPUT
    try:
        m = eval_metrics(rep, sc.build_arena())
    except IncompleteReportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ABORT
    print(RULE)
    for k in sorted(m):
        print(f"{k} {m[k]}")
    print(RULE)
    if rep.distances:
        text = distance_csv(distance_table(rep.distances))
        if args.csv:
            Path(args.csv).write_text(text, encoding="utf-8")
            print(f"wrote {args.csv}")
        else:
            sys.stdout.write(text)
    return EXIT_OK


# --- sweep -------------------------------------------------------------------------------

def cmd_sweep(args) -> int:
    calib = build_bbox_calibration()
    samples = distance_sweep(seeds=range(args.seeds), calib=calib)
    rows = distance_table(samples)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "distance_comparison.csv"
    csv_path.write_text(distance_csv(rows), encoding="utf-8")
    print(RULE)
    sys.stdout.write(distance_csv(rows))
    print(RULE)
    for lo, hi, j in bin_jumps(rows):
        print(f"jump {lo:.2f} {hi:.2f} {j:.4f}")
    print(RULE)
    print(f"wrote {csv_path}")
    if not args.no_plots:
        from .plotting import plot_distance_comparison
        print(f"wrote {plot_distance_comparison(samples, rows, out / 'distance_comparison.png')}")
    return EXIT_OK


# --- perception tools --------------------------------------------------------------------

def cmd_detect_holes(args) -> int:
    cloud = eio.read_cloud(args.cloud)
    params = HoleParams()
    if args.params:
        overrides = json.loads(Path(args.params).read_text(encoding="utf-8"))
        params = HoleParams(**{**params.__dict__, **overrides})
    pose = eio.parse_pose(args.sensor_pose) if args.sensor_pose else Pose()
    for h in detect_holes(cloud, pose, params):
        x, y, z = h.position
        nx, ny, nz = h.normal
        print(f"{x:.4f} {y:.4f} {z:.4f} {nx:.4f} {ny:.4f} {nz:.4f} {h.diameter:.4f} {h.score:.3f}")
    return EXIT_OK


def cmd_detect_heat(args) -> int:
    img = eio.read_pgm(args.image)
    cam = PinholeCamera.lepton(args.fx)
    calib = None
    if args.calibration:
        d = json.loads(Path(args.calibration).read_text(encoding="utf-8"))
        calib = DistanceCalibration(tuple(d["raw"]), tuple(d["corrected"]))
    for c in detect_heat(img, args.lower, args.upper, args.min_area, args.max_area):
        u, v = c.center_of_intensity
        u0, v0, u1, v1 = c.bbox
        line = (f"{u:.3f} {v:.3f} {c.area} {u0} {v0} {u1} {v1} "
                f"{c.min_intensity:.1f} {c.max_intensity:.1f} {c.mean_intensity:.1f}")
        if args.element_size:
            try:
                dist, _ = estimate_distance_bbox(c, cam, args.element_size, calib)
                line += f" {dist:.4f}"
            except OutOfRangeError:
                line += " nan"
        print(line)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    obs = eio.read_observations(args.obs)
    cam = PinholeCamera.lepton(args.fx)
    init = Extrinsics(eio.parse_pose(args.init)) if args.init else Extrinsics()
    try:
        ex = calibrate_extrinsics(obs, cam, init)
    except (NonConvergenceError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print(RULE)
    print(f"pose {_fmt_pose(ex.thermal_camera_in_lidar_frame)}")
    print(f"residual_px {ex.residual_px:.6f}")
    print("history " + " ".join(f"{r:.6f}" for r in ex.residual_history))
    print(RULE)
    return EXIT_OK


def cmd_localize(args) -> int:
    ref = eio.read_map(args.map)
    scan = eio.read_cloud(args.scan)
    init = eio.parse_pose(args.init)
    try:
        reg = register_scan(scan, ref, init)
    except RegistrationFailure as exc:
        print(f"error: registration failed: {exc}", file=sys.stderr)
        return EXIT_ABORT
    print(f"{_fmt_pose(reg.pose)} {reg.rms:.5f} {reg.inlier_fraction:.4f}")
    return EXIT_OK


def cmd_filter_replay(args) -> int:
    """Replay a detection stream; one line per detection: t kind outcome phase estimate."""
    events = eio.read_stream(args.stream)
    state = TrackerState()
    robot = np.zeros(3)
    for e in events:
        if e.kind == "robot":
            robot = e.position
            continue
        state = check_timeout(state, e.t)
        try:
            state, outcome = ingest_with_reason(state, e.detection(), robot, e.t)
        except ValueError as exc:
            outcome = f"error:{str(exc).replace(' ', '-')}"
        if state.phase == "tracking":
            p, n = estimate(state)
            est = " ".join(f"{v:.4f}" for v in (*p, *n))
        else:
            est = "- - - - - -"
        print(f"{e.t:.3f} {e.kind} {outcome} {state.phase} {len(state.history)} {est}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="emberpipe", description="Fire-fighting robot perception and autonomy toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a scenario in closed loop")
    p.add_argument("--scenario", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="out")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("metrics", help="aggregate metrics of a mission report")
    p.add_argument("--report", required=True)
    p.add_argument("--scenario", default=None)
    p.add_argument("--csv", default=None, help="write the distance comparison table here")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("sweep", help="bounding box versus LiDAR range comparison")
    p.add_argument("--out", default="out")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("detect-holes", help="hole detection on an ASCII point cloud")
    p.add_argument("--cloud", required=True)
    p.add_argument("--params", default=None, help="JSON object overriding detector parameters")
    p.add_argument("--sensor-pose", default=None, help="x,y,z[,yaw] or x,y,z,roll,pitch,yaw in degrees")
    p.set_defaults(func=cmd_detect_holes)

    p = sub.add_parser("detect-heat", help="heat contours in a 16-bit PGM thermal image")
    p.add_argument("--image", required=True)
    p.add_argument("--lower", type=float, default=450.0)
    p.add_argument("--upper", type=float, default=5000.0)
    p.add_argument("--min-area", type=int, default=1)
    p.add_argument("--max-area", type=int, default=10000)
    p.add_argument("--fx", type=float, default=115.0)
    p.add_argument("--element-size", type=float, default=None, help="append the bounding box range estimate")
    p.add_argument("--calibration", default=None, help="JSON with raw and corrected columns")
    p.set_defaults(func=cmd_detect_heat)

    p = sub.add_parser("calibrate", help="thermal camera to LiDAR extrinsics from observations")
    p.add_argument("--obs", required=True)
    p.add_argument("--fx", type=float, default=115.0)
    p.add_argument("--init", default=None, help="initial camera pose in the LiDAR frame")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("localize", help="register a scan against a reference map")
    p.add_argument("--map", required=True)
    p.add_argument("--scan", required=True)
    p.add_argument("--init", required=True)
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("filter-replay", help="replay a detection stream through the tracker")
    p.add_argument("--stream", required=True)
    p.set_defaults(func=cmd_filter_replay)
    return ap


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        for e in exc.errors:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (eio.FormatError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
