import json
import math

import numpy as np
import pytest

from conftest import scenario_doc

from emberpipe import io as eio
from emberpipe.arena import ArenaModel, Hole, LidarConfig, ThermalParams, Wall, render_lidar, render_thermal
from emberpipe.cli import EXIT_ABORT, EXIT_INPUT, EXIT_INVALID, EXIT_OK, RULE, main
from emberpipe.geometry import PinholeCamera, Pose, project
from emberpipe.localization import map_from_arena
from emberpipe.thermal import CalibrationObservation

OPTICAL = Pose(np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]]))


def hole_scene():
    wall = Wall("w", (2.0, -2.0, 0.0), (0.0, 0.0, 3.0), (0.0, 4.0, 0.0))
    hole = Hole("h", (2.0, 0.0, 1.5), (-1.0, 0.0, 0.0), 0.15, 0.10, heated=True)
    return ArenaModel((wall,), (hole,), floor=True, bounds_min=(-5, -5, -1), bounds_max=(5, 5, 5))


def test_invalid_scenario_exit_code(tmp_path, capsys):
    doc = scenario_doc("facade")
    doc["robots"][0]["route"][0]["xyz"] = [-40.0, 1.5, 2.5]
    (tmp_path / "bad.json").write_text(json.dumps(doc))
    assert main(["simulate", "--scenario", str(tmp_path / "bad.json"), "--out", str(tmp_path / "o")]) == EXIT_INVALID
    assert "obs_south" in capsys.readouterr().err
    assert main(["simulate", "--scenario", str(tmp_path / "missing.json")]) == EXIT_INPUT


def test_simulate_writes_outputs(tmp_path, capsys):
    doc = scenario_doc("facade")
    doc["duration"] = 3.0
    (tmp_path / "short.json").write_text(json.dumps(doc))
    out = tmp_path / "o"
    assert main(["simulate", "--scenario", str(tmp_path / "short.json"), "--out", str(out), "--seed", "3"]) == EXIT_OK
    text = capsys.readouterr().out
    assert text.count(RULE) >= 2 and "seed 3" in text
    for f in ("report.ndjson", "trace_uav.txt", "run_info.json", "metrics.json", "trajectory.png"):
        assert (out / f).exists()
    assert (out / "trajectory.png").read_bytes()[:4] == b"\x89PNG"
    assert main(["metrics", "--report", str(out / "report.ndjson"), "--csv", str(tmp_path / "d.csv")]) == EXIT_OK
    assert "localization_rms" in capsys.readouterr().out


def test_metrics_on_partial_report(tmp_path, capsys):
    (tmp_path / "r.ndjson").write_text(
        '{"type":"header","scenario":"facade","seed":1,"format":1,"scenario_doc":' + json.dumps(scenario_doc("facade"))
        + '}\n{"type":"summary","water_delivered":{},"water_missed":{},"water_initial":{},"water_remaining":{},'
        '"final_states":{},"end_time":0.5,"complete":false,"error":"boom"}\n')
    assert main(["metrics", "--report", str(tmp_path / "r.ndjson")]) == EXIT_ABORT


def test_detect_holes_cli(tmp_path, capsys):
    pose = Pose.from_xyz_yaw([0.0, 0.0, 1.5], 0.0)
    cfg = LidarConfig.os1_64(hfov_deg=(-45.0, 45.0), horizontal_steps=256)
    cloud = render_lidar(hole_scene(), pose, cfg, 0)
    eio.write_cloud(tmp_path / "scan.txt", cloud)
    assert main(["detect-holes", "--cloud", str(tmp_path / "scan.txt"), "--sensor-pose", "0,0,1.5"]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 1
    x, y, z = (float(v) for v in lines[0].split()[:3])
    assert math.dist((x, y, z), (2.0, 0.0, 1.5)) < 0.03
    (tmp_path / "broken.txt").write_text("1 2\n")
    assert main(["detect-holes", "--cloud", str(tmp_path / "broken.txt")]) == EXIT_INPUT


def test_detect_heat_cli(tmp_path, capsys):
    cam = PinholeCamera.lepton()
    pose = Pose.from_xyz_yaw([0.5, 0.0, 1.5], 0.0) @ OPTICAL
    img = render_thermal(hole_scene(), pose, cam, np.random.default_rng(0), ThermalParams())
    eio.write_pgm(tmp_path / "img.pgm", img)
    assert main(["detect-heat", "--image", str(tmp_path / "img.pgm"), "--element-size", "0.15"]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 1
    u, v = (float(x) for x in lines[0].split()[:2])
    assert abs(u - cam.cx) < 1.5 and abs(v - cam.cy) < 1.5
    assert float(lines[0].split()[-1]) == pytest.approx(1.5, abs=0.3)


def test_calibrate_cli(tmp_path, capsys):
    cam = PinholeCamera.lepton()
    truth = Pose.from_xyz_rpy([0.03, -0.02, 0.05], 0.01, -0.02, 0.015) @ OPTICAL
    rng = np.random.default_rng(5)
    obs = []
    while len(obs) < 15:
        p = np.array([rng.uniform(1.0, 3.0), rng.uniform(-1, 1), rng.uniform(-0.7, 0.7)])
        uv = project(cam, truth.inverse().apply(p))
        if uv is not None and 0 <= uv[0] < cam.width and 0 <= uv[1] < cam.height:
            obs.append(CalibrationObservation(p, (float(uv[0]), float(uv[1]))))
    eio.write_observations(tmp_path / "obs.txt", obs)
    assert main(["calibrate", "--obs", str(tmp_path / "obs.txt"), "--init", "0,0,0"]) == EXIT_OK
    out = capsys.readouterr().out
    assert float(out.split("residual_px ")[1].split()[0]) < 1e-3
    eio.write_observations(tmp_path / "few.txt", obs[:2])
    assert main(["calibrate", "--obs", str(tmp_path / "few.txt")]) == EXIT_INPUT


def test_localize_cli(tmp_path, capsys):
    walls = (Wall("a", (0, -4, 0), (0, 8, 0), (0, 0, 3)), Wall("b", (0, 4, 0), (-6, 0, 0), (0, 0, 3)),
             Wall("c", (-6, -4, 0), (6, 0, 0), (0, 0, 3)), Wall("d", (-3, -1, 0), (0, 0, 1.5), (0, 1, 0)))
    arena = ArenaModel(walls, floor=True, bounds_min=(-8, -6, -1), bounds_max=(2, 6, 4))
    eio.write_map(tmp_path / "map.txt", map_from_arena(arena, "indoor", 0.1))
    true = Pose.from_xyz_yaw([-4.0, 0.5, 1.0], 0.2)
    eio.write_cloud(tmp_path / "scan.txt", render_lidar(arena, true, LidarConfig.os1_64(horizontal_steps=256), 1))
    assert main(["localize", "--map", str(tmp_path / "map.txt"), "--scan", str(tmp_path / "scan.txt"),
                 "--init=-3.9,0.4,1.0,14"]) == EXIT_OK
    vals = [float(v) for v in capsys.readouterr().out.split()]
    assert math.dist(vals[:3], true.translation) < 0.05


def test_filter_replay_cli(tmp_path, capsys):
    ev = [eio.StreamEvent(0.0, "robot", np.array([-2.0, 0.0, 2.5]))]
    for k in range(12):
        ev.append(eio.StreamEvent(0.1 * k, "thermal", np.array([0.0, 0.0, 2.5]), np.array([-1.0, 0.0, 0.0])))
    eio.write_stream(tmp_path / "s.txt", ev)
    assert main(["filter-replay", "--stream", str(tmp_path / "s.txt")]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 12
    assert lines[0].split()[2] == "buffered" and lines[-1].split()[3] == "tracking"


def test_sweep_cli(tmp_path, capsys):
    assert main(["sweep", "--seeds", "1", "--out", str(tmp_path), "--no-plots"]) == EXIT_OK
    text = (tmp_path / "distance_comparison.csv").read_text()
    assert text.startswith("range_m,n,bbox_mae_m")
    assert "jump" in capsys.readouterr().out
