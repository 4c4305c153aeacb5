import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emberpipe.arena import (ArenaModel, GnssParams, Hole, JetModel, LidarConfig, MotionLimits, RobotState, ThermalParams,
                             VelocityCommand, Wall, WaypointCommand, gnss_measure, level_exit_speed,
                             raycast_lidar, render_lidar, render_thermal, simulate_jet, step_dynamics)
from emberpipe.geometry import Pose
from emberpipe.geometry import PinholeCamera, rot_z
from emberpipe.thermal import detect_heat

OPTICAL = Pose(np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]]))


def wall_x(x=2.0, holes=(), material="opaque"):
    # 4 m x 4 m wall in the plane x = const, normal facing the origin (-x)
    w = Wall("w", (x, -2.0, -2.0), (0.0, 0.0, 4.0), (0.0, 4.0, 0.0), material)
    return ArenaModel((w,), tuple(holes), floor=False)


def narrow_lidar(**kw):
    return LidarConfig(rings=9, horizontal_steps=41, vfov_deg=(-10, 10), hfov_deg=(-20, 20), **kw)


def test_wall_ranges_exact_without_noise():
    arena = wall_x(2.0)
    cloud = render_lidar(arena, Pose(), narrow_lidar(range_noise=0.0))
    d = cloud.points / np.linalg.norm(cloud.points, axis=1, keepdims=True)
    # oracle: ray-plane distance 2 / cos(angle to the normal)
    expected = 2.0 / d[:, 0]
    np.testing.assert_allclose(np.linalg.norm(cloud.points, axis=1), expected, atol=1e-9)
    assert len(cloud) == 9 * 41


def test_hole_rays_reach_the_recess():
    hole = Hole("h", (2.0, 0.0, 0.0), (-1.0, 0.0, 0.0), 0.15, 0.10)
    arena = wall_x(2.0, [hole])
    dirs = np.array([[1.0, 0.0, 0.0], [1.0, 0.02, 0.0], [1.0, 0.0, -0.02], [1.0, 0.2, 0.0]])
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    t = raycast_lidar(arena, np.zeros(3), dirs)
    # oracle: the first three rays cross the disk x=2, r<0.075 and end on the plate at x=2.1
    for k in range(3):
        assert abs(t[k] * dirs[k, 0] - 2.10) < 1e-9
    assert abs(t[3] * dirs[3, 0] - 2.0) < 1e-9


def test_acrylic_gives_no_return():
    arena = wall_x(2.0, material="acrylic")
    assert len(render_lidar(arena, Pose(), narrow_lidar())) == 0


def test_render_lidar_is_reproducible():
    arena = wall_x(3.0, [Hole("h", (3.0, 0.3, 0.2), (-1.0, 0.0, 0.0))])
    a = render_lidar(arena, Pose(), narrow_lidar(), 42)
    b = render_lidar(arena, Pose(), narrow_lidar(), 42)
    assert a.points.tobytes() == b.points.tobytes()


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1), st.floats(1.0, 6.0), st.floats(-0.5, 0.5))
def test_lidar_points_within_range_and_on_surfaces(seed, dist, yaw):
    arena = wall_x(dist, [Hole("h", (dist, 0.0, 0.0), (-1.0, 0.0, 0.0))])
    # enough rays that the 3-sigma fraction (99.73% expected) is tight
    cfg = LidarConfig(rings=64, horizontal_steps=200, vfov_deg=(-10, 10), hfov_deg=(-20, 20), max_range=8.0)
    pose = Pose(rot_z(yaw))
    cloud = render_lidar(arena, pose, cfg, seed)
    r = np.linalg.norm(cloud.points, axis=1)
    assert np.all(r <= cfg.max_range)
    dirs = pose.apply_vector(cloud.points / r[:, None])
    t = raycast_lidar(arena, np.zeros(3), dirs)
    assert np.mean(np.abs(r - t) <= 3 * cfg.range_noise) >= 0.994


def _hot_region(img, lower=450.0):
    return detect_heat(img, lower, 1e6)


def test_thermal_blob_size():
    hole = Hole("h", (2.0, 0.0, 0.0), (-1.0, 0.0, 0.0), 0.15, 0.10, heated=True)
    arena = wall_x(2.0, [hole])
    cam = PinholeCamera.lepton(115.0)
    img = render_thermal(arena, OPTICAL, cam, 0)
    c = _hot_region(img)[0]
    # oracle: fx * 0.15 / 2 px across, at the principal point
    expected = 115.0 * 0.15 / 2.0
    assert abs(2 * math.sqrt(c.area / math.pi) - expected) <= 1.0
    assert abs(c.bbox_width - expected) <= 1.0
    assert abs(c.center_of_intensity[0] - cam.cx) <= 0.5 and abs(c.center_of_intensity[1] - cam.cy) <= 0.5


def test_thermal_no_heated_holes_is_ambient():
    arena = wall_x(2.0, [Hole("h", (2.0, 0.0, 0.0), (-1.0, 0.0, 0.0))])

    img = render_thermal(arena, OPTICAL, PinholeCamera.lepton(), 0, ThermalParams(noise=0.0))
    assert img.intensities.max() == 300.0


def test_acrylic_fire_off_axis_is_invisible():
    hole = Hole("f", (2.0, 0.0, 0.0), (-1.0, 0.0, 0.0), heated=True, enclosure="acrylic")
    arena = wall_x(2.0, [hole], material="acrylic")
    cam = PinholeCamera.lepton()
    ang = math.radians(60)
    pos = hole.center + 2.0 * np.array([-math.cos(ang), math.sin(ang), 0.0])
    pose = Pose.from_xyz_yaw(pos, -ang) @ OPTICAL
    img = render_thermal(arena, pose, cam, 1)
    assert _hot_region(img) == []
    # head-on the same fire is visible
    head_on = Pose.from_xyz_yaw(hole.center + np.array([-2.0, 0, 0]), 0.0) @ OPTICAL
    assert _hot_region(render_thermal(arena, head_on, cam, 1))


def test_dynamics_zero_command():
    s = RobotState(Pose.from_xyz_yaw([1, 2, 3], 0.4))
    s2 = step_dynamics(s, VelocityCommand(), 0.01)
    assert s2.true_pose.allclose(s.true_pose, atol=1e-15)


def test_dynamics_straight_line():
    s = RobotState(Pose(), velocity=(1.0, 0.0, 0.0))
    for _ in range(200):
        s = step_dynamics(s, VelocityCommand((1.0, 0.0, 0.0)), 0.01)
    np.testing.assert_allclose(s.true_pose.translation, [2.0, 0, 0], atol=1e-6)


def test_waypoint_arrival_bound():
    s = RobotState(Pose())
    lim = MotionLimits(max_speed=2.0)
    t = 0.0
    while np.linalg.norm(s.true_pose.translation - [10, 0, 0]) > 1e-3 and t < 60:
        s = step_dynamics(s, WaypointCommand((10.0, 0.0, 0.0)), 0.01, lim)
        t += 0.01
    assert t >= 5.0


@given(st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(-1, 1)),
                min_size=1, max_size=30))
def test_ugv_stays_on_ground(cmds):
    s = RobotState(Pose.from_xyz_yaw([0, 0, 0.0], 0.0), kind="ugv")
    for vx, vy, vz, wz in cmds:
        s = step_dynamics(s, VelocityCommand((vx, vy, vz), wz), 0.05)
        assert abs(s.true_pose.translation[2]) < 1e-9
        assert abs(s.true_pose.rotation[2, 2] - 1) < 1e-9


def facade_with_hole():
    hole = Hole("h", (0.0, 0.0, 2.0), (-1.0, 0.0, 0.0), 0.15, 0.10)
    w = Wall("w", (0.0, -3.0, 0.0), (0.0, 0.0, 4.0), (0.0, 6.0, 0.0))
    return ArenaModel((w,), (hole,), floor=True)


def test_jet_level_shot_enters_hole():
    speed = level_exit_speed(2.1, 0.35)
    # oracle: 2.1 * sqrt(9.81 / 0.7)
    assert speed == pytest.approx(2.1 * math.sqrt(9.81 / 0.7))
    assert speed == pytest.approx(7.86, abs=0.01)
    jet = JetModel(speed, Pose.from_xyz_yaw([-2.1, 0.0, 2.35], 0.0), flow_rate=0.1)
    res = simulate_jet(jet, facade_with_hole(), 10.0)
    assert res.hole_hit == "h"
    assert res.water_delivered == pytest.approx(1.0)
    np.testing.assert_allclose(res.hit_point, [0, 0, 2.0], atol=0.01)


def test_jet_miss_left():
    speed = level_exit_speed(2.1, 0.35)
    jet = JetModel(speed, Pose.from_xyz_yaw([-2.1, 0.5, 2.35], 0.0))
    res = simulate_jet(jet, facade_with_hole(), 10.0)
    assert res.hole_hit is None and res.water_delivered == 0.0


@given(st.floats(1.0, 15.0), st.floats(-1.0, 1.0), st.floats(-0.5, 0.5), st.floats(0.0, 20.0), st.floats(0.01, 1.0))
def test_jet_water_bounded_by_flow(speed, y, pitch, duration, flow):
    jet = JetModel(speed, Pose.from_xyz_rpy([-2.0, y, 2.3], 0.0, pitch, 0.0), flow_rate=flow)
    res = simulate_jet(jet, facade_with_hole(), duration)
    assert res.water_delivered <= flow * duration


def test_gnss_zero_sigma_is_truth():
    p = Pose.from_xyz_yaw([1, 2, 3], 0.3)
    m, _ = gnss_measure(p, None, 0, params=GnssParams(sigma=0.0))
    assert m.allclose(p, atol=0)


@pytest.mark.parametrize("near,factor", [(False, 1.0), (True, 5.0)])
def test_gnss_random_walk_variance(near, factor):
    # oracle: a random walk with sigma 0.05 m/sqrt(s) has per-axis std 0.05*sqrt(100) = 0.5 m after 100 s
    params = GnssParams(sigma=0.05, dt=1.0, bound=1e9)
    finals = []
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        drift = None
        for _ in range(100):
            _, drift = gnss_measure(Pose(), drift, rng, near, params)
        finals.append(drift)
    finals = np.array(finals)
    per_axis = float(np.sqrt(np.mean(finals ** 2)))
    assert abs(per_axis - 0.5 * factor) <= 0.2 * 0.5 * factor
