"""Closed-loop mission execution.

One fixed-step loop drives every robot. Within a tick the order is always
dynamics, sensors, perception, filter, state machine, actuation. Sensors fire
on their own rates derived from the tick counter, never from wall-clock time,
so equal scenarios give byte-identical reports.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Optional

import numpy as np

from .arena import (ArenaModel, GnssParams, JetModel, LidarConfig, MotionLimits, RobotState, ThermalParams,
                    VelocityCommand, WaypointCommand, gnss_measure, render_lidar, render_thermal,
                    simulate_jet, step_arm, step_dynamics)
from .autonomy import (HOVER, AimParams, FireSlot, ScanRect, UavFsm, UavInputs, UavParams, UgvFsm, UgvInputs,
                       UgvParams, Waypoint, uav_step, ugv_step)
from .geometry import PinholeCamera, PointCloud, Pose
from .holes import HoleParams, detect_holes
from .localization import (LocalizationState, ReferenceMap, RegistrationFailure, detect_jump, localize,
                           map_from_arena, register_scan, select_map, update_offset, NoMapError)
from .scenario import RobotSpec, Scenario, pose_from_spec
from .thermal import (Detection, DistanceCalibration, Extrinsics, InsufficientSupportError, OutOfRangeError,
                      detect_heat, estimate_distance_bbox, localize_heat_lidar)
from .tracking import TrackerState, check_timeout, estimate, ingest_with_reason

log = logging.getLogger(__name__)

# camera optical frame (z forward, x right, y down) expressed in a forward-left-up frame
OPTICAL = Pose(np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]]))

TERMINAL = {"Done", "ReturnHome", "Stop"}


class MissionAbort(RuntimeError):
    def __init__(self, message: str, report: "MissionReport"):
        super().__init__(message)
        self.report = report


def _r(x, nd: int = 6):
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_r(v, nd) for v in x]
    if x is None:
        return None
    x = float(x)
    if not math.isfinite(x):
        return None
    return round(x, nd) + 0.0


@dataclass
class MissionReport:
    scenario: str
    seed: int
    trace: list[dict] = field(default_factory=list)
    detections: list[dict] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    localization: list[dict] = field(default_factory=list)
    distances: list[dict] = field(default_factory=list)
    water_delivered: dict[str, float] = field(default_factory=dict)
    water_missed: dict[str, float] = field(default_factory=dict)
    water_initial: dict[str, float] = field(default_factory=dict)
    water_remaining: dict[str, float] = field(default_factory=dict)
    final_states: dict[str, str] = field(default_factory=dict)
    end_time: float = 0.0
    complete: bool = False
    error: Optional[str] = None
    scenario_doc: Optional[dict] = None
    wall_time: float = 0.0  # filled in by the caller, kept out of the serialized report

    def records(self) -> list[dict]:
        out: list[dict] = [{"type": "header", "scenario": self.scenario, "seed": self.seed, "format": 1,
                            "scenario_doc": self.scenario_doc}]
        out += [{"type": "trace", **r} for r in self.trace]
        out += [{"type": "detection", **r} for r in self.detections]
        out += [{"type": "event", **r} for r in self.events]
        out += [{"type": "localization", **r} for r in self.localization]
        out += [{"type": "distance", **r} for r in self.distances]
        out.append({"type": "summary", "water_delivered": {k: _r(v) for k, v in sorted(self.water_delivered.items())},
                    "water_missed": {k: _r(v) for k, v in sorted(self.water_missed.items())},
                    "water_initial": {k: _r(v) for k, v in sorted(self.water_initial.items())},
                    "water_remaining": {k: _r(v) for k, v in sorted(self.water_remaining.items())},
                    "final_states": dict(sorted(self.final_states.items())),
                    "end_time": _r(self.end_time), "complete": self.complete, "error": self.error})
        return out

    def to_ndjson(self) -> str:
        return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in self.records())

    def trace_lines(self, robot: Optional[str] = None) -> list[str]:
        """Whitespace-delimited trace lines ``t state x y z yaw pump water_remaining reason`` for one robot."""
        if robot is None:
            robots = sorted({r["robot"] for r in self.trace})
            robot = robots[0] if robots else None
        lines = []
        for r in self.trace:
            if r["robot"] != robot:
                continue
            x, y, z = r["true"]
            lines.append(f"{r['t']:.3f} {r['state']} {x:.4f} {y:.4f} {z:.4f} {r['yaw']:.4f} "
                         f"{int(r['pump'])} {r['water_remaining']:.4f} {r['reason']}")
        return lines

    @classmethod
    def from_ndjson(cls, text: str) -> "MissionReport":
        rep = None
        for line in text.splitlines():
            if not line.strip():
                continue
            r = json.loads(line)
            kind = r.pop("type")
            if kind == "header":
                rep = cls(r["scenario"], r["seed"], scenario_doc=r.get("scenario_doc"))
            elif rep is None:
                raise ValueError("report does not start with a header record")
            elif kind == "summary":
                rep.water_delivered = r["water_delivered"]
                rep.water_missed = r["water_missed"]
                rep.water_initial = r["water_initial"]
                rep.water_remaining = r["water_remaining"]
                rep.final_states = r["final_states"]
                rep.end_time = r["end_time"]
                rep.complete = r["complete"]
                rep.error = r["error"]
            else:
                getattr(rep, {"trace": "trace", "detection": "detections", "event": "events",
                              "localization": "localization", "distance": "distances"}[kind]).append(r)
        if rep is None:
            raise ValueError("empty report")
        return rep


def _due(k: int, rate: float, base: float) -> bool:
    """Whether a sensor at ``rate`` fires on dynamics tick ``k`` (tick 0 fires everything)."""
    if k == 0:
        return True
    return math.floor(k * rate / base + 1e-9) > math.floor((k - 1) * rate / base + 1e-9)


def _lidar_config(spec) -> LidarConfig:
    kw: dict[str, Any] = {"range_noise": spec.range_noise, "max_range": spec.max_range}
    if spec.horizontal_steps is not None:
        kw["horizontal_steps"] = spec.horizontal_steps
    if spec.hfov_deg is not None:
        kw["hfov_deg"] = tuple(spec.hfov_deg)
    mount = pose_from_spec(spec.mount)
    return LidarConfig.os1_64(mount, **kw) if spec.model == "os1_64" else LidarConfig.vlp16(mount, **kw)


def _retarget(cmd, loc: Pose, true: Pose):
    """Express a localized-frame waypoint command in the true frame (the vehicle acts on relative error)."""
    if not isinstance(cmd, WaypointCommand):
        return cmd
    rel = true @ loc.inverse()
    pos = rel.apply(np.asarray(cmd.position, dtype=float))
    yaw = None if cmd.yaw is None else cmd.yaw + rel.yaw
    return WaypointCommand(tuple(float(v) for v in pos), yaw)


class _Robot:
    """Per-robot runtime state shared by the UAV and UGV loops."""

    def __init__(self, spec: RobotSpec, scenario: Scenario, arena: ArenaModel, maps: list[ReferenceMap],
                 seed_seq: np.random.SeedSequence):
        self.spec = spec
        self.name = spec.name
        self.kind = spec.kind
        self.arena = arena
        self.maps = maps
        gs, ls, ts = seed_seq.spawn(3)
        self.rng_gnss = np.random.default_rng(gs)
        self.rng_lidar = np.random.default_rng(ls)
        self.rng_thermal = np.random.default_rng(ts)
        self.spawn = pose_from_spec(spec.spawn)
        self.lidar = _lidar_config(spec.lidar)
        self.camera = PinholeCamera.lepton(spec.thermal.fx)
        self.cam_mount = pose_from_spec(spec.thermal.mount) @ OPTICAL
        self.thermal_params = ThermalParams(ambient=spec.thermal.ambient, noise=spec.thermal.noise)
        err = Pose.from_xyz_rpy((0, 0, 0), *(math.radians(a) for a in spec.thermal.extrinsics_error_deg))
        self.extrinsics = Extrinsics(self.lidar.mount.inverse() @ self.cam_mount @ err)
        lim = spec.limits
        self.limits = MotionLimits(lim.max_speed, lim.max_accel,
                                   None if lim.max_yaw_rate_deg is None else math.radians(lim.max_yaw_rate_deg),
                                   lim.gain)
        self.jet_mount = pose_from_spec(spec.jet.mount)
        self.jet = JetModel(spec.jet.exit_speed, Pose(), spec.jet.flow_rate)
        arm0 = pose_from_spec(spec.slots[0].scan_center) if spec.kind == "ugv" and spec.slots else None
        self.state = RobotState(self.spawn, kind=spec.kind, water_remaining=spec.water, arm_pose=arm0)
        self.water_initial = spec.water
        self.sprayed = 0.0
        self.pump_limit = math.inf
        self.command = HOVER
        self.arm_target = arm0
        self.loc = LocalizationState()
        self.loc_guess = pose_from_spec(spec.localization.initial_guess) if spec.localization.initial_guess \
            else None
        self.loss_reported = False
        self.prev_localized: Optional[Pose] = None
        self.drift = np.zeros(3)
        self.faults = sorted(spec.faults, key=lambda f: f.t)
        self.outcomes: list[str] = []
        self.last_scan: Optional[tuple[PointCloud, Pose]] = None
        self.ego = self.spawn
        self.fsm_state = "Search" if spec.kind == "uav" else "Drive"

    # --- ego motion -----------------------------------------------------------------------
    def update_ego(self, t: float, dt: float):
        true = self.state.true_pose
        if self.kind == "uav":
            g = self.spec.gnss
            near = any(_wall_distance(w, true.translation) < g.near_building_distance
                       for w in self.arena.walls if w.material == "opaque")
            params = GnssParams(sigma=g.sigma, dt=dt, near_building_factor=g.near_building_factor)
            meas, self.drift = gnss_measure(true, self.drift, self.rng_gnss, near, params)
            ego = meas
        else:
            # wheel odometry, reset at start-up
            ego = self.spawn.inverse() @ true
        shift = np.zeros(3)
        for f in self.faults:
            if t >= f.t - 1e-12:
                shift = shift + np.asarray(f.offset, dtype=float)
        if np.any(shift):
            ego = Pose(ego.rotation, ego.translation + shift)
        self.ego = ego

    def localized(self) -> Optional[Pose]:
        if not self.loc.initialized:
            return None
        return localize(self.loc, self.ego)

    # --- LiDAR ----------------------------------------------------------------------------
    def lidar_tick(self, t: float, rep: MissionReport):
        true = self.state.true_pose
        scan = render_lidar(self.arena, true @ self.lidar.mount, self.lidar, self.rng_lidar)
        body_pts = self.lidar.mount.apply(scan.points)
        guess = self.localized()
        if guess is None:
            guess = self.loc_guess if self.loc_guess is not None else self.ego
        try:
            active = select_map(guess.translation, self.maps, self.loc.active_map or None)
        except NoMapError as exc:
            rep.events.append({"t": _r(t), "robot": self.name, "event": "no-map", "detail": str(exc)})
            return scan
        if active != self.loc.active_map:
            rep.events.append({"t": _r(t), "robot": self.name, "event": "map-switch",
                               "detail": f"{self.loc.active_map or '-'}->{active}"})
            self.loc = replace(self.loc, active_map=active)
        ref = next(m for m in self.maps if m.name == active)
        try:
            reg = register_scan(body_pts, ref, guess)
        except RegistrationFailure as exc:
            rep.events.append({"t": _r(t), "robot": self.name, "event": "registration-failure", "detail": str(exc)})
            return scan
        before = self.loc
        self.loc = update_offset(self.loc, reg.pose, self.ego, t)
        if self.loc.accepted > before.accepted:
            self.loss_reported = False
            rep.events.append({"t": _r(t), "robot": self.name, "event": "offset-accepted",
                               "detail": f"delta={self.loc.last_delta:.4f}"})
        else:
            rep.events.append({"t": _r(t), "robot": self.name, "event": "offset-rejected",
                               "detail": f"delta={reg.pose.distance_to(self.loc.offset @ self.ego):.4f}"})
        loc_pose = self.localized()
        err = float(np.linalg.norm(loc_pose.translation - true.translation))
        raw = float(np.linalg.norm(self.ego.translation - true.translation)) if self.kind == "uav" else None
        rep.localization.append({"t": _r(t), "robot": self.name, "error": _r(err), "raw_error": _r(raw),
                                 "rms": _r(reg.rms), "inliers": _r(reg.inlier_fraction)})
        return scan

    def check_loss(self, t: float, rep: MissionReport) -> bool:
        ok = self.loc.initialized and t - self.loc.last_update_time <= self.spec.localization.loss_timeout
        if not ok and self.loc.initialized and not self.loss_reported:
            self.loss_reported = True
            rep.events.append({"t": _r(t), "robot": self.name, "event": "localization-loss",
                               "detail": "no accepted offset update within the loss timeout"})
        return ok

    # --- water ----------------------------------------------------------------------------
    def spray(self, nozzle_true: Pose, dt: float, rep: MissionReport):
        if not self.state.pump_on or self.state.water_remaining <= 0:
            return
        amount = min(self.jet.flow_rate * dt, self.state.water_remaining, max(0.0, self.pump_limit - self.sprayed))
        if amount <= 0:
            return
        res = simulate_jet(self.jet.at(nozzle_true), self.arena, dt)
        key = res.hole_hit
        if key is None:
            rep.water_missed[self.name] = rep.water_missed.get(self.name, 0.0) + amount
        else:
            rep.water_delivered[key] = rep.water_delivered.get(key, 0.0) + amount
        self.sprayed += amount
        self.state = replace(self.state, water_remaining=max(0.0, self.state.water_remaining - amount))


class _Uav(_Robot):
    def __init__(self, spec, scenario, arena, maps, seed_seq):
        super().__init__(spec, scenario, arena, maps, seed_seq)
        u = spec.uav
        route = tuple(Waypoint(Pose.from_xyz_yaw(w.xyz, math.radians(w.yaw_deg)), w.kind, w.hover) for w in spec.route)
        self.fsm = UavFsm(route, self.spawn, arena.bounds_min, arena.bounds_max, tuple(u.altitude_corridor),
                          UavParams(pos_tol=u.pos_tol, yaw_tol_deg=u.yaw_tol_deg, standoff=u.standoff, rise=u.rise,
                                    required_streak=u.required_streak, lost_timeout=u.lost_timeout),
                          water=spec.water)
        self.tracker = TrackerState()
        self.hole_params = HoleParams(max_range=spec.holes.max_range, forward_fov_deg=spec.holes.forward_fov_deg,
                                      min_score=spec.holes.min_score)
        self.jet_pose_cache = None

    def dynamics(self, t: float, dt: float, rep: MissionReport):
        loc = self.localized()
        cmd = self.command if loc is None else _retarget(self.command, loc, self.state.true_pose)
        self.state = step_dynamics(self.state, cmd, dt, self.limits)
        self.spray(self.state.true_pose @ self.jet_mount, dt, rep)

    def _ingest(self, det: Detection, t: float, rep: MissionReport, extra: dict):
        robot_pos = self.localized().translation
        self.tracker, outcome = ingest_with_reason(self.tracker, det, robot_pos, t)
        self.outcomes.append(outcome)
        rep.detections.append({"t": _r(t), "robot": self.name, "kind": det.kind, "position": _r(det.position),
                               "normal": _r(det.normal), "outcome": outcome, **extra})

    def perception_lidar(self, t: float, rep: MissionReport):
        scan = self.lidar_tick(t, rep)
        loc = self.localized()
        if loc is None:
            return
        sensor_pose = loc @ self.lidar.mount
        self.last_scan = (scan, sensor_pose)
        if not self.spec.holes.enabled:
            return
        for h in detect_holes(scan, sensor_pose, self.hole_params, t):
            det = Detection(h.position, h.normal, "hole", t)
            self._ingest(det, t, rep, {"diameter": _r(h.diameter)})

    def perception_thermal(self, t: float, rep: MissionReport):
        loc = self.localized()
        if loc is None or self.last_scan is None:
            return
        true_cam = self.state.true_pose @ self.cam_mount
        th = self.spec.thermal
        img = render_thermal(self.arena, true_cam, self.camera, self.rng_thermal, self.thermal_params, t)
        scan, scan_pose = self.last_scan
        # carry the latest scan into the current LiDAR frame using the localized motion since it was taken
        lidar_pose = loc @ self.lidar.mount
        pts = lidar_pose.inverse().apply(scan_pose.apply(scan.points))
        scan = PointCloud(pts, frame_id="lidar")
        cam_in_lidar = self.extrinsics.thermal_camera_in_lidar_frame
        for c in detect_heat(img, th.lower, th.upper, th.min_area, th.max_area):
            try:
                det = localize_heat_lidar(c, scan, self.extrinsics, self.camera, lidar_pose, t,
                                          margin_px=th.lidar_box_margin_px)
                local = localize_heat_lidar(c, scan, self.extrinsics, self.camera, cam_in_lidar.inverse(), t)
                d_lidar = float(np.linalg.norm(local.position))
            except InsufficientSupportError:
                rep.detections.append({"t": _r(t), "robot": self.name, "kind": "thermal", "position": None,
                                       "normal": None, "outcome": "insufficient-support"})
                continue
            try:
                d_bbox, _ = estimate_distance_bbox(c, self.camera, self.spec.element_size,
                                                   DistanceCalibration(tuple(self.spec.calibration.raw),
                                                                       tuple(self.spec.calibration.corrected)))
            except OutOfRangeError:
                d_bbox = None
            truth = _true_heat_range(self.arena, true_cam)
            if truth is not None:
                rep.distances.append({"t": _r(t), "robot": self.name, "true": _r(truth), "bbox": _r(d_bbox),
                                      "lidar": _r(d_lidar)})
            self._ingest(det, t, rep, {"area": c.area})

    def fsm_tick(self, t: float, dt_fsm: float, rep: MissionReport):
        self.tracker = check_timeout(self.tracker, t)
        loc = self.localized()
        if loc is None:
            self.command = HOVER
            return
        jump = self.prev_localized is not None and detect_jump(self.prev_localized, loc)
        self.prev_localized = loc
        tracking = self.tracker.phase == "tracking"
        est = estimate(self.tracker) if tracking else None
        ok = self.check_loss(t, rep)
        inputs = UavInputs(loc, t, est, tracking, tuple(self.outcomes), jump, self.state.water_remaining, ok)
        self.outcomes = []
        prev_state = self.fsm.state
        self.fsm, self.command = uav_step(self.fsm, inputs, dt_fsm)
        self.state = replace(self.state, pump_on=self.fsm.pump_on)
        self.fsm_state = self.fsm.state
        if self.fsm.state != prev_state:
            rep.events.append({"t": _r(t), "robot": self.name, "event": "state",
                               "detail": f"{prev_state}->{self.fsm.state}:{self.fsm.reason}"})
        tp = self.state.true_pose
        rep.trace.append({"t": _r(t), "robot": self.name, "state": self.fsm.state, "true": _r(tp.translation),
                          "yaw": _r(tp.yaw), "localized": _r(loc.translation), "pump": bool(self.fsm.pump_on),
                          "water_remaining": _r(self.state.water_remaining), "reason": self.fsm.reason,
                          "goal": None if self.fsm.goal is None else _r(list(self.fsm.goal.translation)
                                                                          + [self.fsm.goal.yaw]),
                          "streak": self.fsm.consecutive_detections, "tracker": self.tracker.phase,
                          "command": _command_record(self.command)})


class _Ugv(_Robot):
    def __init__(self, spec, scenario, arena, maps, seed_seq):
        super().__init__(spec, scenario, arena, maps, seed_seq)
        g = spec.ugv
        slots = tuple(FireSlot(s.name, tuple(Pose.from_xyz_yaw(w.xyz, math.radians(w.yaw_deg)) for w in s.route),
                               pose_from_spec(s.scan_center)) for s in spec.slots)
        params = UgvParams(water_budget_per_fire=g.water_budget_per_fire,
                           rect=ScanRect(g.scan_width, g.scan_height, g.scan_period),
                           aim=AimParams(standoff=g.aim_standoff),
                           spray_amplitude_deg=g.spray_amplitude_deg, spray_period=g.spray_period)
        self.fsm = UgvFsm(slots, params, arm_target=self.arm_target)
        self.calib = DistanceCalibration(tuple(spec.calibration.raw), tuple(spec.calibration.corrected))
        self.heat: Optional[np.ndarray] = None
        self.pump_limit = 0.0

    def dynamics(self, t: float, dt: float, rep: MissionReport):
        loc = self.localized()
        cmd = self.command if loc is None else _retarget(self.command, loc, self.state.true_pose)
        self.state = step_dynamics(self.state, cmd, dt, self.limits)
        if self.arm_target is not None:
            self.state = replace(self.state, arm_pose=step_arm(self.state.arm_pose, self.arm_target, dt))
        self.spray(self.state.true_pose @ self.state.arm_pose, dt, rep)

    def perception_lidar(self, t: float, rep: MissionReport):
        self.lidar_tick(t, rep)

    def perception_thermal(self, t: float, rep: MissionReport):
        if self.fsm.state not in ("ScanArm", "Aim"):
            return
        cam_base = self.state.arm_pose @ self.cam_mount
        true_cam = self.state.true_pose @ cam_base
        th = self.spec.thermal
        img = render_thermal(self.arena, true_cam, self.camera, self.rng_thermal, self.thermal_params, t)
        contours = detect_heat(img, th.lower, th.upper, th.min_area, th.max_area)
        if not contours:
            return
        c = contours[0]
        try:
            dist, det = estimate_distance_bbox(c, self.camera, self.spec.element_size, self.calib, cam_base, t)
        except OutOfRangeError:
            rep.detections.append({"t": _r(t), "robot": self.name, "kind": "thermal", "position": None,
                                   "normal": None, "outcome": "out-of-range"})
            return
        self.heat = det.position
        truth = _true_heat_range(self.arena, true_cam)
        rep.detections.append({"t": _r(t), "robot": self.name, "kind": "thermal", "position": _r(det.position),
                               "normal": _r(det.normal), "outcome": "heat-estimate", "area": c.area,
                               "bbox_width": c.bbox_width})
        if truth is not None:
            rep.distances.append({"t": _r(t), "robot": self.name, "true": _r(truth), "bbox": _r(dist),
                                  "lidar": None})

    def fsm_tick(self, t: float, dt_fsm: float, rep: MissionReport):
        loc = self.localized()
        if loc is None:
            self.command = HOVER
            return
        self.check_loss(t, rep)
        inputs = UgvInputs(loc, t, self.state.arm_pose, self.heat, self.sprayed, self.state.water_remaining)
        self.heat = None  # each estimate is consumed once
        prev_state, prev_target = self.fsm.state, self.arm_target
        self.fsm, self.command, arm_target, pump = ugv_step(self.fsm, inputs, dt_fsm, self.jet)
        self.state = replace(self.state, pump_on=pump)
        self.pump_limit = self.fsm.pump_limit if pump else self.sprayed
        if arm_target is not None:
            self.arm_target = arm_target
        self.fsm_state = self.fsm.state
        if self.fsm.state != prev_state:
            rep.events.append({"t": _r(t), "robot": self.name, "event": "state",
                               "detail": f"{prev_state}->{self.fsm.state}:{self.fsm.reason}"})
        if self.fsm.reason == "aim-step" and prev_target is not None:
            rep.events.append({"t": _r(t), "robot": self.name, "event": "aim-step",
                               "detail": f"{self.arm_target.distance_to(self.state.arm_pose):.6f}"})
        tp = self.state.true_pose
        ap = self.state.arm_pose
        rep.trace.append({"t": _r(t), "robot": self.name, "state": self.fsm.state, "true": _r(tp.translation),
                          "yaw": _r(tp.yaw), "localized": _r(loc.translation), "pump": bool(pump),
                          "water_remaining": _r(self.state.water_remaining), "reason": self.fsm.reason,
                          "map": self.loc.active_map, "slot": self.fsm.slot_index,
                          "arm": _r(ap.as_list()), "arm_target": _r(self.arm_target.as_list()),
                          "sprayed": _r(self.sprayed), "command": _command_record(self.command)})


def _wall_distance(w, p) -> float:
    """Euclidean distance from ``p`` to the wall rectangle."""
    d = np.asarray(p, dtype=float) - w.corner
    a = float(np.clip(d @ w.edge_u / (w.edge_u @ w.edge_u), 0.0, 1.0))
    b = float(np.clip(d @ w.edge_v / (w.edge_v @ w.edge_v), 0.0, 1.0))
    return float(np.linalg.norm(d - a * w.edge_u - b * w.edge_v))


def _command_record(cmd) -> dict:
    if isinstance(cmd, WaypointCommand):
        return {"kind": "waypoint", "position": _r(cmd.position), "yaw": _r(cmd.yaw)}
    return {"kind": "velocity", "velocity": _r(cmd.velocity), "yaw_rate": _r(cmd.yaw_rate)}


def _true_heat_range(arena: ArenaModel, cam: Pose) -> Optional[float]:
    """Distance from the camera to the opening of the nearest heated hole in front of it."""
    best = None
    inv = cam.inverse()
    for h in arena.holes:
        if not h.heated:
            continue
        pc = inv.apply(h.center)
        if pc[2] <= 0:
            continue
        d = float(np.linalg.norm(pc))
        best = d if best is None else min(best, d)
    return best


def build_maps(scenario: Scenario, arena: ArenaModel) -> list[ReferenceMap]:
    return [map_from_arena(arena, m.name, m.spacing, m.box_min, m.box_max, m.priority) for m in scenario.maps]


def run_mission(scenario: Scenario, seed: Optional[int] = None, max_duration: Optional[float] = None) -> MissionReport:
    """Run the closed loop until the duration cap or until every robot is in a terminal state."""
    seed = scenario.seed if seed is None else int(seed)
    arena = scenario.build_arena()
    maps = build_maps(scenario, arena)
    rep = MissionReport(scenario.name, seed, scenario_doc=scenario.model_dump(mode="json"))
    root = np.random.SeedSequence(seed)
    children = root.spawn(len(scenario.robots))
    robots: list[_Robot] = []
    for spec, ss in zip(scenario.robots, children):
        robots.append((_Uav if spec.kind == "uav" else _Ugv)(spec, scenario, arena, maps, ss))
    for r in robots:
        rep.water_initial[r.name] = r.water_initial
        rep.water_missed[r.name] = 0.0
    for h in arena.holes:
        rep.water_delivered[h.id] = 0.0

    rates = scenario.rates
    base = rates.dynamics
    dt = 1.0 / base
    duration = scenario.duration if max_duration is None else min(scenario.duration, max_duration)
    n_steps = int(round(duration * base))
    t = 0.0
    try:
        for k in range(n_steps + 1):
            t = k * dt
            if k > 0:
                for r in robots:
                    r.dynamics(t, dt, rep)
            for r in robots:
                r.update_ego(t, dt)
            if _due(k, rates.lidar, base):
                for r in robots:
                    r.perception_lidar(t, rep)
            if _due(k, rates.thermal, base):
                for r in robots:
                    r.perception_thermal(t, rep)
            if _due(k, rates.fsm, base):
                for r in robots:
                    r.fsm_tick(t, 1.0 / rates.fsm, rep)
                if all(r.fsm_state in TERMINAL for r in robots):
                    break
        rep.complete = True
    except Exception as exc:  # module errors abort the run with a partial report
        rep.error = f"{type(exc).__name__}: {exc}"
        rep.complete = False
        log.exception("mission aborted at t=%.3f", t)
    rep.end_time = t
    for r in robots:
        rep.final_states[r.name] = r.fsm_state
        rep.water_remaining[r.name] = r.state.water_remaining
    if not rep.complete:
        raise MissionAbort(rep.error or "mission aborted", rep)
    return rep
