"""Mission state machines for the UAV and the UGV.

Both machines are pure transition functions: ``(fsm, inputs, dt) -> (fsm, commands)``.
Poses handed to the UAV machine are localized field-frame poses. The UGV
machine works in the field frame while driving and in its own base frame
while scanning, aiming and spraying.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .arena import GRAVITY, JetModel, VelocityCommand, WaypointCommand
from .geometry import Pose, angle_between, wrap_angle
from .tracking import ADMISSIONS, REJECTIONS

HOVER = VelocityCommand()

# a refused thermal detection that lost only to a fresher hole detection does not break a streak
STREAK_BREAKERS = REJECTIONS - {"thermal-suppressed-by-hole"}


class DegenerateGoalError(ValueError):
    pass


class UnreachableError(ValueError):
    pass


@dataclass(frozen=True)
class Waypoint:
    pose: Pose
    kind: str = "transfer"  # "transfer" | "observation"
    hover_duration: float = 2.0

    def __post_init__(self):
        if self.kind not in ("transfer", "observation"):
            raise ValueError(f"unknown waypoint kind {self.kind!r}")
        if self.hover_duration < 0:
            raise ValueError("hover_duration must be >= 0")


# --- UAV ---------------------------------------------------------------------------------

@dataclass(frozen=True)
class UavParams:
    pos_tol: float = 0.25
    yaw_tol_deg: float = 10.0
    hysteresis: float = 0.8
    standoff: float = 2.1
    rise: float = 0.35
    required_streak: int = 5
    heading_limit_deg: float = 45.0
    lost_timeout: float = 5.0
    waypoint_tol: float = 0.3
    waypoint_yaw_tol_deg: float = 10.0


@dataclass(frozen=True)
class UavFsm:
    route: tuple[Waypoint, ...]
    home: Pose
    bounds_min: np.ndarray
    bounds_max: np.ndarray
    altitude_corridor: tuple[float, float]
    params: UavParams = UavParams()
    state: str = "Search"
    consecutive_detections: int = 0
    goal: Optional[Pose] = None
    water: float = 0.0
    waypoint_index: int = 0
    hover_until: Optional[float] = None
    last_admit_time: float = -math.inf
    pump_on: bool = False
    reason: str = "start"

    def __post_init__(self):
        if not self.route:
            raise ValueError("route must contain at least one waypoint")
        lo, hi = self.altitude_corridor
        if not lo < hi:
            raise ValueError("altitude corridor must have z_min < z_max")
        object.__setattr__(self, "bounds_min", np.asarray(self.bounds_min, dtype=float).reshape(3))
        object.__setattr__(self, "bounds_max", np.asarray(self.bounds_max, dtype=float).reshape(3))


@dataclass(frozen=True)
class UavInputs:
    pose: Pose
    now: float
    estimate: Optional[tuple[np.ndarray, np.ndarray]] = None
    tracking: bool = False
    outcomes: tuple[str, ...] = ()
    jump: bool = False
    water_remaining: Optional[float] = None
    localization_ok: bool = True


def extinguish_goal(target: tuple[np.ndarray, np.ndarray], standoff: float = 2.1, rise: float = 0.35) -> Pose:
    """Hover pose ``standoff`` out along the horizontal target normal and ``rise`` above, facing the target."""
    p, n = (np.asarray(a, dtype=float) for a in target)
    if min(angle_between(n, [0, 0, 1]), angle_between(n, [0, 0, -1])) < math.radians(5.0):
        raise DegenerateGoalError("target normal is within 5 degrees of vertical")
    h = np.array([n[0], n[1], 0.0])
    h /= np.linalg.norm(h)
    pos = p + standoff * h + np.array([0.0, 0.0, rise])
    return Pose.from_xyz_yaw(pos, math.atan2(-h[1], -h[0]))


def pump_logic(goal: Pose, current: Pose, pos_tol: float, yaw_tol_deg: float, pump_on: bool,
               hysteresis: float = 0.8) -> bool:
    """Pump stays on inside the tolerances; switching it back on needs ``hysteresis`` times the tolerances."""
    if pos_tol <= 0 or yaw_tol_deg <= 0:
        raise ValueError("tolerances must be positive")
    pe = float(np.linalg.norm(goal.translation - current.translation))
    ye = abs(math.degrees(wrap_angle(goal.yaw - current.yaw)))
    scale = 1.0 if pump_on else hysteresis
    return pe <= scale * pos_tol and ye <= scale * yaw_tol_deg


def _clamp_command(fsm: UavFsm, pos, yaw: Optional[float]) -> WaypointCommand:
    p = np.clip(np.asarray(pos, dtype=float), fsm.bounds_min, fsm.bounds_max)
    p[2] = min(max(p[2], fsm.altitude_corridor[0]), fsm.altitude_corridor[1])
    return WaypointCommand(tuple(float(v) for v in p), yaw)


def _detection_heading_ok(fsm: UavFsm, pose: Pose, n: np.ndarray) -> bool:
    h = np.array([n[0], n[1], 0.0])
    if np.linalg.norm(h) < 1e-9:
        return False
    facing = -h / np.linalg.norm(h)
    heading = np.array([math.cos(pose.yaw), math.sin(pose.yaw), 0.0])
    return math.degrees(angle_between(heading, facing)) <= fsm.params.heading_limit_deg


def uav_step(fsm: UavFsm, inputs: UavInputs, dt: float):
    """One UAV decision step. Returns ``(fsm, command)``; ``fsm.pump_on`` is the pump flag."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    now, pose = inputs.now, inputs.pose
    water = fsm.water if inputs.water_remaining is None else float(inputs.water_remaining)
    fsm = replace(fsm, water=water)

    # safety first: a jump in the localized frame freezes the vehicle for good
    if inputs.jump or fsm.state == "Stop":
        reason = "jump" if inputs.jump and fsm.state != "Stop" else "stopped"
        return replace(fsm, state="Stop", pump_on=False, goal=None, reason=reason), HOVER

    streak, last_admit = fsm.consecutive_detections, fsm.last_admit_time
    for o in inputs.outcomes:
        if o in ADMISSIONS:
            streak += 1
            last_admit = now
        elif o in STREAK_BREAKERS:
            streak = 0
    if not inputs.tracking:
        streak = 0
    fsm = replace(fsm, consecutive_detections=streak, last_admit_time=last_admit)

    if fsm.state == "ReturnHome":
        z = min(max(fsm.home.translation[2], fsm.altitude_corridor[0]), fsm.altitude_corridor[1])
        cmd = _clamp_command(fsm, [fsm.home.translation[0], fsm.home.translation[1], z], fsm.home.yaw)
        return replace(fsm, pump_on=False, reason="water-exhausted"), cmd

    if fsm.state == "Search":
        if inputs.tracking and inputs.estimate is not None and streak >= fsm.params.required_streak:
            p, n = inputs.estimate
            z_ok = fsm.altitude_corridor[0] <= p[2] <= fsm.altitude_corridor[1]
            if z_ok and _detection_heading_ok(fsm, pose, n):
                try:
                    goal = extinguish_goal((p, n), fsm.params.standoff, fsm.params.rise)
                except DegenerateGoalError:
                    goal = None
                if goal is not None:
                    fsm = replace(fsm, state="Extinguish", goal=goal, hover_until=None, reason="target-confirmed")
                    return _extinguish(fsm, inputs)
        if not inputs.localization_ok:
            return replace(fsm, pump_on=False, reason="localization-loss"), HOVER
        return _search(fsm, pose, now)

    return _extinguish(fsm, inputs)


def _search(fsm: UavFsm, pose: Pose, now: float):
    wp = fsm.route[fsm.waypoint_index]
    dist = float(np.linalg.norm(wp.pose.translation - pose.translation))
    yaw_err = abs(math.degrees(wrap_angle(wp.pose.yaw - pose.yaw)))
    reason = "transfer"
    if dist <= fsm.params.waypoint_tol and yaw_err <= fsm.params.waypoint_yaw_tol_deg:
        if wp.kind == "observation":
            if fsm.hover_until is None:
                fsm = replace(fsm, hover_until=now + wp.hover_duration)
            if now >= fsm.hover_until:
                fsm = replace(fsm, waypoint_index=(fsm.waypoint_index + 1) % len(fsm.route), hover_until=None)
                reason = "next-waypoint"
            else:
                reason = "observing"
        else:
            fsm = replace(fsm, waypoint_index=(fsm.waypoint_index + 1) % len(fsm.route))
            reason = "next-waypoint"
    wp = fsm.route[fsm.waypoint_index]
    cmd = _clamp_command(fsm, wp.pose.translation, wp.pose.yaw)
    return replace(fsm, pump_on=False, goal=None, reason=reason), cmd


def _extinguish(fsm: UavFsm, inputs: UavInputs):
    now, pose = inputs.now, inputs.pose
    if now - fsm.last_admit_time > fsm.params.lost_timeout:
        fsm = replace(fsm, state="Search", goal=None, pump_on=False, consecutive_detections=0,
                      reason="target-lost")
        return _search(fsm, pose, now)
    if fsm.water <= 1e-12:
        fsm = replace(fsm, state="ReturnHome", goal=None, pump_on=False, reason="water-exhausted")
        return uav_step(fsm, replace(inputs, outcomes=()), 1.0)
    goal = fsm.goal
    if inputs.tracking and inputs.estimate is not None:
        try:
            goal = extinguish_goal(inputs.estimate, fsm.params.standoff, fsm.params.rise)
        except DegenerateGoalError:
            pass
    pump = pump_logic(goal, pose, fsm.params.pos_tol, fsm.params.yaw_tol_deg, fsm.pump_on, fsm.params.hysteresis)
    cmd = _clamp_command(fsm, goal.translation, goal.yaw)
    return replace(fsm, goal=goal, pump_on=pump, reason="spraying" if pump else "approaching"), cmd


# --- UGV ---------------------------------------------------------------------------------

@dataclass(frozen=True)
class ScanRect:
    width: float = 0.5
    height: float = 0.3
    period: float = 8.0


@dataclass(frozen=True)
class FireSlot:
    name: str
    route: tuple[Pose, ...]  # field-frame base poses, the last one is the scan pose
    scan_center: Pose  # nozzle pose in the base frame at the middle of the scan rectangle


@dataclass(frozen=True)
class ArmWorkspace:
    lo: tuple[float, float, float] = (0.2, -0.7, 0.1)
    hi: tuple[float, float, float] = (1.3, 0.7, 1.6)

    def contains(self, p) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= np.asarray(self.lo) - 1e-9) and np.all(p <= np.asarray(self.hi) + 1e-9))


@dataclass(frozen=True)
class AimParams:
    standoff: float = 0.8  # horizontal nozzle-to-target distance
    max_step: float = 0.10
    max_head: float = 1.5  # highest reachable target above the pump (base frame z)
    workspace: ArmWorkspace = ArmWorkspace()


@dataclass(frozen=True)
class UgvParams:
    water_budget_per_fire: float = 4.0
    waypoint_tol: float = 0.10
    waypoint_yaw_tol_deg: float = 3.0
    rect: ScanRect = ScanRect()
    aim: AimParams = AimParams()
    aligned_tol: float = 0.03
    max_aim_steps: int = 25
    arm_settle_tol: float = 0.005
    spray_amplitude_deg: float = 3.0
    spray_period: float = 4.0
    heat_lost_timeout: float = 5.0


@dataclass(frozen=True)
class UgvFsm:
    slots: tuple[FireSlot, ...]
    params: UgvParams = UgvParams()
    state: str = "Drive"
    slot_index: int = 0
    route_index: int = 0
    phase_start: float = 0.0
    arm_target: Optional[Pose] = None
    solution: Optional[Pose] = None
    slot_start_water: float = 0.0
    pump_on: bool = False
    pump_limit: float = 0.0  # cumulative sprayed volume at which the pump must cut out
    last_heat_time: float = -math.inf
    aim_steps: int = 0
    reason: str = "start"

    def __post_init__(self):
        if len(self.slots) != 2:
            raise ValueError("the UGV mission uses exactly two fire slots")


@dataclass(frozen=True)
class UgvInputs:
    pose: Pose  # localized base pose, field frame
    now: float
    arm_pose: Pose  # nozzle pose in the base frame
    heat: Optional[np.ndarray] = None  # freshest heat position estimate, base frame
    water_sprayed: float = 0.0  # cumulative
    water_remaining: float = math.inf


def scan_motion(t: float, rect: ScanRect) -> Pose:
    """Offset along the rectangle perimeter at constant speed, starting bottom-left.

    Offsets lie in the base y-z plane; +y is to the robot's left.
    """
    if rect.period <= 0:
        raise ValueError("period must be positive")
    w, h = rect.width, rect.height
    perim = 2.0 * (w + h)
    s = (t % rect.period) / rect.period * perim
    corners = np.array([[w / 2, -h / 2], [-w / 2, -h / 2], [-w / 2, h / 2], [w / 2, h / 2], [w / 2, -h / 2]])
    seg = np.array([w, h, w, h])
    for k in range(4):
        if s <= seg[k] or k == 3:
            frac = min(1.0, s / seg[k]) if seg[k] > 0 else 0.0
            y, z = corners[k] + frac * (corners[k + 1] - corners[k])
            return Pose(np.eye(3), [0.0, y, z])
        s -= seg[k]
    raise AssertionError("unreachable")


def spray_pattern(t: float, amplitude: float, period: float) -> tuple[float, float]:
    """(pitch, yaw) tilt in the units of ``amplitude``; a figure-eight crossing at the centre."""
    if period <= 0:
        raise ValueError("period must be positive")
    yaw = amplitude * math.sin(2.0 * math.pi * t / period)
    pitch = amplitude * math.sin(4.0 * math.pi * t / period)
    return pitch, yaw


def aim_solution(target, jet: JetModel, params: AimParams = AimParams()) -> Pose:
    """Nozzle pose (base frame) whose low ballistic arc passes through ``target``.

    The nozzle sits ``params.standoff`` behind the target along base -x, at the
    target height when the workspace allows it, pointing along +x with the
    pitch that solves the projectile equation.
    """
    T = np.asarray(target, dtype=float)
    if T[2] > params.max_head:
        raise UnreachableError(f"target {T[2]:.2f} m above the pump exceeds the {params.max_head} m head")
    ws = params.workspace
    D = params.standoff
    S = np.array([T[0] - D, T[1], min(max(T[2], ws.lo[2]), ws.hi[2])])
    if not ws.contains(S):
        raise UnreachableError("nozzle solution lies outside the arm workspace")
    dz = T[2] - S[2]
    v, g = jet.exit_speed, jet.gravity
    k = g * D * D / (2.0 * v * v)
    disc = D * D - 4.0 * k * (k + dz)
    if disc < 0:
        raise UnreachableError("jet cannot reach the target from the workspace")
    tan_t = (D - math.sqrt(disc)) / (2.0 * k)
    theta = math.atan(tan_t)
    # positive rotation about y tips +x downward, so pitch up is negative
    return Pose.from_xyz_rpy(S, 0.0, -theta, 0.0)


def aim_step(target, current: Pose, jet: JetModel, params: AimParams = AimParams()) -> Pose:
    """Next nozzle target: the arc solution, but at most ``max_step`` of translation away from ``current``."""
    sol = aim_solution(target, jet, params)
    d = sol.translation - current.translation
    dist = float(np.linalg.norm(d))
    if dist <= params.max_step:
        return sol
    return Pose(sol.rotation, current.translation + d * (params.max_step / dist))


def _arm_settled(fsm: UgvFsm, arm: Pose) -> bool:
    if fsm.arm_target is None:
        return True
    return (arm.distance_to(fsm.arm_target) <= fsm.params.arm_settle_tol
            and arm.angle_to(fsm.arm_target) <= math.radians(0.5))


def ugv_step(fsm: UgvFsm, inputs: UgvInputs, dt: float, jet: Optional[JetModel] = None):
    """One UGV decision step.

    Returns ``(fsm, base_command, arm_target, pump_flag)``; ``arm_target`` is a
    base-frame nozzle pose and ``fsm.pump_limit`` caps the sprayed volume.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    p, now = fsm.params, inputs.now
    hold = HOVER

    if fsm.state == "Done":
        return replace(fsm, pump_on=False, reason="done"), hold, fsm.arm_target, False

    if fsm.state == "NextFire":
        nxt = fsm.slot_index + 1
        if nxt >= len(fsm.slots):
            fsm = replace(fsm, state="Done", pump_on=False, reason="all-slots-done")
            return fsm, hold, fsm.arm_target, False
        fsm = replace(fsm, state="Drive", slot_index=nxt, route_index=0, pump_on=False,
                      solution=None, reason="next-fire")

    slot = fsm.slots[fsm.slot_index]

    if fsm.state == "Drive":
        target = slot.route[fsm.route_index]
        dist = float(np.linalg.norm((target.translation - inputs.pose.translation)[:2]))
        yerr = abs(math.degrees(wrap_angle(target.yaw - inputs.pose.yaw)))
        if dist <= p.waypoint_tol and yerr <= p.waypoint_yaw_tol_deg:
            if fsm.route_index + 1 < len(slot.route):
                fsm = replace(fsm, route_index=fsm.route_index + 1, reason="next-waypoint")
                target = slot.route[fsm.route_index]
            else:
                fsm = replace(fsm, state="ScanArm", phase_start=now, arm_target=slot.scan_center,
                              last_heat_time=-math.inf, reason="at-slot")
                return ugv_step(fsm, replace(inputs, heat=None), dt, jet)
        cmd = WaypointCommand(tuple(float(v) for v in target.translation), target.yaw)
        return replace(fsm, pump_on=False, arm_target=slot.scan_center, reason=fsm.reason), cmd, slot.scan_center, False

    if fsm.state == "ScanArm":
        if inputs.heat is not None:
            fsm = replace(fsm, state="Aim", arm_target=inputs.arm_pose, last_heat_time=now, aim_steps=0,
                          reason="heat-found")
            return ugv_step(fsm, inputs, dt, jet)
        t = now - fsm.phase_start
        if t >= p.rect.period:
            fsm = replace(fsm, state="NextFire", reason="no-heat")
            return fsm, hold, fsm.arm_target, False
        off = scan_motion(t, p.rect)
        target = Pose(slot.scan_center.rotation, slot.scan_center.translation + off.translation)
        return replace(fsm, arm_target=target, reason="scanning"), hold, target, False

    if jet is None:
        raise ValueError("aiming and spraying need a jet model")

    if fsm.state == "Aim":
        if inputs.heat is not None:
            fsm = replace(fsm, last_heat_time=now)
        elif now - fsm.last_heat_time > p.heat_lost_timeout:
            fsm = replace(fsm, state="NextFire", reason="heat-lost")
            return fsm, hold, fsm.arm_target, False
        if inputs.heat is None or not _arm_settled(fsm, inputs.arm_pose):
            return replace(fsm, reason="aiming"), hold, fsm.arm_target, False
        try:
            nxt = aim_step(inputs.heat, inputs.arm_pose, jet, p.aim)
        except UnreachableError:
            fsm = replace(fsm, state="NextFire", reason="unreachable")
            return fsm, hold, fsm.arm_target, False
        step = inputs.arm_pose.distance_to(nxt)
        if step <= p.aligned_tol or fsm.aim_steps >= p.max_aim_steps:
            limit = inputs.water_sprayed + 0.5 * p.water_budget_per_fire
            fsm = replace(fsm, state="SprayPhase1", phase_start=now, solution=nxt, arm_target=nxt,
                          slot_start_water=inputs.water_sprayed, pump_limit=limit, pump_on=True,
                          reason="aligned")
            return fsm, hold, nxt, True
        return replace(fsm, arm_target=nxt, aim_steps=fsm.aim_steps + 1, reason="aim-step"), hold, nxt, False

    budget_end = fsm.slot_start_water + p.water_budget_per_fire
    out_of_water = inputs.water_remaining <= 1e-12

    if fsm.state == "SprayPhase1":
        if inputs.water_sprayed >= fsm.pump_limit - 1e-12 or out_of_water:
            fsm = replace(fsm, state="SprayPhase2", phase_start=now, pump_limit=budget_end,
                          reason="phase1-done")
        else:
            return replace(fsm, pump_on=True, reason="spraying-still"), hold, fsm.solution, True

    if fsm.state == "SprayPhase2":
        if inputs.water_sprayed >= budget_end - 1e-12 or out_of_water:
            fsm = replace(fsm, state="NextFire", pump_on=False, reason="budget-used")
            return fsm, hold, fsm.solution, False
        pitch, yaw = spray_pattern(now - fsm.phase_start, p.spray_amplitude_deg, p.spray_period)
        tilt = Pose.from_xyz_rpy((0.0, 0.0, 0.0), 0.0, math.radians(pitch), math.radians(yaw))
        target = Pose(fsm.solution.rotation @ tilt.rotation, fsm.solution.translation)
        return replace(fsm, pump_on=True, arm_target=target, reason="spraying-hourglass"), hold, target, True

    raise ValueError(f"unknown UGV state {fsm.state!r}")
