"""Scenario documents: a JSON description of the arena, robots, sensors and routes.

Parsing goes through pydantic models with unknown keys forbidden; cross-field
checks (bounds, names, hole groups, route legs) run afterwards and report every
violation at once.
"""
from __future__ import annotations

import json
import math
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .arena import ArenaModel, Hole, Wall
from .geometry import Pose

Vec3 = tuple[float, float, float]


class ScenarioError(ValueError):
    """Raised for malformed or invalid scenario documents; ``errors`` lists every problem."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class PoseSpec(_Model):
    xyz: Vec3 = (0.0, 0.0, 0.0)
    rpy_deg: Vec3 = (0.0, 0.0, 0.0)


class WallSpec(_Model):
    name: str
    corner: Vec3
    edge_u: Vec3
    edge_v: Vec3
    material: Literal["opaque", "acrylic"] = "opaque"
    maps: tuple[str, ...] = ()


class HoleSpec(_Model):
    id: str
    center: Vec3
    normal: Vec3
    diameter: float = Field(0.15, gt=0)
    recess_depth: float = Field(0.10, ge=0)
    heated: bool = False
    heat_temp: float = 600.0
    enclosure: Literal["none", "acrylic"] = "none"
    group: Optional[str] = None


class ArenaSpec(_Model):
    bounds_min: Vec3
    bounds_max: Vec3
    floor: bool = True
    floor_z: float = 0.0
    floor_maps: tuple[str, ...] = ()
    walls: tuple[WallSpec, ...]
    holes: tuple[HoleSpec, ...] = ()
    require_heated_per_group: bool = True


class MapSpec(_Model):
    name: str
    box_min: Optional[Vec3] = None
    box_max: Optional[Vec3] = None
    priority: int = 0
    spacing: float = Field(0.1, gt=0)


class RatesSpec(_Model):
    dynamics: float = Field(100.0, gt=0)
    lidar: float = Field(10.0, gt=0)
    thermal: float = Field(9.0, gt=0)
    fsm: float = Field(20.0, gt=0)


class LidarSpec(_Model):
    model: Literal["os1_64", "vlp16"] = "os1_64"
    horizontal_steps: Optional[int] = Field(None, ge=1)
    hfov_deg: Optional[tuple[float, float]] = None
    range_noise: float = Field(0.01, ge=0)
    max_range: float = Field(50.0, gt=0)
    mount: PoseSpec = PoseSpec()


class ThermalSpec(_Model):
    fx: float = Field(115.0, gt=0)
    mount: PoseSpec = PoseSpec()  # camera pose in the body (UAV) or nozzle (UGV) frame, +x forward
    lower: float = 450.0
    upper: float = 5000.0
    min_area: int = Field(2, ge=1)
    max_area: int = Field(5000, ge=1)
    ambient: float = 300.0
    noise: float = Field(3.0, ge=0)
    extrinsics_error_deg: Vec3 = (0.0, 0.0, 0.0)
    lidar_box_margin_px: float = Field(0.0, ge=0)


class HoleDetectorSpec(_Model):
    enabled: bool = True
    max_range: float = Field(6.0, gt=0)
    forward_fov_deg: Optional[float] = 120.0
    min_score: float = Field(0.6, gt=0, le=1)


class GnssSpec(_Model):
    sigma: float = Field(0.05, ge=0)
    near_building_factor: float = Field(5.0, ge=0)
    near_building_distance: float = Field(1.5, ge=0)


class JetSpec(_Model):
    exit_speed: float = Field(gt=0)
    flow_rate: float = Field(0.1, gt=0)
    mount: PoseSpec = PoseSpec()  # nozzle pose in the body frame (UAV only)


class LimitsSpec(_Model):
    max_speed: Optional[float] = Field(None, gt=0)
    max_accel: Optional[float] = Field(None, gt=0)
    max_yaw_rate_deg: Optional[float] = Field(None, gt=0)
    gain: float = Field(1.5, gt=0)


class WaypointSpec(_Model):
    name: Optional[str] = None
    xyz: Vec3
    yaw_deg: float = 0.0
    kind: Literal["transfer", "observation"] = "transfer"
    hover: float = Field(2.0, ge=0)


class UavFsmSpec(_Model):
    pos_tol: float = Field(0.25, gt=0)
    yaw_tol_deg: float = Field(10.0, gt=0)
    altitude_corridor: tuple[float, float] = (1.0, 8.0)
    standoff: float = Field(2.1, gt=0)
    rise: float = 0.35
    required_streak: int = Field(5, ge=1)
    lost_timeout: float = Field(5.0, gt=0)


class SlotSpec(_Model):
    name: str
    route: tuple[WaypointSpec, ...]
    scan_center: PoseSpec


class UgvFsmSpec(_Model):
    water_budget_per_fire: float = Field(4.0, gt=0)
    scan_width: float = Field(0.5, gt=0)
    scan_height: float = Field(0.3, gt=0)
    scan_period: float = Field(8.0, gt=0)
    aim_standoff: float = Field(0.8, gt=0)
    spray_amplitude_deg: float = Field(3.0, ge=0)
    spray_period: float = Field(4.0, gt=0)


class CalibrationSpec(_Model):
    raw: tuple[float, ...] = ()
    corrected: tuple[float, ...] = ()


class FaultSpec(_Model):
    t: float = Field(ge=0)
    kind: Literal["localization_step"] = "localization_step"
    offset: Vec3 = (1.5, 0.0, 0.0)


class LocalizationSpec(_Model):
    initial_guess: Optional[PoseSpec] = None
    loss_timeout: float = Field(3.0, gt=0)


class RobotSpec(_Model):
    name: str
    kind: Literal["uav", "ugv"]
    spawn: PoseSpec
    water: float = Field(1.0, ge=0)
    lidar: LidarSpec = LidarSpec()
    thermal: ThermalSpec = ThermalSpec()
    holes: HoleDetectorSpec = HoleDetectorSpec()
    gnss: GnssSpec = GnssSpec()
    jet: JetSpec
    limits: LimitsSpec = LimitsSpec()
    localization: LocalizationSpec = LocalizationSpec()
    route: tuple[WaypointSpec, ...] = ()
    uav: UavFsmSpec = UavFsmSpec()
    slots: tuple[SlotSpec, ...] = ()
    ugv: UgvFsmSpec = UgvFsmSpec()
    element_size: float = Field(0.15, gt=0)
    calibration: CalibrationSpec = CalibrationSpec()
    faults: tuple[FaultSpec, ...] = ()


class Scenario(_Model):
    name: str = "scenario"
    seed: int = 0
    duration: float = Field(120.0, gt=0)
    rates: RatesSpec = RatesSpec()
    arena: ArenaSpec
    maps: tuple[MapSpec, ...] = ()
    robots: tuple[RobotSpec, ...] = Field(min_length=1)

    @field_validator("maps")
    @classmethod
    def _maps_unique(cls, v):
        names = [m.name for m in v]
        if len(set(names)) != len(names):
            raise ValueError("duplicate map names")
        return v

    def build_arena(self) -> ArenaModel:
        a = self.arena
        walls = tuple(Wall(w.name, w.corner, w.edge_u, w.edge_v, w.material, w.maps) for w in a.walls)
        holes = tuple(Hole(h.id, h.center, h.normal, h.diameter, h.recess_depth, h.heated, h.heat_temp,
                           h.enclosure) for h in a.holes)
        return ArenaModel(walls, holes, a.floor_z, a.bounds_min, a.bounds_max, a.floor, a.floor_maps)


def _segment_hits_wall(p0, p1, w: Wall) -> bool:
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    n, d = w.normal, w.offset
    s0, s1 = float(n @ p0) - d, float(n @ p1) - d
    if s0 * s1 > 0 or s0 == s1:
        return False
    x = p0 + (p1 - p0) * (s0 / (s0 - s1))
    return w.contains(x, tol=1e-6)


def _cross_checks(sc: Scenario) -> list[str]:
    errs: list[str] = []
    lo, hi = np.array(sc.arena.bounds_min), np.array(sc.arena.bounds_max)
    if np.any(lo >= hi):
        errs.append("arena.bounds_min must be below bounds_max on every axis")
    try:
        arena = sc.build_arena()
    except ValueError as exc:
        errs.append(f"arena: {exc}")
        arena = None

    names = [r.name for r in sc.robots]
    for n in sorted({n for n in names if names.count(n) > 1}):
        errs.append(f"duplicate robot name {n!r}")

    if sc.arena.require_heated_per_group:
        groups: dict[str, int] = {}
        for h in sc.arena.holes:
            if h.group is not None:
                groups[h.group] = groups.get(h.group, 0) + int(h.heated)
        for g, k in sorted(groups.items()):
            if k != 1:
                errs.append(f"fire group {g!r} has {k} heated holes; expected exactly one")

    def inside(p):
        return bool(np.all(np.asarray(p) >= lo) and np.all(np.asarray(p) <= hi))

    map_names = {m.name for m in sc.maps}
    opaque = [w for w in (arena.walls if arena else ()) if w.material == "opaque"]
    for r in sc.robots:
        if not inside(r.spawn.xyz):
            errs.append(f"robot {r.name!r}: spawn {list(r.spawn.xyz)} outside arena bounds")
        routes = [("route", r.route)] + [(f"slot {s.name!r}", s.route) for s in r.slots]
        for label, route in routes:
            for i, wp in enumerate(route):
                if not inside(wp.xyz):
                    nm = wp.name or f"#{i}"
                    errs.append(f"robot {r.name!r}: {label} waypoint {nm} {list(wp.xyz)} outside arena bounds")
        if r.kind == "uav":
            if not r.route:
                errs.append(f"robot {r.name!r}: UAV needs a route")
            zlo, zhi = r.uav.altitude_corridor
            if zlo >= zhi:
                errs.append(f"robot {r.name!r}: altitude corridor is empty")
            for i, wp in enumerate(r.route):
                if not zlo <= wp.xyz[2] <= zhi:
                    errs.append(f"robot {r.name!r}: route waypoint {wp.name or f'#{i}'} outside altitude corridor")
            # route legs must stay clear of the building
            for i in range(len(r.route)):
                a, b = r.route[i].xyz, r.route[(i + 1) % len(r.route)].xyz
                for w in opaque:
                    if _segment_hits_wall(a, b, w):
                        errs.append(f"robot {r.name!r}: route leg {i}->{(i + 1) % len(r.route)} crosses wall {w.name!r}")
                        break
        else:
            if len(r.slots) != 2:
                errs.append(f"robot {r.name!r}: UGV needs exactly two fire slots")
            if r.spawn.rpy_deg[0] != 0 or r.spawn.rpy_deg[1] != 0:
                errs.append(f"robot {r.name!r}: UGV spawn must have zero roll and pitch")
        cal = r.calibration
        if len(cal.raw) != len(cal.corrected) or any(b <= a for a, b in zip(cal.raw, cal.raw[1:])) \
                or any(b <= a for a, b in zip(cal.corrected, cal.corrected[1:])):
            errs.append(f"robot {r.name!r}: calibration table must be two strictly increasing columns of equal length")
    if not sc.maps:
        errs.append("at least one reference map is required")
    elif arena is not None:
        for m in sc.maps:
            tagged = [w for w in arena.facets() if w.material == "opaque" and (not w.maps or m.name in w.maps)]
            if not tagged:
                errs.append(f"map {m.name!r} has no opaque facets")
    for w in sc.arena.walls:
        for t in w.maps:
            if t not in map_names:
                errs.append(f"wall {w.name!r} references unknown map {t!r}")
    return errs


def parse_scenario(text: str) -> Scenario:
    """Parse and validate a scenario document."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"parse error at line {exc.lineno} column {exc.colno}: {exc.msg}"]) from exc
    try:
        sc = Scenario.model_validate(raw)
    except ValidationError as exc:
        errs = []
        for e in exc.errors():
            loc = ".".join(str(p) for p in e["loc"])
            errs.append(f"{loc}: {e['msg']}")
        raise ScenarioError(errs) from exc
    errs = _cross_checks(sc)
    if errs:
        raise ScenarioError(errs)
    return sc


def load_scenario(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scenario(fh.read())


def pose_from_spec(spec: PoseSpec) -> Pose:
    r, p, y = (math.radians(a) for a in spec.rpy_deg)
    return Pose.from_xyz_rpy(spec.xyz, r, p, y)
