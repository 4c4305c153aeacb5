"""Synthetic arena: walls, holes, heat sources, sensors, kinematics, GNSS drift and the water jet.

This module is the ground truth every perception and mission test is checked
against. Rendering is vectorized over rays; all randomness comes from an
explicit seed or generator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from .geometry import PinholeCamera, PointCloud, Pose, pixel_ray, rot_z, rotvec_to_matrix, matrix_to_rotvec
from .thermal import ThermalImage

SeedLike = Union[int, np.random.Generator, Sequence[int]]

GRAVITY = 9.81


def make_rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# --- world model -----------------------------------------------------------------------

@dataclass(frozen=True)
class Wall:
    """Rectangular facet {corner + a*edge_u + b*edge_v : a, b in [0, 1]}."""

    name: str
    corner: np.ndarray
    edge_u: np.ndarray
    edge_v: np.ndarray
    material: str = "opaque"  # "opaque" | "acrylic"
    maps: tuple[str, ...] = ()

    def __post_init__(self):
        for attr in ("corner", "edge_u", "edge_v"):
            a = np.asarray(getattr(self, attr), dtype=float).reshape(3)
            a.setflags(write=False)
            object.__setattr__(self, attr, a)
        if np.linalg.norm(np.cross(self.edge_u, self.edge_v)) < 1e-9:
            raise ValueError(f"wall {self.name!r} has parallel edges")
        if self.material not in ("opaque", "acrylic"):
            raise ValueError(f"unknown wall material {self.material!r}")

    @property
    def normal(self) -> np.ndarray:
        n = np.cross(self.edge_u, self.edge_v)
        return n / np.linalg.norm(n)

    @property
    def offset(self) -> float:
        return float(self.normal @ self.corner)

    @property
    def center(self) -> np.ndarray:
        return self.corner + 0.5 * (self.edge_u + self.edge_v)

    def contains(self, p, tol: float = 1e-3) -> bool:
        p = np.asarray(p, dtype=float)
        if abs(float(self.normal @ p) - self.offset) > tol:
            return False
        d = p - self.corner
        a = float(d @ self.edge_u) / float(self.edge_u @ self.edge_u)
        b = float(d @ self.edge_v) / float(self.edge_v @ self.edge_v)
        tu = tol / float(np.linalg.norm(self.edge_u))
        tv = tol / float(np.linalg.norm(self.edge_v))
        return -tu <= a <= 1 + tu and -tv <= b <= 1 + tv


@dataclass(frozen=True)
class Hole:
    id: str
    center: np.ndarray
    normal: np.ndarray
    diameter: float = 0.15
    recess_depth: float = 0.10
    heated: bool = False
    heat_temp: float = 600.0
    enclosure: str = "none"  # "none" | "acrylic"

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(3)
        n = np.asarray(self.normal, dtype=float).reshape(3)
        n = n / np.linalg.norm(n)
        c.setflags(write=False)
        n.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "normal", n)
        if self.diameter <= 0 or self.recess_depth < 0:
            raise ValueError(f"hole {self.id!r}: bad diameter or recess depth")
        if self.enclosure not in ("none", "acrylic"):
            raise ValueError(f"hole {self.id!r}: unknown enclosure {self.enclosure!r}")

    @property
    def radius(self) -> float:
        return 0.5 * self.diameter

    @property
    def plate_center(self) -> np.ndarray:
        return self.center - self.recess_depth * self.normal

    @property
    def back_radius(self) -> float:
        # cavity back wall; wider than the opening so oblique rays still terminate
        return self.diameter


@dataclass(frozen=True)
class ArenaModel:
    walls: tuple[Wall, ...]
    holes: tuple[Hole, ...] = ()
    floor_z: float = 0.0
    bounds_min: np.ndarray = field(default_factory=lambda: np.array([-50.0, -50.0, -1.0]))
    bounds_max: np.ndarray = field(default_factory=lambda: np.array([50.0, 50.0, 30.0]))
    floor: bool = True
    floor_maps: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "walls", tuple(self.walls))
        object.__setattr__(self, "holes", tuple(self.holes))
        object.__setattr__(self, "bounds_min", np.asarray(self.bounds_min, dtype=float).reshape(3))
        object.__setattr__(self, "bounds_max", np.asarray(self.bounds_max, dtype=float).reshape(3))
        hole_wall = []
        for h in self.holes:
            owners = [i for i, w in enumerate(self.walls) if w.contains(h.center)]
            if len(owners) != 1:
                raise ValueError(f"hole {h.id!r} lies on {len(owners)} wall facets; expected exactly one")
            w = self.walls[owners[0]]
            if abs(abs(float(w.normal @ h.normal)) - 1.0) > 1e-6:
                raise ValueError(f"hole {h.id!r} normal is not perpendicular to wall {w.name!r}")
            if (h.enclosure == "acrylic") != (w.material == "acrylic"):
                raise ValueError(f"hole {h.id!r} enclosure does not match wall {w.name!r} material")
            hole_wall.append(owners[0])
        object.__setattr__(self, "_hole_wall", tuple(hole_wall))
        object.__setattr__(self, "_cache", {})

    def hole_wall(self, hole_index: int) -> Wall:
        return self.walls[self._hole_wall[hole_index]]

    def facets(self) -> tuple[Wall, ...]:
        """Walls plus the floor facet covering the arena footprint."""
        if not self.floor:
            return self.walls
        lo, hi = self.bounds_min, self.bounds_max
        floor = Wall("floor", [lo[0], lo[1], self.floor_z], [hi[0] - lo[0], 0, 0], [0, hi[1] - lo[1], 0],
                     "opaque", self.floor_maps)
        return self.walls + (floor,)

    def hole(self, hole_id: str) -> Hole:
        for h in self.holes:
            if h.id == hole_id:
                return h
        raise KeyError(hole_id)

    def in_bounds(self, p, margin: float = 0.0) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= self.bounds_min - margin) and np.all(p <= self.bounds_max + margin))

    def _tables(self):
        """Stacked facet / hole arrays used by the raycaster (cached)."""
        if "tables" in self._cache:
            return self._cache["tables"]
        facets = self.facets()
        F = len(facets)
        N = np.array([f.normal for f in facets])
        D = np.array([f.offset for f in facets])
        C = np.array([f.corner for f in facets])
        U = np.array([f.edge_u for f in facets])
        V = np.array([f.edge_v for f in facets])
        UU = np.einsum("ij,ij->i", U, U)
        VV = np.einsum("ij,ij->i", V, V)
        acrylic = np.array([f.material == "acrylic" for f in facets])
        hole_facet = np.array(self._hole_wall, dtype=np.int64) if self.holes else np.zeros(0, np.int64)
        tables = dict(F=F, N=N, D=D, C=C, U=U, V=V, UU=UU, VV=VV, acrylic=acrylic, hole_facet=hole_facet)
        self._cache["tables"] = tables
        return tables


# --- raycasting --------------------------------------------------------------------------

def _facet_hits(arena: ArenaModel, o: np.ndarray, d: np.ndarray):
    """Per-ray, per-facet hit distance (inf where no hit) and hole-aperture membership.

    Returns (t (R, F), in_hole (R, F) bool, hole_index (R, F) int, -1 if none).
    """
    tb = arena._tables()
    denom = d @ tb["N"].T
    num = tb["D"][None, :] - (o @ tb["N"].T if o.ndim == 2 else (tb["N"] @ o)[None, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(np.abs(denom) > 1e-12, num / denom, np.inf)
    t = np.where(t > 1e-9, t, np.inf)
    # local facet coordinates at the hit point
    oc = (o[None, :] - tb["C"]) if o.ndim == 1 else None
    tt = np.where(np.isfinite(t), t, 0.0)
    if o.ndim == 1:
        a = ((oc * tb["U"]).sum(1)[None, :] + tt * (d @ tb["U"].T)) / tb["UU"]
        b = ((oc * tb["V"]).sum(1)[None, :] + tt * (d @ tb["V"].T)) / tb["VV"]
    else:
        a = (np.einsum("rk,fk->rf", o, tb["U"]) - (tb["C"] * tb["U"]).sum(1) + tt * (d @ tb["U"].T)) / tb["UU"]
        b = (np.einsum("rk,fk->rf", o, tb["V"]) - (tb["C"] * tb["V"]).sum(1) + tt * (d @ tb["V"].T)) / tb["VV"]
    finite = np.isfinite(t)
    inside = finite & (a >= 0) & (a <= 1) & (b >= 0) & (b <= 1)
    t = np.where(inside, t, np.inf)
    in_hole = np.zeros(t.shape, dtype=bool)
    hole_idx = np.full(t.shape, -1, dtype=np.int64)
    for k, h in enumerate(arena.holes):
        f = tb["hole_facet"][k]
        tf = t[:, f]
        ok = np.isfinite(tf)
        if not ok.any():
            continue
        p = (o if o.ndim == 1 else o[ok]) + tf[ok, None] * d[ok]
        r2 = ((p - h.center) ** 2).sum(1)
        hit = np.zeros(t.shape[0], dtype=bool)
        hit[np.flatnonzero(ok)[r2 <= h.radius ** 2]] = True
        in_hole[hit, f] = True
        hole_idx[hit, f] = k
    return t, in_hole, hole_idx


def _disk_hits(o: np.ndarray, d: np.ndarray, center: np.ndarray, normal: np.ndarray, radius: float):
    denom = d @ normal
    num = float(normal @ center) - (o @ normal if o.ndim == 2 else float(normal @ o))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(np.abs(denom) > 1e-12, num / denom, np.inf)
    t = np.where(t > 1e-9, t, np.inf)
    ok = np.isfinite(t)
    p = o + np.where(ok, t, 0.0)[:, None] * d
    r2 = ((p - center) ** 2).sum(1)
    return np.where(ok & (r2 <= radius ** 2), t, np.inf), r2


def raycast_lidar(arena: ArenaModel, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """First opaque-surface distance along each unit ray (inf on miss).

    Acrylic facets are invisible; ray segments through a hole opening continue
    to the cavity back behind it.
    """
    t, in_hole, _ = _facet_hits(arena, origin, dirs)
    tb = arena._tables()
    t = np.where(in_hole | tb["acrylic"][None, :], np.inf, t)
    best = t.min(axis=1) if t.shape[1] else np.full(dirs.shape[0], np.inf)
    for h in arena.holes:
        tback, _ = _disk_hits(origin, dirs, h.plate_center, h.normal, h.back_radius)
        best = np.minimum(best, tback)
    return best


# --- LiDAR -------------------------------------------------------------------------------

@dataclass(frozen=True)
class LidarConfig:
    rings: int = 64
    horizontal_steps: int = 1024
    vfov_deg: tuple[float, float] = (-16.6, 16.6)
    hfov_deg: tuple[float, float] = (-180.0, 180.0)
    max_range: float = 50.0
    min_range: float = 0.0
    range_noise: float = 0.01
    mount: Pose = field(default_factory=Pose)

    def __post_init__(self):
        if self.rings < 1 or self.horizontal_steps < 1:
            raise ValueError("rings and horizontal_steps must be >= 1")
        if self.range_noise < 0:
            raise ValueError("range noise must be non-negative")

    @classmethod
    def os1_64(cls, mount: Optional[Pose] = None, **kw) -> "LidarConfig":
        kw = {"rings": 64, "horizontal_steps": 1024, "vfov_deg": (-16.6, 16.6), "min_range": 0.8, **kw}
        return cls(mount=mount or Pose(), **kw)

    @classmethod
    def vlp16(cls, mount: Optional[Pose] = None, **kw) -> "LidarConfig":
        kw = {"rings": 16, "horizontal_steps": 900, "vfov_deg": (-15.0, 15.0), "min_range": 0.4, **kw}
        return cls(mount=mount or Pose(), **kw)

    def ray_directions(self) -> np.ndarray:
        el = np.radians(np.linspace(self.vfov_deg[0], self.vfov_deg[1], self.rings)) if self.rings > 1 \
            else np.radians([0.5 * (self.vfov_deg[0] + self.vfov_deg[1])])
        lo, hi = np.radians(self.hfov_deg)
        full = math.isclose(hi - lo, 2 * math.pi)
        az = np.linspace(lo, hi, self.horizontal_steps, endpoint=not full)
        E, A = np.meshgrid(el, az, indexing="ij")
        return np.stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)], axis=-1).reshape(-1, 3)


def render_lidar(arena: ArenaModel, sensor_pose: Pose, config: LidarConfig, rng_seed: SeedLike = 0) -> PointCloud:
    """One return per ray at the first surface, plus Gaussian range noise.

    Points are returned in the sensor frame. ``sensor_pose`` is the LiDAR pose
    in the arena frame (mount already applied by the caller).
    """
    rng = make_rng(rng_seed)
    dirs_s = config.ray_directions()
    dirs_w = sensor_pose.apply_vector(dirs_s)
    t = raycast_lidar(arena, sensor_pose.translation, dirs_w)
    noise = rng.normal(0.0, config.range_noise, size=t.shape) if config.range_noise > 0 else np.zeros(t.shape)
    rng_meas = t + noise
    keep = np.isfinite(t) & (rng_meas <= config.max_range) & (rng_meas >= config.min_range) & (rng_meas > 0)
    pts = dirs_s[keep] * rng_meas[keep, None]
    return PointCloud(pts, np.full(pts.shape[0], 100.0), "lidar")


# --- thermal -----------------------------------------------------------------------------

@dataclass(frozen=True)
class ThermalParams:
    ambient: float = 300.0
    noise: float = 3.0
    supersample: int = 3
    acrylic_transmission: float = 0.1


def _heat_fraction(arena: ArenaModel, origin: np.ndarray, dirs: np.ndarray, params: ThermalParams) -> np.ndarray:
    """Per-ray added heat above ambient (0 where no heated plate is seen)."""
    t, in_hole, _ = _facet_hits(arena, origin, dirs)
    tb = arena._tables()
    opaque_t = np.where(in_hole | tb["acrylic"][None, :], np.inf, t)
    t_block = opaque_t.min(axis=1) if opaque_t.shape[1] else np.full(dirs.shape[0], np.inf)
    backs = [(_disk_hits(origin, dirs, h.plate_center, h.normal, h.back_radius)) for h in arena.holes]
    heat = np.zeros(dirs.shape[0])
    for k, h in enumerate(arena.holes):
        if not h.heated:
            continue
        tback, r2 = backs[k]
        others = t_block.copy()
        for j, (tb_j, _) in enumerate(backs):
            if j != k:
                others = np.minimum(others, tb_j)
        hot = np.isfinite(tback) & (r2 <= h.radius ** 2) & (tback < others)
        if not hot.any():
            continue
        gain = np.full(dirs.shape[0], h.heat_temp - params.ambient)
        f = tb["hole_facet"][k]
        if tb["acrylic"][f]:
            # through the acrylic outside the opening only a fraction of the IR survives
            crossed = np.isfinite(t[:, f]) & (t[:, f] < tback) & ~in_hole[:, f]
            gain = np.where(crossed, gain * params.acrylic_transmission, gain)
        # other acrylic sheets in between attenuate as well
        for j in np.flatnonzero(tb["acrylic"]):
            if j == f:
                continue
            crossed = np.isfinite(t[:, j]) & (t[:, j] < tback) & ~in_hole[:, j]
            gain = np.where(crossed, gain * params.acrylic_transmission, gain)
        heat = np.where(hot, heat + gain, heat)
    return heat


def render_thermal(arena: ArenaModel, camera_pose: Pose, camera: PinholeCamera, rng_seed: SeedLike = 0,
                   params: ThermalParams = ThermalParams(), timestamp: float = 0.0) -> ThermalImage:
    """Scalar intensity image: ambient everywhere except heated plates seen through their openings.

    Each pixel averages ``supersample``**2 sub-rays, so partially covered
    pixels get intermediate values. Only image windows around heated plates
    are raycast.
    """
    rng = make_rng(rng_seed)
    H, W = camera.height, camera.width
    img = np.full((H, W), params.ambient)
    inv = camera_pose.inverse()
    s = max(1, int(params.supersample))
    for h in arena.holes:
        if not h.heated:
            continue
        pc = inv.apply(h.plate_center)
        reach = h.diameter + h.recess_depth
        if pc[2] <= reach:
            if np.linalg.norm(pc) > 3 * reach:
                continue
            u0, u1, v0, v1 = 0, W - 1, 0, H - 1
        else:
            ru = camera.fx * reach / (pc[2] - reach) + 2
            rv = camera.fy * reach / (pc[2] - reach) + 2
            uc = camera.fx * pc[0] / pc[2] + camera.cx
            vc = camera.fy * pc[1] / pc[2] + camera.cy
            u0, u1 = int(max(0, math.floor(uc - ru))), int(min(W - 1, math.ceil(uc + ru)))
            v0, v1 = int(max(0, math.floor(vc - rv))), int(min(H - 1, math.ceil(vc + rv)))
            if u0 > u1 or v0 > v1:
                continue
        offs = (np.arange(s) + 0.5) / s - 0.5
        uu = np.arange(u0, u1 + 1)[None, :, None, None] + offs[None, None, None, :]
        vv = np.arange(v0, v1 + 1)[:, None, None, None] + offs[None, None, :, None]
        uu, vv = np.broadcast_arrays(uu, vv)
        rays_c = pixel_ray(camera, uu.reshape(-1), vv.reshape(-1))
        rays_w = camera_pose.apply_vector(rays_c)
        heat = _heat_fraction(arena, camera_pose.translation, rays_w, params)
        block = heat.reshape(v1 - v0 + 1, u1 - u0 + 1, s * s).mean(axis=2)
        img[v0:v1 + 1, u0:u1 + 1] = np.maximum(img[v0:v1 + 1, u0:u1 + 1], params.ambient + block)
    if params.noise > 0:
        img = img + rng.normal(0.0, params.noise, size=img.shape)
    return ThermalImage(img, timestamp)


# --- kinematics --------------------------------------------------------------------------

@dataclass(frozen=True)
class RobotState:
    true_pose: Pose
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    kind: str = "uav"
    water_remaining: float = 0.0
    pump_on: bool = False
    arm_pose: Optional[Pose] = None
    yaw_rate: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.velocity, dtype=float).reshape(3)
        v.setflags(write=False)
        object.__setattr__(self, "velocity", v)
        if self.water_remaining < 0:
            raise ValueError("water_remaining must be >= 0")
        if self.kind not in ("uav", "ugv"):
            raise ValueError(f"unknown robot kind {self.kind!r}")


@dataclass(frozen=True)
class VelocityCommand:
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    yaw_rate: float = 0.0


@dataclass(frozen=True)
class WaypointCommand:
    position: tuple[float, float, float]
    yaw: Optional[float] = None


@dataclass(frozen=True)
class MotionLimits:
    max_speed: Optional[float] = None  # per axis, m/s
    max_accel: Optional[float] = None  # per axis, m/s^2
    max_yaw_rate: Optional[float] = None  # rad/s
    gain: float = 1.5  # 1/s, waypoint tracking
    yaw_gain: float = 2.0


def _clip(v: np.ndarray, cap: Optional[float]) -> np.ndarray:
    return v if cap is None else np.clip(v, -cap, cap)


def step_dynamics(state: RobotState, command, dt: float, limits: MotionLimits = MotionLimits()) -> RobotState:
    """First-order motion toward a commanded velocity or waypoint."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    pos = state.true_pose.translation
    yaw = state.true_pose.yaw
    if isinstance(command, WaypointCommand):
        err = np.asarray(command.position, dtype=float) - pos
        v_des = _clip(limits.gain * err, limits.max_speed)
        # never overshoot the waypoint within one step
        v_des = np.where(np.abs(v_des) * dt > np.abs(err), err / dt, v_des)
        if command.yaw is None:
            yr_des = 0.0
        else:
            yerr = (command.yaw - yaw + math.pi) % (2 * math.pi) - math.pi
            yr_des = limits.yaw_gain * yerr
            if abs(yr_des) * dt > abs(yerr):
                yr_des = yerr / dt
    elif isinstance(command, VelocityCommand):
        v_des = _clip(np.asarray(command.velocity, dtype=float), limits.max_speed)
        yr_des = float(command.yaw_rate)
    else:
        raise TypeError(f"unsupported command {type(command).__name__}")
    if limits.max_yaw_rate is not None:
        yr_des = max(-limits.max_yaw_rate, min(limits.max_yaw_rate, yr_des))

    dv = v_des - state.velocity
    if limits.max_accel is not None:
        dv = np.clip(dv, -limits.max_accel * dt, limits.max_accel * dt)
    vel = state.velocity + dv
    if state.kind == "ugv":
        vel = np.array([vel[0], vel[1], 0.0])
    new_pos = pos + vel * dt
    new_yaw = yaw + yr_des * dt
    if state.kind == "ugv":
        new_pose = Pose(rot_z(new_yaw), [new_pos[0], new_pos[1], pos[2]])
    else:
        roll, pitch, _ = state.true_pose.rpy()
        new_pose = Pose.from_xyz_rpy(new_pos, roll, pitch, new_yaw)
    return replace(state, true_pose=new_pose, velocity=vel, yaw_rate=yr_des)


def step_arm(arm_pose: Pose, target: Pose, dt: float, max_speed: float = 0.3,
             max_rot_rate: float = math.radians(60)) -> Pose:
    """Move the nozzle pose toward ``target`` with translation and rotation rate caps."""
    dp = target.translation - arm_pose.translation
    dist = float(np.linalg.norm(dp))
    step = max_speed * dt
    new_t = target.translation if dist <= step else arm_pose.translation + dp * (step / dist)
    rel = matrix_to_rotvec(target.rotation @ arm_pose.rotation.T)
    ang = float(np.linalg.norm(rel))
    rstep = max_rot_rate * dt
    if ang <= rstep:
        new_R = target.rotation
    else:
        new_R = rotvec_to_matrix(rel * (rstep / ang)) @ arm_pose.rotation
    return Pose(new_R, new_t)


# --- water jet ---------------------------------------------------------------------------

@dataclass(frozen=True)
class JetModel:
    exit_speed: float
    exit_pose: Pose = field(default_factory=Pose)
    flow_rate: float = 0.1
    gravity: float = GRAVITY

    def __post_init__(self):
        if self.exit_speed <= 0 or self.flow_rate <= 0:
            raise ValueError("exit_speed and flow_rate must be positive")

    def at(self, exit_pose: Pose) -> "JetModel":
        return replace(self, exit_pose=exit_pose)

    def position(self, t: float) -> np.ndarray:
        v0 = self.exit_speed * self.exit_pose.rotation[:, 0]
        return self.exit_pose.translation + v0 * t + 0.5 * np.array([0, 0, -self.gravity]) * t * t


@dataclass(frozen=True)
class JetResult:
    hit_point: Optional[np.ndarray]
    hole_hit: Optional[str]
    water_delivered: float
    flight_time: float = math.inf


def _first_positive_root(a: float, b: float, c: float) -> float:
    if abs(a) < 1e-15:
        if abs(b) < 1e-15:
            return math.inf
        t = -c / b
        return t if t > 1e-9 else math.inf
    disc = b * b - 4 * a * c
    if disc < 0:
        return math.inf
    sq = math.sqrt(disc)
    roots = sorted(((-b - sq) / (2 * a), (-b + sq) / (2 * a)))
    for r in roots:
        if r > 1e-9:
            return r
    return math.inf


def simulate_jet(jet: JetModel, arena: ArenaModel, duration: float) -> JetResult:
    """Ballistic arc of the jet; first surface crossing decides where the water lands.

    Water is credited to a hole only when the arc crosses its opening before
    touching anything else.
    """
    if duration < 0:
        raise ValueError("duration must be >= 0")
    p0 = jet.exit_pose.translation
    v0 = jet.exit_speed * jet.exit_pose.rotation[:, 0]
    g = np.array([0.0, 0.0, -jet.gravity])
    best_t, best = math.inf, None
    facets = arena.facets()
    for fi, f in enumerate(facets):
        n = f.normal
        t = _first_positive_root(0.5 * float(n @ g), float(n @ v0), float(n @ p0) - f.offset)
        while math.isfinite(t) and t < best_t:
            p = p0 + v0 * t + 0.5 * g * t * t
            if f.contains(p, tol=1e-9):
                best_t, best = t, (fi, p)
                break
            # the arc may cross the same infinite plane twice; try the second crossing
            a, b, c = 0.5 * float(n @ g), float(n @ v0), float(n @ p0) - f.offset
            disc = b * b - 4 * a * c
            if abs(a) < 1e-15 or disc < 0:
                break
            sq = math.sqrt(disc)
            t2 = max((-b - sq) / (2 * a), (-b + sq) / (2 * a))
            if t2 <= t + 1e-12:
                break
            t = t2
    if best is None:
        return JetResult(None, None, 0.0)
    fi, p = best
    hole_hit = None
    if fi < len(arena.walls):
        for k, h in enumerate(arena.holes):
            if arena._hole_wall[k] == fi and float(np.sum((p - h.center) ** 2)) <= h.radius ** 2:
                hole_hit = h.id
                break
    delivered = jet.flow_rate * duration if hole_hit is not None else 0.0
    return JetResult(p, hole_hit, delivered, best_t)


def level_exit_speed(horizontal_distance: float, drop: float, gravity: float = GRAVITY) -> float:
    """Exit speed of a level jet that falls ``drop`` over ``horizontal_distance``."""
    return horizontal_distance * math.sqrt(gravity / (2.0 * drop))


# --- GNSS --------------------------------------------------------------------------------

@dataclass(frozen=True)
class GnssParams:
    sigma: float = 0.05  # m / sqrt(s), per axis
    dt: float = 0.01
    near_building_factor: float = 5.0
    bound: float = 100.0
    vertical_scale: float = 1.0


def gnss_measure(true_pose: Pose, drift_state, rng_seed: SeedLike, near_building: bool = False,
                 params: GnssParams = GnssParams()) -> tuple[Pose, np.ndarray]:
    """Advance the drift random walk by ``params.dt`` and return the drifted pose.

    Drift is a world-frame translation added to the true position; heading is
    not perturbed.
    """
    rng = make_rng(rng_seed)
    drift = np.zeros(3) if drift_state is None else np.asarray(drift_state, dtype=float).copy()
    sigma = params.sigma * (params.near_building_factor if near_building else 1.0)
    if sigma > 0:
        step = rng.normal(0.0, sigma * math.sqrt(params.dt), size=3)
        step[2] *= params.vertical_scale
        drift = drift + step
        norm = float(np.linalg.norm(drift))
        if norm > params.bound:
            drift *= params.bound / norm
    measured = Pose(true_pose.rotation, true_pose.translation + drift)
    return measured, drift
