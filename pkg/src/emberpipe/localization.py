"""Scan-to-map registration and drift-offset bookkeeping.

The robot's own motion estimate (GNSS for the UAV, wheel odometry for the
UGV) drifts. Registering LiDAR scans against a reference cloud of the arena
yields an offset that maps the ego estimate into the field frame; the offset
is only allowed to move in small increments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .arena import ArenaModel
from .geometry import PointCloud, Pose, voxel_downsample


class RegistrationFailure(RuntimeError):
    pass


class LocalizationError(RuntimeError):
    """Localization was queried before the first accepted offset."""


class NoMapError(LookupError):
    pass


@dataclass(frozen=True)
class ReferenceMap:
    """Reference cloud in the field frame with per-point normals."""

    name: str
    points: np.ndarray
    normals: np.ndarray
    box_min: np.ndarray = field(default_factory=lambda: np.full(3, -np.inf))
    box_max: np.ndarray = field(default_factory=lambda: np.full(3, np.inf))
    priority: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        nrm = np.asarray(self.normals, dtype=float).reshape(-1, 3)
        if pts.shape[0] == 0:
            raise ValueError(f"map {self.name!r} is empty")
        if nrm.shape != pts.shape:
            raise ValueError("normals must match points")
        nrm = nrm / np.linalg.norm(nrm, axis=1, keepdims=True)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "normals", nrm)
        object.__setattr__(self, "box_min", np.asarray(self.box_min, dtype=float).reshape(3))
        object.__setattr__(self, "box_max", np.asarray(self.box_max, dtype=float).reshape(3))
        object.__setattr__(self, "_tree", cKDTree(pts))

    @property
    def tree(self) -> cKDTree:
        return self._tree

    def contains(self, p, margin: float = 0.0) -> bool:
        """Whether ``p`` lies in the activation box grown by ``margin`` (shrunk if negative)."""
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= self.box_min - margin) and np.all(p <= self.box_max + margin))

    def cloud(self) -> PointCloud:
        return PointCloud(self.points, frame_id="field")


def map_from_arena(arena: ArenaModel, name: str, spacing: float = 0.1, box_min=None, box_max=None,
                   priority: int = 0, include_floor: bool = True) -> ReferenceMap:
    """Sample the opaque facets tagged for ``name`` (untagged facets belong to every map).

    Hole apertures are left out of the sample, acrylic is skipped since the
    LiDAR does not see it.
    """
    pts, nrm = [], []
    facets = arena.facets() if include_floor and arena.floor else arena.walls
    for k, f in enumerate(facets):
        if f.material != "opaque" or (f.maps and name not in f.maps):
            continue
        lu, lv = float(np.linalg.norm(f.edge_u)), float(np.linalg.norm(f.edge_v))
        nu, nv = max(2, int(math.ceil(lu / spacing)) + 1), max(2, int(math.ceil(lv / spacing)) + 1)
        a, b = np.meshgrid(np.linspace(0, 1, nu), np.linspace(0, 1, nv), indexing="ij")
        p = f.corner + a.reshape(-1, 1) * f.edge_u + b.reshape(-1, 1) * f.edge_v
        keep = np.ones(p.shape[0], dtype=bool)
        for hi, h in enumerate(arena.holes):
            if k < len(arena.walls) and arena._hole_wall[hi] == k:
                keep &= np.linalg.norm(p - h.center, axis=1) > h.radius
        p = p[keep]
        pts.append(p)
        nrm.append(np.repeat(f.normal[None, :], p.shape[0], axis=0))
    if not pts:
        raise ValueError(f"no facets belong to map {name!r}")
    lo = arena.bounds_min if box_min is None else box_min
    hi = arena.bounds_max if box_max is None else box_max
    return ReferenceMap(name, np.concatenate(pts), np.concatenate(nrm), lo, hi, priority)


@dataclass(frozen=True)
class IcpParams:
    iterations: int = 20
    gate_start: float = 0.5
    gate_end: float = 0.1
    voxel: float = 0.15
    min_inlier_fraction: float = 0.4
    max_rms: float = 0.15


@dataclass(frozen=True)
class Registration:
    pose: Pose
    rms: float
    inlier_fraction: float
    iterations: int


def register_scan(scan: PointCloud | np.ndarray, ref: ReferenceMap, initial: Pose,
                  params: IcpParams = IcpParams()) -> Registration:
    """Point-to-plane ICP of ``scan`` (sensor frame) against ``ref``.

    Returns the sensor pose in the map frame. The correspondence gate shrinks
    linearly from ``gate_start`` to ``gate_end`` over the iterations.
    """
    pts = scan.points if isinstance(scan, PointCloud) else np.asarray(scan, dtype=float).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise ValueError("scan is empty")
    if params.voxel > 0:
        pts = voxel_downsample(pts, params.voxel)
    pose = initial
    n_it = max(1, params.iterations)
    for it in range(n_it):
        gate = params.gate_start + (params.gate_end - params.gate_start) * it / max(1, n_it - 1)
        world = pose.apply(pts)
        dist, idx = ref.tree.query(world, distance_upper_bound=gate)
        ok = np.isfinite(dist)
        if np.count_nonzero(ok) < 6:
            break
        p, q, n = world[ok], ref.points[idx[ok]], ref.normals[idx[ok]]
        A = np.hstack([np.cross(p, n), n])
        b = np.einsum("ij,ij->i", q - p, n)
        # small damping keeps directions the geometry does not constrain at zero
        H = A.T @ A + 1e-6 * np.eye(6)
        x = np.linalg.solve(H, A.T @ b)
        pose = Pose.from_rotvec(x[:3], x[3:]) @ pose
        if np.linalg.norm(x) < 1e-9:
            break

    world = pose.apply(pts)
    dist, idx = ref.tree.query(world, distance_upper_bound=params.gate_end)
    ok = np.isfinite(dist)
    frac = float(np.mean(ok))
    if np.any(ok):
        r = np.einsum("ij,ij->i", world[ok] - ref.points[idx[ok]], ref.normals[idx[ok]])
        rms = float(np.sqrt(np.mean(r * r)))
    else:
        rms = math.inf
    if frac < params.min_inlier_fraction or rms > params.max_rms:
        raise RegistrationFailure(f"inlier fraction {frac:.2f}, rms {rms:.3f} m")
    return Registration(pose, rms, frac, it + 1)


@dataclass(frozen=True)
class LocalizationState:
    offset: Optional[Pose] = None  # field <- ego-estimate frame
    last_localized_pose: Optional[Pose] = None
    last_update_time: float = -math.inf
    active_map: str = ""
    stale: bool = False
    accepted: int = 0
    rejected: int = 0
    last_delta: float = 0.0  # translation of the most recent accepted change

    @property
    def initialized(self) -> bool:
        return self.offset is not None


def update_offset(state: LocalizationState, registered: Pose, ego_estimate: Pose, now: float = 0.0,
                  max_translation: float = 0.30, max_rotation_deg: float = 5.0) -> LocalizationState:
    """Accept or reject a new offset candidate.

    The first candidate is always taken; later ones must stay within the
    translation and rotation bounds of the current offset.
    """
    cand = registered @ ego_estimate.inverse()
    if state.offset is None:
        return replace(state, offset=cand, last_localized_pose=registered, last_update_time=now,
                       stale=False, accepted=state.accepted + 1, last_delta=0.0)
    dt = cand.distance_to(state.offset)
    dr = math.degrees(cand.angle_to(state.offset))
    if dt < max_translation and dr < max_rotation_deg:
        return replace(state, offset=cand, last_localized_pose=registered, last_update_time=now,
                       stale=False, accepted=state.accepted + 1, last_delta=dt)
    return replace(state, stale=True, rejected=state.rejected + 1)


def localize(state: LocalizationState, ego_estimate: Pose) -> Pose:
    if state.offset is None:
        raise LocalizationError("no offset has been accepted yet")
    return state.offset @ ego_estimate


def detect_jump(previous_localized: Pose, new_localized: Pose, threshold: float = 1.0) -> bool:
    return previous_localized.distance_to(new_localized) > threshold


def select_map(position, maps: Sequence[ReferenceMap], current: Optional[str] = None,
               band: float = 0.5) -> str:
    """Pick the active map with a hysteresis band.

    A higher-priority map takes over once the position is ``band`` inside its
    box; the current map is kept until the position is ``band`` outside it.
    """
    if not maps:
        raise NoMapError("no maps configured")
    by_name = {m.name: m for m in maps}
    ordered = sorted(maps, key=lambda m: (-m.priority, m.name))
    cur = by_name.get(current) if current is not None else None
    if cur is None:
        for m in ordered:
            if m.contains(position):
                return m.name
        raise NoMapError(f"position {np.round(position, 3).tolist()} is in no map region")
    for m in ordered:
        if m.priority > cur.priority and m.contains(position, -band):
            return m.name
    if cur.contains(position, band):
        return cur.name
    for m in ordered:
        if m.contains(position):
            return m.name
    raise NoMapError(f"position {np.round(position, 3).tolist()} is in no map region")
