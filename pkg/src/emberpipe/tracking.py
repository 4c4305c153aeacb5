"""Single-target fire tracker fusing thermal and hole detections.

The state is an immutable value; ``ingest`` returns a new state together with
an outcome code so that callers can log why a detection was or was not used.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .geometry import angle_between
from .thermal import Detection

FEASIBLE_ANGLE_DEG = 45.0
BALL_RADIUS = 1.0
HISTORY_SIZE = 10
INIT_BUFFER_SIZE = 20
INIT_REQUIRED = 10
RECENCY_WINDOW = 1.0
TIMEOUT = 2.0

# outcomes that leave H untouched because the detection was refused
REJECTIONS = frozenset({"infeasible-angle", "outside-ball", "normal-disagrees", "no-recent-heat",
                        "hole-far-from-heat", "thermal-suppressed-by-hole"})
ADMISSIONS = frozenset({"admitted", "initialized"})


class NotInitializedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrackerState:
    history: tuple[Detection, ...] = ()
    init_buffer: tuple[Detection, ...] = ()
    latest_thermal: Optional[Detection] = None
    latest_thermal_time: Optional[float] = None
    latest_hole_time: Optional[float] = None
    last_added_time: float = -math.inf
    phase: str = "initializing"  # "initializing" | "tracking"


def _angle_deg(a, b) -> float:
    return math.degrees(angle_between(a, b))


def feasible(d: Detection, robot_position, limit_deg: float = FEASIBLE_ANGLE_DEG) -> bool:
    """Angle between the detected normal and the line of sight to the robot is within the limit."""
    los = np.asarray(robot_position, dtype=float) - d.position
    if not np.any(los):
        raise ValueError("robot position coincides with the detection")
    return _angle_deg(d.normal, los) <= limit_deg


def _find_cluster(buf: tuple[Detection, ...]) -> Optional[list[int]]:
    """Indices of ten buffered detections lying within 1 m of their own centroid, if any."""
    if len(buf) < INIT_REQUIRED:
        return None
    P = np.array([d.position for d in buf])
    for seed in range(len(buf)):
        center = P[seed]
        tried = set()
        # a few re-centring passes starting from each buffered detection
        for _ in range(3):
            idx = np.argsort(np.linalg.norm(P - center, axis=1), kind="stable")[:INIT_REQUIRED]
            key = tuple(sorted(idx.tolist()))
            if key in tried:
                break
            tried.add(key)
            c = P[idx].mean(axis=0)
            if np.all(np.linalg.norm(P[idx] - c, axis=1) <= BALL_RADIUS):
                return sorted(idx.tolist())
            center = c
    return None


def estimate(state: TrackerState) -> tuple[np.ndarray, np.ndarray]:
    """Plain mean of the positions and normalized mean of the normals in H."""
    if state.phase != "tracking" or not state.history:
        raise NotInitializedError("tracker is not tracking")
    p = np.mean([d.position for d in state.history], axis=0)
    n = np.sum([d.normal for d in state.history], axis=0)
    norm = float(np.linalg.norm(n))
    if norm < 1e-12:
        # opposing normals cancel; fall back to the newest one
        n = state.history[-1].normal.copy()
    else:
        n = n / norm
    return p, n


def _recent(t: Optional[float], now: float) -> bool:
    return t is not None and now - t <= RECENCY_WINDOW


def ingest_with_reason(state: TrackerState, d: Detection, robot_position, now: float) -> tuple[TrackerState, str]:
    if d.timestamp > now:
        raise ValueError("detection is from the future")
    is_thermal = d.kind == "thermal"
    if is_thermal:
        # the latest heat detection is tracked regardless of admission
        state = replace(state, latest_thermal=d, latest_thermal_time=now)

    if state.phase == "initializing":
        if not is_thermal:
            return state, "not-initialized"
        if not feasible(d, robot_position):
            return state, "infeasible-angle"
        buf = (state.init_buffer + (d,))[-INIT_BUFFER_SIZE:]
        cluster = _find_cluster(buf)
        if cluster is None:
            return replace(state, init_buffer=buf), "buffered"
        seeded = tuple(buf[i] for i in cluster)
        return replace(state, history=seeded, init_buffer=(), phase="tracking", last_added_time=now), "initialized"

    if not feasible(d, robot_position):
        return state, "infeasible-angle"
    p_star, n_star = estimate(state)
    if float(np.linalg.norm(d.position - p_star)) > BALL_RADIUS:
        return state, "outside-ball"
    if _angle_deg(d.normal, n_star) > FEASIBLE_ANGLE_DEG:
        return state, "normal-disagrees"
    if is_thermal:
        if _recent(state.latest_hole_time, now):
            return state, "thermal-suppressed-by-hole"
    else:
        if not _recent(state.latest_thermal_time, now):
            return state, "no-recent-heat"
        if float(np.linalg.norm(d.position - state.latest_thermal.position)) > BALL_RADIUS:
            return state, "hole-far-from-heat"
    hist = (state.history + (d,))[-HISTORY_SIZE:]
    state = replace(state, history=hist, last_added_time=now)
    if not is_thermal:
        state = replace(state, latest_hole_time=now)
    return state, "admitted"


def ingest(state: TrackerState, d: Detection, robot_position, now: float) -> TrackerState:
    return ingest_with_reason(state, d, robot_position, now)[0]


def check_timeout(state: TrackerState, now: float) -> TrackerState:
    if state.phase == "tracking" and now - state.last_added_time > TIMEOUT:
        return TrackerState()
    return state
