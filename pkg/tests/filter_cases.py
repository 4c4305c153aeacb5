"""Randomized boundary cases for the target filter.

Every case places one quantity at a filter threshold plus or minus ``EPS`` and
returns the outcome the rule demands. Geometry (position, normal, robot
direction) is drawn at random so the checks do not depend on axis alignment.
"""
import math

import numpy as np

from emberpipe.thermal import Detection
from emberpipe.tracking import TrackerState, check_timeout, ingest_with_reason

EPS = 1e-6
KINDS = ("feasibility", "ball", "normal", "hole-heat-distance", "hole-recency", "thermal-precedence",
         "timeout", "init-count", "init-radius", "init-window")


def _unit(rng):
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def _perp(n, rng):
    v = np.cross(n, _unit(rng))
    return v / np.linalg.norm(v)


def _rotate(v, axis, ang):
    # Rodrigues rotation of v about a unit axis
    return v * math.cos(ang) + np.cross(axis, v) * math.sin(ang) + axis * (axis @ v) * (1 - math.cos(ang))


def _tracking_state(p, n, t, history=10):
    h = tuple(Detection(p, n, "thermal", t) for _ in range(history))
    return TrackerState(history=h, latest_thermal=h[-1], latest_thermal_time=t, last_added_time=t, phase="tracking")


def run_case(kind: str, above: bool, rng: np.random.Generator):
    """Return (observed, expected) outcome labels for one boundary case."""
    sign = 1.0 if above else -1.0
    p = rng.uniform(-20, 20, 3)
    n = _unit(rng)
    robot = p + rng.uniform(2.0, 6.0) * n  # straight in front: always feasible
    t0 = rng.uniform(0, 1000)

    if kind == "feasibility":
        ang = math.radians(45.0 + sign * EPS)
        los = _rotate(n, _perp(n, rng), ang)
        d = Detection(p, n, "thermal", t0)
        _, why = ingest_with_reason(TrackerState(), d, p + rng.uniform(1, 8) * los, t0)
        return why, ("infeasible-angle" if above else "buffered")

    if kind == "ball":
        st = _tracking_state(p, n, t0)
        q = p + (1.0 + sign * EPS) * _perp(n, rng)
        _, why = ingest_with_reason(st, Detection(q, n, "thermal", t0 + 0.1), q + 3 * n, t0 + 0.1)
        return why, ("outside-ball" if above else "admitted")

    if kind == "normal":
        st = _tracking_state(p, n, t0)
        axis = _perp(n, rng)
        m = _rotate(n, axis, math.radians(45.0 + sign * EPS))
        # robot along the bisector keeps the detection itself feasible
        bis = (n + m) / np.linalg.norm(n + m)
        _, why = ingest_with_reason(st, Detection(p, m, "thermal", t0 + 0.1), p + 3 * bis, t0 + 0.1)
        return why, ("normal-disagrees" if above else "admitted")

    if kind == "hole-heat-distance":
        st = _tracking_state(p, n, t0)
        u = _perp(n, rng)
        heat = Detection(p + 0.5 * u, n, "thermal", t0)
        st = TrackerState(st.history, (), heat, t0, None, t0, "tracking")
        q = heat.position - (1.0 + sign * EPS) * u  # 0.5 m on the other side of p
        _, why = ingest_with_reason(st, Detection(q, n, "hole", t0 + 0.2), q + 3 * n, t0 + 0.2)
        return why, ("hole-far-from-heat" if above else "admitted")

    if kind == "hole-recency":
        st = _tracking_state(p, n, t0)
        now = t0 + 1.0 + sign * EPS
        _, why = ingest_with_reason(st, Detection(p, n, "hole", now), robot, now)
        return why, ("no-recent-heat" if above else "admitted")

    if kind == "thermal-precedence":
        st = _tracking_state(p, n, t0)
        st = TrackerState(st.history, (), st.latest_thermal, t0, t0, t0, "tracking")
        now = t0 + 1.0 + sign * EPS
        new, why = ingest_with_reason(st, Detection(p, n, "thermal", now), robot, now)
        assert new.latest_thermal_time == now
        return why, ("admitted" if above else "thermal-suppressed-by-hole")

    if kind == "timeout":
        st = _tracking_state(p, n, t0)
        out = check_timeout(st, t0 + 2.0 + sign * EPS)
        return out.phase, ("initializing" if above else "tracking")

    if kind == "init-count":
        k = 10 if above else 9
        st = TrackerState()
        why = None
        for i in range(k):
            q = p + rng.uniform(-0.3, 0.3, 3)
            st, why = ingest_with_reason(st, Detection(q, n, "thermal", t0 + 0.1 * i), robot, t0 + 0.1 * i)
        return why, ("initialized" if above else "buffered")

    if kind == "init-radius":
        # nine identical detections and one outlier; the outlier sits 0.9 d from the centroid
        d = (1.0 + sign * EPS) / 0.9
        u = _perp(n, rng)
        st = TrackerState()
        why = None
        for i in range(10):
            q = p + (d * u if i == 9 else 0.0)
            st, why = ingest_with_reason(st, Detection(q, n, "thermal", t0 + 0.1 * i), robot, t0 + 0.1 * i)
        return why, ("buffered" if above else "initialized")

    if kind == "init-window":
        # nine clustered, a run of far-apart singles, then one more clustered: the first
        # clustered detection falls out of the 20-slot buffer once the run reaches 11
        run = 11 if above else 10
        u, w = _perp(n, rng), None
        w = np.cross(n, u)
        st = TrackerState()
        t = t0
        for i in range(9):
            st, _ = ingest_with_reason(st, Detection(p, n, "thermal", t), robot, t)
            t += 0.05
        for j in range(run):
            q = p + 3.0 * (j + 1) * (u if j % 2 else w)
            st, _ = ingest_with_reason(st, Detection(q, n, "thermal", t), q + 3 * n, t)
            t += 0.05
        st, why = ingest_with_reason(st, Detection(p, n, "thermal", t), robot, t)
        return why, ("buffered" if above else "initialized")

    raise ValueError(kind)
