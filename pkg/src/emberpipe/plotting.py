"""File-only figures for mission reports and the distance comparison."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .arena import ArenaModel  # noqa: E402


def plot_trajectory(report, arena: ArenaModel, path) -> Path:
    """Top view: walls, holes (heated in red) and the true and localized paths of every robot."""
    fig, ax = plt.subplots(figsize=(7, 6))
    for w in arena.walls:
        ends = np.array([w.corner, w.corner + w.edge_u, w.corner + w.edge_u + w.edge_v, w.corner + w.edge_v])
        style = {"color": "0.3"} if w.material == "opaque" else {"color": "tab:cyan", "ls": "--"}
        if np.ptp(ends[:, 0]) + np.ptp(ends[:, 1]) < 1e-9:
            continue
        if np.ptp(ends[:, 2]) > 1e-9:  # vertical facet: draw its footprint
            ax.plot(ends[:, 0], ends[:, 1], lw=2, **style)
    for h in arena.holes:
        ax.plot(h.center[0], h.center[1], "o", color="tab:red" if h.heated else "tab:gray", ms=7)
        ax.annotate(h.id, h.center[:2], textcoords="offset points", xytext=(4, 4), fontsize=8)
    for robot in sorted({r["robot"] for r in report.trace}):
        rows = [r for r in report.trace if r["robot"] == robot]
        true = np.array([r["true"] for r in rows])
        loc = np.array([r["localized"] for r in rows])
        pump = np.array([r["pump"] for r in rows], dtype=bool)
        ax.plot(true[:, 0], true[:, 1], "-", lw=1.2, label=f"{robot} true")
        ax.plot(loc[:, 0], loc[:, 1], ":", lw=1.0, label=f"{robot} localized")
        if pump.any():
            ax.plot(true[pump, 0], true[pump, 1], ".", color="tab:blue", ms=3, label=f"{robot} pump on")
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.legend(fontsize=8, loc="best")
    ax.set_title(f"{report.scenario} (seed {report.seed})")
    return _save(fig, path)


def plot_localization(report, path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for robot in sorted({r["robot"] for r in report.localization}):
        rows = [r for r in report.localization if r["robot"] == robot]
        t = [r["t"] for r in rows]
        ax.plot(t, [r["error"] for r in rows], label=f"{robot} localized")
        raw = [r["raw_error"] for r in rows]
        if any(v is not None for v in raw):
            ax.plot(t, [np.nan if v is None else v for v in raw], "--", label=f"{robot} raw GNSS")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("position error [m]")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_distance_comparison(samples: Sequence[dict], rows, path) -> Path:
    """Estimated versus true range for both estimators, with per-bin mean errors below."""
    fig, (a1, a2) = plt.subplots(2, 1, figsize=(7, 7), sharex=True)
    tr = np.array([s["true"] for s in samples])
    bb = np.array([np.nan if s["bbox"] is None else s["bbox"] for s in samples])
    li = np.array([np.nan if s["lidar"] is None else s["lidar"] for s in samples])
    a1.plot(tr, bb, ".", ms=3, label="bounding box")
    a1.plot(tr, li, ".", ms=3, label="LiDAR projection")
    lim = [0, max(5.5, float(np.nanmax(tr)) + 0.3)]
    a1.plot(lim, lim, "k-", lw=0.8, label="true range")
    a1.set_ylabel("estimated range [m]")
    a1.legend(fontsize=8)
    c = [r.center for r in rows]
    a2.plot(c, [r.bbox_error for r in rows], "o-", label="bounding box")
    a2.plot(c, [r.lidar_error for r in rows], "s-", label="LiDAR projection")
    a2.set_xlabel("true range [m]")
    a2.set_ylabel("mean abs. error [m]")
    a2.legend(fontsize=8)
    return _save(fig, path)


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
