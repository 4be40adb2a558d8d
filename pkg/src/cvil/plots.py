"""Report figures rendered to files next to the delimited output."""
from __future__ import annotations

import math
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .core import ms_to_kmh
from .hub import TrajectoryLog
from .scenario import ManeuverScript


def _path_polyline(script: ManeuverScript, step: float = 0.25) -> np.ndarray:
    L = script.path.total_length
    n = max(2, int(math.ceil(L / step)))
    pts = [script.path.point_at(i * L / n) for i in range(n + 1)]
    return np.array(pts)


def save_trajectory_figure(path: str | Path, runs: list[tuple[str, TrajectoryLog]],
                           script: ManeuverScript) -> Path:
    fig, ax = plt.subplots(figsize=(7, 6))
    ref = _path_polyline(script)
    ax.plot(ref[:, 0], ref[:, 1], "k--", lw=1, label="reference path")
    for label, log in runs:
        veh = np.array([[w.vehicle.pose.x, w.vehicle.pose.y] for w in log.samples])
        cyc = np.array([[w.cyclist.pose.x, w.cyclist.pose.y] for w in log.samples])
        ax.plot(veh[:, 0], veh[:, 1], lw=1.5, label=f"{label} vehicle")
        ax.plot(cyc[:, 0], cyc[:, 1], lw=1.0, alpha=0.7, label=f"{label} cyclist")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(f"trajectories: {script.name}")
    ax.axis("equal")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return Path(path)


def save_speed_figure(path: str | Path, runs: list[tuple[str, TrajectoryLog]],
                      target_speed: float | None = None) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    for label, log in runs:
        t = [w.clock.elapsed for w in log.samples]
        vc = [ms_to_kmh(w.cyclist.speed) for w in log.samples]
        vv = [ms_to_kmh(w.vehicle.speed) for w in log.samples]
        ax.plot(t, vc, lw=1.2, label=f"{label} cyclist")
        ax.plot(t, vv, lw=1.2, ls=":", label=f"{label} vehicle")
    if target_speed is not None:
        ax.axhline(ms_to_kmh(target_speed), color="k", lw=0.8, ls="--",
                   label="target")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("speed [km/h]")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return Path(path)


def save_latency_figure(path: str | Path, stats_list) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    labels = [s.channel for s in stats_list]
    means = [s.mean for s in stats_list]
    lo = [s.mean - s.min for s in stats_list]
    hi = [s.max - s.mean for s in stats_list]
    ax.bar(range(len(stats_list)), means, yerr=[lo, hi], capsize=4,
           color="steelblue")
    ax.set_xticks(range(len(stats_list)))
    ax.set_xticklabels(labels, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("latency [ms]")
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return Path(path)


def save_sweep_figure(path: str | Path, points, nominal_radius: float = 16.5) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    speeds = [ms_to_kmh(p.speed) for p in points]
    ax.plot(speeds, [p.vehicle_radius for p in points], "o-", label="vehicle")
    ax.plot(speeds, [p.cyclist_radius for p in points], "s-", label="cyclist")
    ax.axhline(nominal_radius, color="k", lw=0.8, ls="--", label="course radius")
    ax.set_xlabel("cyclist speed [km/h]")
    ax.set_ylabel("fitted radius [m]")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return Path(path)
