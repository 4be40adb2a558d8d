"""Evaluation front door: latency-lab experiments against the tick pipeline,
latency report formatting, least-squares circle fits, and trajectory
comparison metrics.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import HandHeight, ScenarioPhase, SimClock, WorldSnapshot, kmh_to_ms
from .cyclist import CyclistParams, RiderCommand, RiderInput
from .hub import TrajectoryLog, hub_step
from .protocol import ChannelCondition, SimulatedChannel, TABLE1_PRESET_MS
from .scenario import Arc, ManeuverScript, build_maneuver
from .vehicle import VehicleCommand, VehicleParams


class NoResponse(RuntimeError):
    pass


class ScriptMismatch(ValueError):
    pass


LATENCY_CHANNELS = ("avatar_gesture", "steer", "lean", "brake_front",
                    "brake_rear", "power")

_CHANNEL_FIELD = {
    "avatar_gesture": "hand",
    "steer": "steer",
    "lean": "lean",
    "brake_front": "brake_front",
    "brake_rear": "brake_rear",
    "power": "power",
}

_DISPLAY_NAMES = {
    "avatar_gesture": "avatar motion",
    "steer": "steer",
    "lean": "lean",
    "brake_front": "brake force front",
    "brake_rear": "brake force rear",
    "power": "power",
}

STEER_BAND = 1e-3  # rad, zero-crossing hysteresis band for steer/lean response


def channel_preset_delay_ms(channel: str) -> float:
    """Published-bench pipeline delay for a latency channel."""
    return TABLE1_PRESET_MS[_CHANNEL_FIELD[channel]]


class StreamingStats:
    """Welford one-pass mean/std with min/max."""

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self._m2 = 0.0
        self.min = math.inf
        self.max = -math.inf

    def add(self, x: float) -> None:
        self.n += 1
        d = x - self.mean
        self.mean += d / self.n
        self._m2 += d * (x - self.mean)
        self.min = min(self.min, x)
        self.max = max(self.max, x)

    @property
    def std(self) -> float:
        if self.n < 2:
            return float("nan")
        return math.sqrt(self._m2 / (self.n - 1))


@dataclass(frozen=True)
class LatencyRecord:
    channel: str
    stimulus_time: float
    response_time: float

    def __post_init__(self):
        if self.response_time < self.stimulus_time:
            raise ValueError("response before stimulus")

    @property
    def latency_ms(self) -> float:
        return (self.response_time - self.stimulus_time) * 1000.0


@dataclass(frozen=True)
class LatencyStats:
    channel: str
    mean: float
    std: float
    min: float
    max: float
    n: int

    @classmethod
    def from_records(cls, channel: str, records: list[LatencyRecord]) -> "LatencyStats":
        agg = StreamingStats()
        for r in records:
            agg.add(r.latency_ms)
        return cls(channel=channel, mean=agg.mean, std=agg.std,
                   min=agg.min, max=agg.max, n=agg.n)


_STIMULUS_VALUE = {
    "steer": 0.2, "lean": 0.05, "brake_front": 0.5, "brake_rear": 0.5,
    "power": 100.0, "hand": HandHeight.ABOVE_HEAD,
}


def _responded(field: str, world: WorldSnapshot) -> bool:
    c = world.cyclist
    if field == "steer":
        return abs(c.steer_angle) > STEER_BAND
    if field == "lean":
        return abs(c.lean) > STEER_BAND
    if field == "brake_front":
        return c.brake_force_front > 0.0
    if field == "brake_rear":
        return c.brake_force_rear > 0.0
    if field == "power":
        return c.pedal_power > 0.0
    if field == "hand":
        return c.hand_height is HandHeight.ABOVE_HEAD
    raise ValueError(field)


def _input_with_field(field: str, value) -> RiderInput:
    kwargs = {"steer": "steer_angle", "lean": "lean", "brake_front": "brake_front",
              "brake_rear": "brake_rear", "power": "pedal_power",
              "hand": "hand_height"}[field]
    return RiderInput(**{kwargs: value})


def latency_experiment(channel: str, injected: ChannelCondition,
                       n_trials: int = 10, sampler_rate: float = 240.0,
                       seed: int = 0, tick_rate: float = 90.0,
                       max_wait_s: float = 10.0) -> LatencyStats:
    """Step-stimulus latency measurement through channel + tick pipeline.

    Each trial emits a step on the channel at a random phase within a tick
    period, drives the authoritative tick loop, and detects the response
    threshold crossing in the world state sampled at the high-speed sampler
    rate; the measured latency is therefore quantized to the sampler grid.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    if channel not in LATENCY_CHANNELS:
        raise ValueError(f"unknown latency channel {channel!r}")
    field = _CHANNEL_FIELD[channel]
    phase_rng = np.random.default_rng(seed)
    vparams = VehicleParams()
    cparams = CyclistParams()
    dt = 1.0 / tick_rate
    warmup = 0.5
    records = []
    for trial in range(n_trials):
        chan = SimulatedChannel(replace(injected, seed=injected.seed + trial))
        t_s = warmup + phase_rng.uniform(0.0, dt)
        chan.send(t_s, _STIMULUS_VALUE[field])
        n_ticks = int(math.ceil((t_s + max_wait_s) * tick_rate))
        world = WorldSnapshot(clock=SimClock(0, tick_rate))
        snapshots = [world]
        inp = RiderInput()
        for k in range(n_ticks):
            delivered = chan.poll((k + 1) * dt)
            if delivered:
                inp = _input_with_field(field, delivered[-1])
            world = hub_step(world, VehicleCommand(), RiderCommand(input=inp),
                             vparams, cparams, dt)
            snapshots.append(world)
        t_r = None
        j = 0
        while True:
            t_j = j / sampler_rate
            idx = min(int(math.floor(t_j * tick_rate)), len(snapshots) - 1)
            if _responded(field, snapshots[idx]):
                t_r = t_j
                break
            if t_j > t_s + max_wait_s:
                break
            j += 1
        if t_r is None:
            raise NoResponse(f"{channel}: no threshold crossing within {max_wait_s} s")
        records.append(LatencyRecord(channel, t_s, t_r))
    return LatencyStats.from_records(channel, records)


# ---------------------------------------------------------------------------
# Latency report formatting

def format_latency_table(stats: list[LatencyStats]) -> str:
    """Fixed-width text table: integer mean/min/max, one decimal std."""
    if not stats:
        raise ValueError("need at least one channel")
    lines = [f"{'modality':<26}{'mean':>6}{'std':>8}{'min':>6}{'max':>6}"]
    for s in stats:
        label = _DISPLAY_NAMES.get(s.channel, s.channel)
        std = "-" if math.isnan(s.std) else f"{s.std:.1f}"
        lines.append(f"{label:<26}{round(s.mean):>6}{std:>8}"
                     f"{round(s.min):>6}{round(s.max):>6}")
    return "\n".join(lines) + "\n"


def latency_stats_to_csv(stats: list[LatencyStats]) -> str:
    if not stats:
        raise ValueError("need at least one channel")
    lines = ["modality,mean_ms,std_ms,min_ms,max_ms,n"]
    for s in stats:
        lines.append(f"{s.channel},{s.mean!r},{s.std!r},{s.min!r},{s.max!r},{s.n}")
    return "\n".join(lines) + "\n"


def latency_stats_from_csv(text: str) -> list[LatencyStats]:
    out = []
    lines = [ln for ln in text.strip().splitlines() if ln]
    for line in lines[1:]:
        channel, mean, std, mn, mx, n = line.split(",")
        out.append(LatencyStats(channel=channel, mean=float(mean), std=float(std),
                                min=float(mn), max=float(mx), n=int(n)))
    return out


REFERENCE_BENCH_STATS = [
    # published coupled-bench measurements, used as report fixtures and presets
    LatencyStats("avatar motion", 138.0, 52.7, 75.0, 196.0, 10),
    LatencyStats("steer", 225.0, 23.2, 188.0, 263.0, 10),
    LatencyStats("lean", 243.0, 71.4, 125.0, 354.0, 10),
    LatencyStats("brake force front", 198.0, 18.3, 158.0, 217.0, 10),
    LatencyStats("brake force rear", 210.0, 24.4, 167.0, 250.0, 10),
    LatencyStats("power (from standstill)", 1492.0, 298.3, 1163.0, 2029.0, 10),
    LatencyStats("power (from movement)", 1345.0, 68.4, 1204.0, 1425.0, 10),
]


# ---------------------------------------------------------------------------
# Circle fit

def fit_circle(points: np.ndarray) -> tuple[float, float, float]:
    """Least-squares circle: Kasa algebraic fit refined by one Gauss-Newton
    step on the geometric residuals. Returns (cx, cy, radius)."""
    pts = np.asarray(points, dtype=float)
    if pts.shape[0] < 3:
        raise ValueError("need at least 3 points")
    x, y = pts[:, 0], pts[:, 1]
    A = np.column_stack([x, y, np.ones(len(x))])
    b = x * x + y * y
    sol, *_ = np.linalg.lstsq(A, b, rcond=None)
    cx, cy = sol[0] / 2.0, sol[1] / 2.0
    r2 = sol[2] + cx * cx + cy * cy
    r = math.sqrt(max(r2, 0.0))

    d = np.hypot(x - cx, y - cy)
    d = np.maximum(d, 1e-12)
    res = d - r
    J = np.column_stack([-(x - cx) / d, -(y - cy) / d, -np.ones(len(x))])
    step, *_ = np.linalg.lstsq(J, -res, rcond=None)
    return cx + step[0], cy + step[1], r + step[2]


def final_lap_points(points: np.ndarray, center: tuple[float, float]) -> np.ndarray:
    """Trailing subset of a track spanning one full revolution about center."""
    pts = np.asarray(points, dtype=float)
    ang = np.arctan2(pts[:, 1] - center[1], pts[:, 0] - center[0])
    unwrapped = np.unwrap(ang)
    total = 0.0
    start = len(pts) - 1
    for i in range(len(pts) - 1, 0, -1):
        total += abs(unwrapped[i] - unwrapped[i - 1])
        start = i - 1
        if total >= math.tau:
            break
    return pts[start:]


# ---------------------------------------------------------------------------
# Trajectory metrics

@dataclass(frozen=True)
class TrajectoryMetrics:
    cross_track_rmse: float
    cross_track_max: float
    speed_mae: float
    path_length: float
    fitted_radius: float | None = None
    settle_time: float | None = None


def _dominant_arc(script: ManeuverScript) -> Arc | None:
    arcs = [s for s in script.path.segments if isinstance(s, Arc)]
    if not arcs:
        return None
    arc_len = sum(a.length for a in arcs)
    if arc_len > 0.5 * script.path.total_length:
        return max(arcs, key=lambda a: a.length)
    return None


def settle_time_of(gaps: np.ndarray, times: np.ndarray, d_set: float,
                   band: float = 0.5, hold_s: float = 10.0) -> float | None:
    """First time the gap enters the band and stays for at least hold_s."""
    inside = np.abs(gaps - d_set) < band
    i = 0
    n = len(gaps)
    while i < n:
        if inside[i]:
            j = i
            while j < n and inside[j]:
                j += 1
            if (j >= n and times[j - 1] - times[i] >= 0.0 and times[n - 1] - times[i] >= hold_s) \
                    or (j < n and times[j - 1] - times[i] >= hold_s):
                return float(times[i])
            i = j
        else:
            i += 1
    return None


def trajectory_metrics(log: TrajectoryLog, script: ManeuverScript,
                       d_set: float = 5.0) -> TrajectoryMetrics:
    samples = log.samples
    veh = np.array([[w.vehicle.pose.x, w.vehicle.pose.y] for w in samples])
    times = np.array([w.clock.elapsed for w in samples])
    L = script.path.total_length

    cross = []
    for p in veh:
        s, d = script.path.project((p[0], p[1]))
        if 1e-6 < s < L - 1e-6:
            cross.append(d)
    cross_arr = np.array(cross) if cross else np.array([0.0])

    running = [w for w in samples if w.phase is ScenarioPhase.RUNNING]
    if running:
        speed_mae = float(np.mean([abs(w.cyclist.speed - script.target_speed)
                                   for w in running]))
    else:
        speed_mae = 0.0

    seg = np.diff(veh, axis=0)
    path_length = float(np.sum(np.hypot(seg[:, 0], seg[:, 1])))

    fitted_radius = None
    arc = _dominant_arc(script)
    if arc is not None:
        lap = final_lap_points(veh, arc.center)
        if len(lap) >= 10:
            _, _, r = fit_circle(lap)
            fitted_radius = float(r)

    gaps = np.array([math.hypot(w.vehicle.pose.x - w.cyclist.pose.x,
                                w.vehicle.pose.y - w.cyclist.pose.y)
                     for w in samples])
    settle = None if arc is not None else settle_time_of(gaps, times, d_set)

    return TrajectoryMetrics(
        cross_track_rmse=float(np.sqrt(np.mean(cross_arr ** 2))),
        cross_track_max=float(np.max(cross_arr)),
        speed_mae=speed_mae,
        path_length=path_length,
        fitted_radius=fitted_radius,
        settle_time=settle,
    )


def compare_trajectories(run_a: TrajectoryLog, run_b: TrajectoryLog,
                         script: ManeuverScript, d_set: float = 5.0):
    """Per-run metrics plus paired deltas (b minus a).

    The paired vehicle-speed MAE is evaluated on a common time grid by linear
    interpolation of both speed profiles.
    """
    for run in (run_a, run_b):
        name = run.metadata.get("script")
        if name is not None and name != script.name:
            raise ScriptMismatch(f"log for {name!r}, reference is {script.name!r}")
    if run_a.metadata.get("script") != run_b.metadata.get("script"):
        raise ScriptMismatch("runs come from different scripts")

    ma = trajectory_metrics(run_a, script, d_set)
    mb = trajectory_metrics(run_b, script, d_set)

    def series(log):
        t = np.array([w.clock.elapsed for w in log.samples])
        v = np.array([w.vehicle.speed for w in log.samples])
        return t, v

    ta, va = series(run_a)
    tb, vb = series(run_b)
    t_end = min(ta[-1], tb[-1])
    grid = np.linspace(0.0, t_end, max(2, int(t_end * 10)))
    speed_mae_between = float(np.mean(np.abs(
        np.interp(grid, ta, va) - np.interp(grid, tb, vb))))

    deltas = {}
    for name in ("cross_track_rmse", "cross_track_max", "speed_mae", "path_length",
                 "fitted_radius", "settle_time"):
        a, b = getattr(ma, name), getattr(mb, name)
        deltas[name] = None if a is None or b is None else b - a
    deltas["speed_mae_between"] = speed_mae_between
    return ma, mb, deltas


# ---------------------------------------------------------------------------
# Speed-radius sweep (circle runs)

SWEEP_SPEEDS_KMH = (3.0, 4.5, 6.0, 9.0)


@dataclass(frozen=True)
class SweepPoint:
    speed: float
    vehicle_radius: float
    cyclist_radius: float


def radius_speed_sweep(speeds_ms=None, seed: int = 0, radius: float = 16.5,
                       keep_logs: bool = False):
    """Closed-loop circle runs across cyclist speeds; fits the final-lap
    radius of both tracks. Perception noise is off so the fitted radii are
    deterministic functions of the control geometry."""
    from dataclasses import replace as _replace

    from .runner import run_scripted_trial
    from .vehicle import PerceptionConfig

    speeds = list(speeds_ms) if speeds_ms else [kmh_to_ms(k) for k in SWEEP_SPEEDS_KMH]
    points = []
    logs = []
    for i, v in enumerate(speeds):
        script = build_maneuver("circle", overrides={"radius": radius,
                                                     "target_speed": v})
        log = run_scripted_trial(
            script, seed=seed + i,
            perception=PerceptionConfig(position_noise_sigma=0.0, seed=seed + i),
            timeout_s=max(240.0, 3.0 * script.path.total_length / v))
        center = (0.0, radius)
        veh = np.array([[w.vehicle.pose.x, w.vehicle.pose.y] for w in log.samples])
        cyc = np.array([[w.cyclist.pose.x, w.cyclist.pose.y] for w in log.samples])
        _, _, rv = fit_circle(final_lap_points(veh, center))
        _, _, rc = fit_circle(final_lap_points(cyc, center))
        points.append(SweepPoint(speed=v, vehicle_radius=float(rv),
                                 cyclist_radius=float(rc)))
        if keep_logs:
            logs.append(log)
    return (points, logs) if keep_logs else points
