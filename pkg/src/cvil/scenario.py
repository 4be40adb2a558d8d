"""Maneuver scripts: course geometry as data, arc-length queries, trial plans.

A script's path is a sequence of line and arc segments; curved lateral blends
(double lane change) are pre-sampled into fine polylines so only those two
segment kinds ever exist. Scripts load from and save to JSON; keys suffixed
``_kmh`` or ``_deg`` are converted to SI on load.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path as FsPath

from .core import Pose2, wrap_angle

JOIN_TOL = 1e-9


class UnknownManeuver(ValueError):
    pass


class OutOfRange(ValueError):
    pass


@dataclass(frozen=True)
class Line:
    start: tuple[float, float]
    end: tuple[float, float]

    @property
    def length(self) -> float:
        return math.hypot(self.end[0] - self.start[0], self.end[1] - self.start[1])

    @property
    def heading(self) -> float:
        return math.atan2(self.end[1] - self.start[1], self.end[0] - self.start[0])

    def point_at(self, s: float) -> tuple[float, float]:
        f = s / self.length if self.length > 0 else 0.0
        return (
            self.start[0] + f * (self.end[0] - self.start[0]),
            self.start[1] + f * (self.end[1] - self.start[1]),
        )

    def tangent_at(self, s: float) -> float:
        return self.heading

    def project(self, p: tuple[float, float]) -> tuple[float, float]:
        """Return (arc length of nearest point, distance to it)."""
        dx = self.end[0] - self.start[0]
        dy = self.end[1] - self.start[1]
        L2 = dx * dx + dy * dy
        if L2 == 0.0:
            return 0.0, math.hypot(p[0] - self.start[0], p[1] - self.start[1])
        t = ((p[0] - self.start[0]) * dx + (p[1] - self.start[1]) * dy) / L2
        t = min(1.0, max(0.0, t))
        nx = self.start[0] + t * dx
        ny = self.start[1] + t * dy
        return t * math.sqrt(L2), math.hypot(p[0] - nx, p[1] - ny)


@dataclass(frozen=True)
class Arc:
    """Circular arc; positive sweep runs counterclockwise."""

    center: tuple[float, float]
    radius: float
    start_angle: float
    sweep: float

    @property
    def length(self) -> float:
        return abs(self.sweep) * self.radius

    def _angle_at(self, s: float) -> float:
        return self.start_angle + math.copysign(1.0, self.sweep) * s / self.radius

    def point_at(self, s: float) -> tuple[float, float]:
        a = self._angle_at(s)
        return (
            self.center[0] + self.radius * math.cos(a),
            self.center[1] + self.radius * math.sin(a),
        )

    def tangent_at(self, s: float) -> float:
        a = self._angle_at(s)
        return wrap_angle(a + math.copysign(math.pi / 2, self.sweep))

    def project_all(self, p: tuple[float, float]) -> list[tuple[float, float]]:
        """All (arc length, distance) candidates; arcs sweeping more than one
        revolution yield one candidate per lap."""
        rel = math.atan2(p[1] - self.center[1], p[0] - self.center[0])
        sgn = math.copysign(1.0, self.sweep)
        # angle along the arc measured from its start, in [0, 2*pi)
        local = (sgn * (rel - self.start_angle)) % math.tau
        out = []
        k = 0
        while local + k * math.tau <= abs(self.sweep) + 1e-12:
            s = min((local + k * math.tau) * self.radius, self.length)
            px, py = self.point_at(s)
            out.append((s, math.hypot(p[0] - px, p[1] - py)))
            k += 1
        if not out:
            # outside a partial sweep: nearest endpoint
            s = 0.0 if (math.tau - local) < (local - abs(self.sweep)) else self.length
            px, py = self.point_at(s)
            out.append((s, math.hypot(p[0] - px, p[1] - py)))
        return out

    def project(self, p: tuple[float, float]) -> tuple[float, float]:
        return min(self.project_all(p), key=lambda c: c[1])


Segment = Line | Arc


class PathGeometry:
    """Arc-length view over a continuous segment chain."""

    def __init__(self, segments: list[Segment]):
        if not segments:
            raise ValueError("path needs at least one segment")
        for a, b in zip(segments, segments[1:]):
            ax, ay = a.point_at(a.length)
            bx, by = b.point_at(0.0)
            if math.hypot(bx - ax, by - ay) > JOIN_TOL:
                raise ValueError("path segments do not join continuously")
        self.segments = segments
        self._cum = [0.0]
        for seg in segments:
            self._cum.append(self._cum[-1] + seg.length)

    @property
    def total_length(self) -> float:
        return self._cum[-1]

    def _locate(self, s: float) -> tuple[Segment, float]:
        if s < -JOIN_TOL or s > self.total_length + JOIN_TOL:
            raise OutOfRange(f"arc length {s} outside [0, {self.total_length}]")
        s = min(max(s, 0.0), self.total_length)
        lo, hi = 0, len(self.segments) - 1
        while lo < hi:
            mid = (lo + hi) // 2
            if self._cum[mid + 1] < s:
                lo = mid + 1
            else:
                hi = mid
        return self.segments[lo], s - self._cum[lo]

    def point_at(self, s: float) -> tuple[float, float]:
        seg, local = self._locate(s)
        return seg.point_at(local)

    def tangent_at(self, s: float) -> float:
        seg, local = self._locate(s)
        return seg.tangent_at(local)

    def project(self, p: tuple[float, float],
                hint_s: float | None = None) -> tuple[float, float]:
        """Nearest point on the whole path: (arc length, distance).

        Courses that revisit the same ground (multi-lap arcs) make the
        nearest point ambiguous; a hint arc length resolves ties toward the
        candidate closest to the caller's known progress.
        """
        candidates: list[tuple[float, float]] = []
        for seg, s0 in zip(self.segments, self._cum):
            if isinstance(seg, Arc):
                candidates.extend((s0 + s, d) for s, d in seg.project_all(p))
            else:
                s, d = seg.project(p)
                candidates.append((s0 + s, d))
        best_d = min(d for _, d in candidates)
        if hint_s is None:
            return min(candidates, key=lambda c: c[1])
        near = [c for c in candidates if c[1] <= best_d + 0.5]
        return min(near, key=lambda c: abs(c[0] - hint_s))


class EventKind(Enum):
    START_GESTURE = "start_gesture"
    STOP_GESTURE = "stop_gesture"
    INTERMEDIATE_STOP = "intermediate_stop"


@dataclass(frozen=True)
class ScriptEvent:
    kind: EventKind
    at_s: float | None = None
    at_time: float | None = None
    dwell: float = 0.0

    def __post_init__(self):
        if (self.at_s is None) == (self.at_time is None):
            raise ValueError("event needs exactly one of at_s / at_time")


@dataclass(frozen=True)
class ManeuverScript:
    name: str
    path: PathGeometry
    target_speed: float
    events: tuple[ScriptEvent, ...]
    start_pose_vehicle: Pose2
    start_pose_cyclist: Pose2

    def __post_init__(self):
        positions = [e.at_s for e in self.events if e.at_s is not None]
        if positions != sorted(positions):
            raise ValueError("events must be ordered by path position")


def path_query(script: ManeuverScript, arc_length: float) -> tuple[tuple[float, float], float]:
    """Point and tangent heading at an arc-length position along the script path."""
    return script.path.point_at(arc_length), script.path.tangent_at(arc_length)


def _cubic_blend_polyline(x0: float, y0: float, dx: float, dy: float,
                          step: float = 0.05) -> list[tuple[float, float]]:
    """Lateral transition y0 -> y0+dy over x0 -> x0+dx with zero end slopes."""
    n = max(2, int(math.ceil(dx / step)))
    pts = []
    for i in range(n + 1):
        u = i / n
        pts.append((x0 + u * dx, y0 + dy * (3 * u * u - 2 * u ** 3)))
    return pts


def _polyline_segments(points: list[tuple[float, float]]) -> list[Line]:
    return [Line(a, b) for a, b in zip(points, points[1:])]


STRAIGHT_DEFAULTS = {"leg1": 30.0, "hop": 5.0, "leg2": 30.0, "dwell": 2.0}
CIRCLE_DEFAULTS = {"radius": 16.5, "laps": 2.25}
DLC_DEFAULTS = {"entry": 15.0, "transition": 13.5, "hold": 11.0, "offset": 3.5, "exit": 15.0}
DEFAULT_TARGET_SPEED = 1.25  # m/s (4.5 km/h)
VEHICLE_START_BACKSET = 10.0  # d_set + 5 m behind the cyclist on the path tangent


def build_maneuver(name: str, overrides: dict | None = None) -> ManeuverScript:
    """Construct one of the three stock maneuvers, optionally tweaked.

    Recognized names: straight_with_stop, circle, double_lane_change.
    """
    ov = dict(overrides or {})
    target_speed = float(ov.pop("target_speed", DEFAULT_TARGET_SPEED))

    if name == "straight_with_stop":
        p = {**STRAIGHT_DEFAULTS, **ov}
        leg1, hop, leg2 = p["leg1"], p["hop"], p["leg2"]
        total = leg1 + hop + leg2
        segments: list[Segment] = [Line((0.0, 0.0), (total, 0.0))]
        events = [ScriptEvent(EventKind.START_GESTURE, at_s=0.0)]
        if hop > 0.0 or leg2 > 0.0:
            events.append(ScriptEvent(EventKind.INTERMEDIATE_STOP, at_s=leg1, dwell=p["dwell"]))
            events.append(ScriptEvent(EventKind.START_GESTURE, at_s=leg1 + hop))
        events.append(ScriptEvent(EventKind.STOP_GESTURE, at_s=total))
        script_name = "straight_with_stop"
    elif name == "circle":
        p = {**CIRCLE_DEFAULTS, **ov}
        r = p["radius"]
        segments = [Arc(center=(0.0, r), radius=r, start_angle=-math.pi / 2,
                        sweep=p["laps"] * math.tau)]
        events = [
            ScriptEvent(EventKind.START_GESTURE, at_s=0.0),
            ScriptEvent(EventKind.STOP_GESTURE, at_s=segments[0].length),
        ]
        script_name = "circle"
    elif name == "double_lane_change":
        p = {**DLC_DEFAULTS, **ov}
        x = 0.0
        pts: list[tuple[float, float]] = [(0.0, 0.0)]
        x += p["entry"]
        pts.append((x, 0.0))
        segments = _polyline_segments(pts)
        blend = _cubic_blend_polyline(x, 0.0, p["transition"], p["offset"])
        segments += _polyline_segments(blend)
        x += p["transition"]
        segments.append(Line((x, p["offset"]), (x + p["hold"], p["offset"])))
        x += p["hold"]
        blend = _cubic_blend_polyline(x, p["offset"], p["transition"], -p["offset"])
        segments += _polyline_segments(blend)
        x += p["transition"]
        segments.append(Line((x, 0.0), (x + p["exit"], 0.0)))
        path = PathGeometry(segments)
        events = [
            ScriptEvent(EventKind.START_GESTURE, at_s=0.0),
            ScriptEvent(EventKind.STOP_GESTURE, at_s=path.total_length),
        ]
        script_name = "double_lane_change"
    else:
        raise UnknownManeuver(name)

    path = PathGeometry(segments)
    start_heading = path.tangent_at(0.0)
    sx, sy = path.point_at(0.0)
    cyclist = Pose2(sx, sy, start_heading)
    vehicle = Pose2(sx - VEHICLE_START_BACKSET * math.cos(start_heading),
                    sy - VEHICLE_START_BACKSET * math.sin(start_heading),
                    start_heading)
    return ManeuverScript(
        name=script_name,
        path=path,
        target_speed=target_speed,
        events=tuple(events),
        start_pose_vehicle=vehicle,
        start_pose_cyclist=cyclist,
    )


# ---------------------------------------------------------------------------
# JSON (de)serialization

def script_to_dict(script: ManeuverScript) -> dict:
    segs = []
    for seg in script.path.segments:
        if isinstance(seg, Line):
            segs.append({"type": "line", "from": list(seg.start), "to": list(seg.end)})
        else:
            segs.append({
                "type": "arc", "center": list(seg.center), "radius": seg.radius,
                "start_angle": seg.start_angle, "sweep": seg.sweep,
            })
    events = []
    for e in script.events:
        d: dict = {"event": e.kind.value}
        if e.at_s is not None:
            d["at_s"] = e.at_s
        if e.at_time is not None:
            d["at_time"] = e.at_time
        if e.dwell:
            d["dwell"] = e.dwell
        events.append(d)
    return {
        "name": script.name,
        "target_speed": script.target_speed,
        "path": segs,
        "events": events,
        "start_pose_vehicle": [script.start_pose_vehicle.x, script.start_pose_vehicle.y,
                               script.start_pose_vehicle.heading],
        "start_pose_cyclist": [script.start_pose_cyclist.x, script.start_pose_cyclist.y,
                               script.start_pose_cyclist.heading],
    }


def script_from_dict(data: dict) -> ManeuverScript:
    from .config import normalize_units

    data = normalize_units(data)
    segments: list[Segment] = []
    for seg in data["path"]:
        if seg["type"] == "line":
            segments.append(Line(tuple(seg["from"]), tuple(seg["to"])))
        elif seg["type"] == "arc":
            segments.append(Arc(tuple(seg["center"]), seg["radius"],
                                seg["start_angle"], seg["sweep"]))
        else:
            raise ValueError(f"unknown segment type {seg['type']!r}")
    events = []
    for e in data.get("events", []):
        events.append(ScriptEvent(
            kind=EventKind(e["event"]),
            at_s=e.get("at_s"),
            at_time=e.get("at_time"),
            dwell=e.get("dwell", 0.0),
        ))
    pv = data["start_pose_vehicle"]
    pc = data["start_pose_cyclist"]
    return ManeuverScript(
        name=data["name"],
        path=PathGeometry(segments),
        target_speed=data["target_speed"],
        events=tuple(events),
        start_pose_vehicle=Pose2(*pv),
        start_pose_cyclist=Pose2(*pc),
    )


def save_script(script: ManeuverScript, path: str | FsPath) -> None:
    FsPath(path).write_text(json.dumps(script_to_dict(script), indent=1) + "\n")


def load_script(path: str | FsPath) -> ManeuverScript:
    p = FsPath(path)
    if not p.exists():
        bundled = FsPath(__file__).parent / "scenarios" / p.name
        if bundled.exists():
            p = bundled
        else:
            raise FileNotFoundError(f"scenario file {path} not found")
    return script_from_dict(json.loads(p.read_text()))


# ---------------------------------------------------------------------------
# Trial orchestration

@dataclass(frozen=True)
class TrialPlan:
    script: ManeuverScript
    repetitions: int = 2
    mode: str = "lockstep"  # lockstep | realtime
    channel_preset: str = "ideal"
    seed: int = 0
    timeout_s: float = 600.0

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.mode not in ("lockstep", "realtime"):
            raise ValueError(f"unknown mode {self.mode!r}")


def run_trials(plan: TrialPlan, out_dir: str | FsPath | None = None,
               tff_config=None, perception=None, vehicle_params=None,
               cyclist_params=None):
    """Run the plan's repetitions with seeds seed, seed+1, ...

    Returns the list of TrajectoryLogs; optionally writes one JSONL per trial.
    A trial that hits the timeout is recorded with ``timeout: true`` in its
    metadata rather than failing the batch.
    """
    from .runner import run_scripted_trial

    logs = []
    for rep in range(plan.repetitions):
        log = run_scripted_trial(
            plan.script,
            seed=plan.seed + rep,
            mode=plan.mode,
            channel_preset=plan.channel_preset,
            timeout_s=plan.timeout_s,
            tff_config=tff_config,
            perception=perception,
            vehicle_params=vehicle_params,
            cyclist_params=cyclist_params,
        )
        if out_dir is not None:
            out = FsPath(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            log.write_jsonl(out / f"{plan.script.name}_{plan.mode}_rep{rep}.jsonl")
        logs.append(log)
    return logs
