"""Shared domain types: planar poses, entity states, and the fixed-step clock.

All units are SI (m, s, rad, N, W) and all reals are 64-bit floats. Headings
follow the standard planar convention: 0 along +x, counterclockwise positive,
normalized to (-pi, pi].
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

BEARING_EPS = 1e-9  # minimum observer-target separation for a defined bearing


class DegenerateTarget(ValueError):
    """Bearing requested to a target closer than the resolution floor."""


def wrap_angle(angle: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    r = math.remainder(angle, math.tau)
    if r <= -math.pi:
        r += math.tau
    return r


class HandHeight(Enum):
    ABOVE_HEAD = 1
    BETWEEN = 2
    BELOW_SHOULDER = 3

    @property
    def label(self) -> str:
        return _HAND_LABELS[self]

    @classmethod
    def from_label(cls, label: str) -> "HandHeight":
        for hand, name in _HAND_LABELS.items():
            if name == label:
                return hand
        raise ValueError(f"unknown hand height {label!r}")


_HAND_LABELS = {
    HandHeight.ABOVE_HEAD: "above",
    HandHeight.BETWEEN: "between",
    HandHeight.BELOW_SHOULDER: "below",
}


class ScenarioPhase(Enum):
    PRE_START = 1
    RUNNING = 2
    ENDED = 3

    @property
    def label(self) -> str:
        return _PHASE_LABELS[self]

    @classmethod
    def from_label(cls, label: str) -> "ScenarioPhase":
        for phase, name in _PHASE_LABELS.items():
            if name == label:
                return phase
        raise ValueError(f"unknown scenario phase {label!r}")


_PHASE_LABELS = {
    ScenarioPhase.PRE_START: "prestart",
    ScenarioPhase.RUNNING: "running",
    ScenarioPhase.ENDED: "ended",
}


@dataclass(frozen=True)
class Pose2:
    """Planar pose; heading is re-normalized on construction."""

    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "heading", wrap_angle(self.heading))

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


def pose_compose(base: Pose2, offset_local: tuple[float, float]) -> tuple[float, float]:
    """Map a body-frame offset through a pose into world coordinates."""
    c = math.cos(base.heading)
    s = math.sin(base.heading)
    ox, oy = offset_local
    return (base.x + c * ox - s * oy, base.y + s * ox + c * oy)


def bearing_to(observer: Pose2, target_position: tuple[float, float]) -> float:
    """Angle of a world point in the observer's body frame.

    Zero means dead ahead, positive means the target lies to the left.
    Raises DegenerateTarget when the target coincides with the observer.
    """
    dx = target_position[0] - observer.x
    dy = target_position[1] - observer.y
    if math.hypot(dx, dy) <= BEARING_EPS:
        raise DegenerateTarget("target coincides with observer position")
    c = math.cos(observer.heading)
    s = math.sin(observer.heading)
    forward = c * dx + s * dy
    left = -s * dx + c * dy
    return wrap_angle(math.atan2(left, forward))


@dataclass(frozen=True)
class SimClock:
    """Fixed-rate tick counter; elapsed time is derived, never accumulated."""

    tick: int = 0
    tick_rate: float = 90.0

    @property
    def elapsed(self) -> float:
        return self.tick / self.tick_rate

    def advance(self) -> "SimClock":
        return SimClock(self.tick + 1, self.tick_rate)


@dataclass(frozen=True)
class VehicleState:
    pose: Pose2 = field(default_factory=Pose2)
    speed: float = 0.0
    steer_angle: float = 0.0
    accel_cmd: float = 0.0
    steer_cmd: float = 0.0


@dataclass(frozen=True)
class CyclistState:
    pose: Pose2 = field(default_factory=Pose2)
    speed: float = 0.0
    lean: float = 0.0
    steer_angle: float = 0.0
    hand_height: HandHeight = HandHeight.BETWEEN
    pedal_power: float = 0.0
    brake_force_front: float = 0.0
    brake_force_rear: float = 0.0


@dataclass(frozen=True)
class WorldSnapshot:
    """Authoritative per-tick world state; immutable once emitted."""

    clock: SimClock = field(default_factory=SimClock)
    vehicle: VehicleState = field(default_factory=VehicleState)
    cyclist: CyclistState = field(default_factory=CyclistState)
    phase: ScenarioPhase = ScenarioPhase.PRE_START


KMH = 1.0 / 3.6  # m/s per km/h


def kmh_to_ms(v_kmh: float) -> float:
    return v_kmh / 3.6


def ms_to_kmh(v_ms: float) -> float:
    return v_ms * 3.6


def clamp(x: float, lo: float, hi: float) -> float:
    return lo if x < lo else hi if x > hi else x


def distance(a: Pose2 | tuple[float, float], b: Pose2 | tuple[float, float]) -> float:
    ax, ay = (a.x, a.y) if isinstance(a, Pose2) else a
    bx, by = (b.x, b.y) if isinstance(b, Pose2) else b
    return math.hypot(bx - ax, by - ay)


def snapshot_replace(world: WorldSnapshot, **kwargs) -> WorldSnapshot:
    return replace(world, **kwargs)


class RateDecimator:
    """Selects ticks for a lower-rate process driven by the main tick stream.

    The k-th event fires at tick floor(k * tick_rate / rate), so e.g. 60 Hz
    from 90 Hz fires at ticks 0, 1, 3, 4, 6, ... (2 of every 3). Call
    fires(tick) with non-decreasing ticks.
    """

    def __init__(self, tick_rate: float, rate: float):
        if rate <= 0 or tick_rate <= 0:
            raise ValueError("rates must be positive")
        if rate > tick_rate:
            raise ValueError("decimated rate cannot exceed the tick rate")
        self.tick_rate = tick_rate
        self.rate = rate
        self._k = 0

    def next_tick(self) -> int:
        return math.floor(self._k * self.tick_rate / self.rate)

    def fires(self, tick: int) -> bool:
        if tick < self.next_tick():
            return False
        while self.next_tick() <= tick:
            self._k += 1
        return True
