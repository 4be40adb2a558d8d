"""Cyclist bench in software: rider inputs, bicycle longitudinal/kinematic
dynamics against virtual driving resistances, trainer torque, and a scripted
rider that executes maneuver scripts (pedal, brake, steer, gesture).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

from .core import (CyclistState, HandHeight, Pose2, WorldSnapshot, clamp,
                   distance, wrap_angle)
from .scenario import EventKind, ManeuverScript

STANDSTILL_EPS = 1e-6


class OffPathError(RuntimeError):
    """Scripted rider strayed too far from its course."""


@dataclass(frozen=True)
class CyclistParams:
    mass: float = 90.0              # rider + bicycle, kg
    g: float = 9.81
    crr: float = 0.005              # rolling resistance coefficient
    cda: float = 0.5                # drag area, m^2
    rho: float = 1.225              # air density, kg/m^3
    grade: float = 0.0              # road gradient, rad
    wheel_radius: float = 0.335     # m
    v_eps: float = 0.2              # power-to-force regularization floor, m/s
    max_brake_force: float = 250.0  # N per lever at full squeeze
    lean_limit: float = 0.1222      # rad (7 deg)
    steer_limit: float = 0.7        # rad, handlebar stop
    wheelbase: float = 1.1          # m


@dataclass(frozen=True)
class RiderInput:
    """One frame of rider commands; fractions are already clamped to [0, 1]."""

    pedal_power: float = 0.0
    brake_front: float = 0.0
    brake_rear: float = 0.0
    steer_angle: float = 0.0
    lean: float = 0.0
    hand_height: HandHeight = HandHeight.BETWEEN


@dataclass(frozen=True)
class RiderCommand:
    """Rider input plus the program-completion flag consumed by the hub."""

    input: RiderInput = field(default_factory=RiderInput)
    done: bool = False


def clamp_rider_input(inp: RiderInput, p: CyclistParams) -> RiderInput:
    return RiderInput(
        pedal_power=max(0.0, inp.pedal_power),
        brake_front=clamp(inp.brake_front, 0.0, 1.0),
        brake_rear=clamp(inp.brake_rear, 0.0, 1.0),
        steer_angle=clamp(inp.steer_angle, -p.steer_limit, p.steer_limit),
        lean=clamp(inp.lean, -p.lean_limit, p.lean_limit),
        hand_height=inp.hand_height,
    )


def resistance_force(v: float, p: CyclistParams) -> float:
    """Sum of gradient, rolling and aerodynamic resistance at speed v."""
    return (p.mass * p.g * math.sin(p.grade)
            + p.crr * p.mass * p.g * math.cos(p.grade)
            + 0.5 * p.rho * p.cda * v * v)


def trainer_torque(v: float, p: CyclistParams) -> float:
    """Resistance torque commanded to the trainer at the driven wheel."""
    return resistance_force(v, p) * p.wheel_radius


def cyclist_longitudinal_step(state: CyclistState, inp: RiderInput,
                              p: CyclistParams, dt: float) -> float:
    """One explicit-Euler speed update; never returns a negative speed."""
    v = state.speed
    f_prop = inp.pedal_power / max(v, p.v_eps)
    f_resist = resistance_force(v, p)
    # static-friction guard: a bike at rest does not creep from resistance alone
    if v < STANDSTILL_EPS and f_prop <= f_resist:
        return 0.0
    f_brake = (inp.brake_front + inp.brake_rear) * p.max_brake_force
    return max(0.0, v + dt * (f_prop - f_resist - f_brake) / p.mass)


def cyclist_kinematics_step(state: CyclistState, inp: RiderInput, dt: float,
                            wheelbase: float = 1.1) -> Pose2:
    """Kinematic-bicycle pose update using the current speed."""
    v = state.speed
    pose = state.pose
    if v == 0.0:
        return pose
    x = pose.x + dt * v * math.cos(pose.heading)
    y = pose.y + dt * v * math.sin(pose.heading)
    heading = wrap_angle(pose.heading + dt * v * math.tan(inp.steer_angle) / wheelbase)
    return Pose2(x, y, heading)


def lean_steady_state(v: float, steer_angle: float, wheelbase: float = 1.1,
                      g: float = 9.81) -> float:
    """Steady-state roll reference for a coordinated turn (logged, not fed back)."""
    return math.atan(v * v * math.tan(steer_angle) / (wheelbase * g))


# ---------------------------------------------------------------------------
# Scripted rider

class _Step(Enum):
    RIDE = "ride"
    BRAKE = "brake"
    GESTURE = "gesture"
    WAIT_VEHICLE = "wait_vehicle"
    DWELL = "dwell"
    DONE = "done"


@dataclass
class _Instruction:
    step: _Step
    target_s: float = 0.0
    duration: float = 0.0


@dataclass(frozen=True)
class ScriptedRiderConfig:
    lookahead: float = 3.0
    power_gain: float = 80.0          # W per m/s of speed error
    brake_level: float = 0.5          # per-lever fraction while stopping
    brake_decel_design: float = 2.5   # m/s^2 assumed when planning brake onset
    brake_margin: float = 0.1         # m, start braking this early
    gesture_hold: float = 1.0         # s hand above head
    rearm_hold: float = 1.0           # s hand below shoulder afterwards
    initial_wait: float = 5.0         # s settled at the start before gesturing
    gap_close: float = 6.0            # m, "vehicle has closed the gap"
    vehicle_stop_speed: float = 0.05  # m/s
    off_path_limit: float = 5.0       # m
    stop_speed: float = 0.02          # m/s, rider standstill threshold


class ScriptedRider:
    """Deterministic rider policy executing a maneuver script.

    Pure pursuit steers toward the script path (curvature 2*y_L / Ld^2), a
    proportional power law with resistance feedforward regulates speed, and a
    fixed gesture choreography (raise, hold, drop below shoulder to re-arm)
    fires at the scripted events.
    """

    def __init__(self, script: ManeuverScript, params: CyclistParams | None = None,
                 config: ScriptedRiderConfig | None = None):
        self.script = script
        self.params = params or CyclistParams()
        self.cfg = config or ScriptedRiderConfig()
        self.program = self._compile(script)
        self.index = 0
        self.step_started: float | None = None
        self._progress = 0.0  # cumulative arc length, disambiguates laps
        self.trace: list[dict] = []

    def _compile(self, script: ManeuverScript) -> list[_Instruction]:
        prog: list[_Instruction] = []
        if self.cfg.initial_wait > 0:
            prog.append(_Instruction(_Step.DWELL, duration=self.cfg.initial_wait))
        pos = 0.0
        for event in script.events:
            if event.at_s is None:
                continue  # time-based events are overlaid in __call__
            if event.at_s > pos + 1e-9:
                prog.append(_Instruction(_Step.RIDE, target_s=event.at_s))
                prog.append(_Instruction(_Step.BRAKE, target_s=event.at_s))
                pos = event.at_s
            if event.kind == EventKind.START_GESTURE:
                prog.append(_Instruction(_Step.GESTURE))
            elif event.kind == EventKind.INTERMEDIATE_STOP:
                prog.append(_Instruction(_Step.WAIT_VEHICLE))
                prog.append(_Instruction(_Step.GESTURE))
                prog.append(_Instruction(_Step.DWELL, duration=event.dwell))
            elif event.kind == EventKind.STOP_GESTURE:
                prog.append(_Instruction(_Step.WAIT_VEHICLE))
                prog.append(_Instruction(_Step.GESTURE))
        prog.append(_Instruction(_Step.DONE))
        return prog

    @property
    def finished(self) -> bool:
        return self.program[self.index].step is _Step.DONE

    def _advance(self, now: float) -> None:
        self.index = min(self.index + 1, len(self.program) - 1)
        self.step_started = now

    def _pursuit_steer(self, state: CyclistState, s_proj: float) -> float:
        cfg = self.cfg
        target = self.script.path.point_at(
            min(s_proj + cfg.lookahead, self.script.path.total_length))
        dx = target[0] - state.pose.x
        dy = target[1] - state.pose.y
        c = math.cos(state.pose.heading)
        s = math.sin(state.pose.heading)
        y_left = -s * dx + c * dy
        curvature = 2.0 * y_left / (cfg.lookahead ** 2)
        return math.atan(self.params.wheelbase * curvature)

    def _cruise_power(self, v: float) -> float:
        vt = self.script.target_speed
        feedforward = resistance_force(vt, self.params) * vt
        return max(0.0, feedforward + self.cfg.power_gain * (vt - v))

    def __call__(self, world: WorldSnapshot) -> RiderCommand:
        now = world.clock.elapsed
        state = world.cyclist
        cfg = self.cfg
        if self.step_started is None:
            self.step_started = now
        instr = self.program[self.index]

        s_proj, off_path = self.script.path.project(state.pose.position,
                                                    hint_s=self._progress)
        self._progress = s_proj
        power = 0.0
        brake = 0.0
        steer = 0.0
        hand = HandHeight.BETWEEN

        if instr.step is _Step.RIDE:
            if off_path > cfg.off_path_limit:
                raise OffPathError(f"{off_path:.2f} m from path at s={s_proj:.2f}")
            brake_dist = (state.speed ** 2) / (2.0 * cfg.brake_decel_design) + cfg.brake_margin
            if instr.target_s - s_proj <= brake_dist:
                self._advance(now)
                instr = self.program[self.index]
            else:
                power = self._cruise_power(state.speed)
                steer = self._pursuit_steer(state, s_proj)
        if instr.step is _Step.BRAKE:
            steer = self._pursuit_steer(state, s_proj)
            brake = cfg.brake_level
            if state.speed <= cfg.stop_speed:
                brake = 0.0
                self._advance(now)
                instr = self.program[self.index]
        if instr.step is _Step.WAIT_VEHICLE:
            gap = distance(world.vehicle.pose, world.cyclist.pose)
            if gap < cfg.gap_close and world.vehicle.speed < cfg.vehicle_stop_speed:
                self._advance(now)
                instr = self.program[self.index]
        if instr.step is _Step.GESTURE:
            t = now - self.step_started
            if t < cfg.gesture_hold:
                hand = HandHeight.ABOVE_HEAD
            elif t < cfg.gesture_hold + cfg.rearm_hold:
                hand = HandHeight.BELOW_SHOULDER
            else:
                self._advance(now)
                instr = self.program[self.index]
        if instr.step is _Step.DWELL:
            if now - self.step_started >= instr.duration:
                self._advance(now)
                instr = self.program[self.index]

        lean = clamp(lean_steady_state(state.speed, steer, self.params.wheelbase,
                                       self.params.g),
                     -self.params.lean_limit, self.params.lean_limit)
        inp = clamp_rider_input(
            RiderInput(pedal_power=power, brake_front=brake, brake_rear=brake,
                       steer_angle=steer, lean=lean, hand_height=hand),
            self.params)
        self.trace.append({"tick": world.clock.tick, "step": instr.step.value,
                           "s": s_proj, "v": state.speed})
        return RiderCommand(input=inp, done=self.finished)
