"""Automated shuttle control stack: emulated cyclist perception, the
track-and-follow controller (gesture state machine, distance PID, yaw-offset
steering), actuator limiting with safety override, and the kinematic bicycle
plant model.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .core import (HandHeight, Pose2, RateDecimator, VehicleState,
                   WorldSnapshot, clamp, wrap_angle)
from .protocol import ChannelCondition, SimulatedChannel


@dataclass(frozen=True)
class VehicleParams:
    wheelbase: float = 2.8          # m
    steer_limit: float = 0.6        # rad
    steer_rate_limit: float = 0.7   # rad/s
    accel_limit: float = 1.0        # m/s^2
    decel_limit: float = 2.0        # m/s^2 (positive magnitude)
    v_max: float = 3.0              # m/s
    response_time: float = 0.5      # s, velocity-command first-order constant

    def __post_init__(self):
        for name in ("wheelbase", "steer_limit", "steer_rate_limit",
                     "accel_limit", "decel_limit", "v_max", "response_time"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class PerceptionConfig:
    sample_rate: float = 20.0            # Hz
    fov_half_angle: float = 0.87         # rad (~50 deg)
    max_range: float = 40.0              # m
    position_noise_sigma: float = 0.1    # m
    detection_latency: ChannelCondition = field(default_factory=ChannelCondition)
    seed: int = 0


@dataclass(frozen=True)
class Observation:
    tick_observed: int
    relative_position: tuple[float, float]
    hand_above_head: bool = False
    hand_below_shoulder: bool = False
    valid: bool = True


class TffMode(Enum):
    INACTIVE = "inactive"
    ACTIVE = "active"


@dataclass(frozen=True)
class TffState:
    mode: TffMode = TffMode.INACTIVE
    armed: bool = True
    pid_integral: float = 0.0
    pid_prev_error: float | None = None  # None = no error seen since activation
    target_valid: bool = False


@dataclass(frozen=True)
class TffConfig:
    follow_distance: float = 5.0    # m
    kp: float = 1.0                 # 1/s
    ki: float = 0.18                # 1/s^2
    kd: float = 0.3
    integral_clamp: float = 5.0     # m*s
    steer_gain: float = 1.2
    detection_hold: float = 0.5     # s to hold the last command on lost detection

    def __post_init__(self):
        if self.follow_distance <= 0:
            raise ValueError("follow_distance must be > 0")
        for name in ("kp", "ki", "kd", "integral_clamp", "steer_gain"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def sense(world: WorldSnapshot, cfg: PerceptionConfig,
          rng: np.random.Generator) -> Observation:
    """Emulated cyclist detection in the vehicle body frame.

    Gating (range, field of view) uses the true geometry; the reported
    position carries additive Gaussian noise. Hand predicates are exact.
    Returns an invalid observation when the cyclist is not detectable.
    """
    vp = world.vehicle.pose
    cp = world.cyclist.pose
    dx = cp.x - vp.x
    dy = cp.y - vp.y
    c = math.cos(vp.heading)
    s = math.sin(vp.heading)
    rel = (c * dx + s * dy, -s * dx + c * dy)
    rng_dist = math.hypot(*rel)
    tick = world.clock.tick
    if rng_dist > cfg.max_range or rng_dist <= 1e-12:
        return Observation(tick, (0.0, 0.0), valid=False)
    if abs(math.atan2(rel[1], rel[0])) > cfg.fov_half_angle:
        return Observation(tick, (0.0, 0.0), valid=False)
    if cfg.position_noise_sigma > 0:
        noise = rng.normal(0.0, cfg.position_noise_sigma, 2)
        rel = (rel[0] + noise[0], rel[1] + noise[1])
    hand = world.cyclist.hand_height
    return Observation(
        tick, rel,
        hand_above_head=hand is HandHeight.ABOVE_HEAD,
        hand_below_shoulder=hand is HandHeight.BELOW_SHOULDER,
        valid=True)


def tff_update_mode(state: TffState, obs: Observation) -> TffState:
    """Gesture state machine with below-shoulder re-arm hysteresis."""
    if not state.armed and obs.hand_below_shoulder:
        return replace(state, armed=True, target_valid=True)
    if state.armed and obs.hand_above_head:
        if state.mode is TffMode.INACTIVE:
            return TffState(mode=TffMode.ACTIVE, armed=False,
                            pid_integral=0.0, pid_prev_error=None,
                            target_valid=True)
        return replace(state, mode=TffMode.INACTIVE, armed=False,
                       target_valid=True)
    return replace(state, target_valid=True)


def tff_longitudinal(state: TffState, obs: Observation, cfg: TffConfig,
                     dt: float, v_max: float = 3.0) -> tuple[float, TffState]:
    """Distance-error PID producing the longitudinal velocity command."""
    if state.mode is not TffMode.ACTIVE:
        return 0.0, replace(state, pid_integral=0.0, pid_prev_error=None)
    e = math.hypot(*obs.relative_position) - cfg.follow_distance
    integral = clamp(state.pid_integral + e * dt,
                     -cfg.integral_clamp, cfg.integral_clamp)
    de = 0.0 if state.pid_prev_error is None else (e - state.pid_prev_error) / dt
    v_cmd = clamp(cfg.kp * e + cfg.ki * integral + cfg.kd * de, 0.0, v_max)
    return v_cmd, replace(state, pid_integral=integral, pid_prev_error=e)


def tff_lateral(obs: Observation, cfg: TffConfig, params: VehicleParams) -> float:
    """Steer proportionally to the target's bearing in the body frame."""
    bearing = math.atan2(obs.relative_position[1], obs.relative_position[0])
    return clamp(cfg.steer_gain * bearing, -params.steer_limit, params.steer_limit)


@dataclass(frozen=True)
class Override:
    """External command that replaces the controller output entirely."""

    accel_cmd: float
    steer_cmd: float


def full_stop_override(current: VehicleState, params: VehicleParams) -> Override:
    accel = -params.decel_limit if current.speed > 0 else 0.0
    return Override(accel_cmd=accel, steer_cmd=current.steer_angle)


def act(v_cmd: float, steer_cmd: float, current: VehicleState,
        params: VehicleParams, override: Override | None,
        dt: float) -> tuple[float, float]:
    """Actuation layer: velocity command to bounded acceleration, steering
    slewed toward its command, optional override taking full precedence."""
    if override is not None:
        accel = clamp(override.accel_cmd, -params.decel_limit, params.accel_limit)
        steer_target = override.steer_cmd
    else:
        accel = clamp((v_cmd - current.speed) / params.response_time,
                      -params.decel_limit, params.accel_limit)
        steer_target = steer_cmd
    max_step = params.steer_rate_limit * dt
    steer = current.steer_angle + clamp(steer_target - current.steer_angle,
                                        -max_step, max_step)
    steer = clamp(steer, -params.steer_limit, params.steer_limit)
    return accel, steer


def vehicle_dynamics_step(state: VehicleState, accel_cmd: float,
                          steer_angle: float, params: VehicleParams,
                          dt: float) -> VehicleState:
    """Kinematic bicycle, explicit forward Euler, speed clamped to [0, v_max]."""
    v = state.speed
    pose = state.pose
    x = pose.x + dt * v * math.cos(pose.heading)
    y = pose.y + dt * v * math.sin(pose.heading)
    heading = wrap_angle(pose.heading + dt * v * math.tan(steer_angle) / params.wheelbase)
    speed = clamp(v + dt * accel_cmd, 0.0, params.v_max)
    return VehicleState(pose=Pose2(x, y, heading), speed=speed,
                        steer_angle=steer_angle, accel_cmd=accel_cmd,
                        steer_cmd=state.steer_cmd)


@dataclass(frozen=True)
class VehicleCommand:
    accel_cmd: float = 0.0
    steer_cmd: float = 0.0


class TrackAndFollow:
    """Stateful sense-plan-act policy usable in-process or by the agent client.

    Perception fires at its own decimated rate; between samples the last
    command holds. On lost detection while following, the last velocity
    command holds for `detection_hold` seconds, then the vehicle ramps to a
    stop at the deceleration limit while staying armed to re-acquire.
    """

    def __init__(self, params: VehicleParams | None = None,
                 tff: TffConfig | None = None,
                 perception: PerceptionConfig | None = None,
                 override_fn=None):
        self.params = params or VehicleParams()
        self.tff = tff or TffConfig()
        self.perception = perception or PerceptionConfig()
        self.override_fn = override_fn
        self.state = TffState()
        self.rng = np.random.default_rng(self.perception.seed)
        self._decimator: RateDecimator | None = None
        self._obs_channel = (None if self.perception.detection_latency.ideal
                             else SimulatedChannel(self.perception.detection_latency))
        self._v_cmd = 0.0
        self._steer_cmd = 0.0
        self._last_e: float | None = None
        self._last_valid_time: float | None = None
        self.trace: list[dict] = []

    def _observe(self, world: WorldSnapshot) -> Observation | None:
        if self._decimator is None:
            self._decimator = RateDecimator(world.clock.tick_rate,
                                            self.perception.sample_rate)
        now = world.clock.elapsed
        fresh: Observation | None = None
        if self._decimator.fires(world.clock.tick):
            raw = sense(world, self.perception, self.rng)
            if self._obs_channel is None:
                fresh = raw
            else:
                self._obs_channel.send(now, raw)
        if self._obs_channel is not None:
            delivered = self._obs_channel.poll(now)
            if delivered:
                fresh = delivered[-1]
        return fresh

    def __call__(self, world: WorldSnapshot) -> VehicleCommand:
        dt = 1.0 / world.clock.tick_rate
        now = world.clock.elapsed
        obs = self._observe(world)

        if obs is not None and obs.valid:
            self.state = tff_update_mode(self.state, obs)
            if self.state.mode is TffMode.ACTIVE:
                v_cmd, self.state = tff_longitudinal(
                    self.state, obs, self.tff, dt, v_max=self.params.v_max)
                steer = tff_lateral(obs, self.tff, self.params)
            else:
                v_cmd, steer = 0.0, 0.0
            self._v_cmd, self._steer_cmd = v_cmd, steer
            self._last_e = math.hypot(*obs.relative_position) - self.tff.follow_distance
            self._last_valid_time = now
        elif self.state.mode is TffMode.ACTIVE and self._last_valid_time is not None:
            if now - self._last_valid_time > self.tff.detection_hold:
                self._v_cmd = 0.0  # fail-safe ramp via the decel clamp in act()

        override = self.override_fn(world) if self.override_fn else None
        accel, steer_limited = act(self._v_cmd, self._steer_cmd, world.vehicle,
                                   self.params, override, dt)
        self.trace.append({
            "tick": world.clock.tick,
            "mode": self.state.mode.value,
            "armed": self.state.armed,
            "e": self._last_e,
            "v_cmd": self._v_cmd,
            "steer_cmd": steer_limited,
        })
        return VehicleCommand(accel_cmd=accel, steer_cmd=steer_limited)


def stop_override_after(t_stop: float, params: VehicleParams):
    """Override factory for the CLI's --override-stop-at flag."""
    def fn(world: WorldSnapshot) -> Override | None:
        if world.clock.elapsed >= t_stop:
            return full_stop_override(world.vehicle, params)
        return None
    return fn
