"""Offline trajectory reconstruction: synthetic GNSS/IMU/wheel/steering
streams from ground truth, an extended Kalman filter on the kinematic bicycle
model, and composition of the cyclist's global track from relative sightings.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import HandHeight, RateDecimator, wrap_angle
from .hub import TrajectoryLog


class SingularInnovation(RuntimeError):
    pass


class NoGestureFound(RuntimeError):
    pass


@dataclass(frozen=True)
class SensorChannelConfig:
    rate: float
    sigma: float


@dataclass(frozen=True)
class SensorSuiteConfig:
    gnss: SensorChannelConfig = field(default_factory=lambda: SensorChannelConfig(5.0, 0.3))
    imu: SensorChannelConfig = field(default_factory=lambda: SensorChannelConfig(90.0, 0.01))
    wheel: SensorChannelConfig = field(default_factory=lambda: SensorChannelConfig(45.0, 0.05))
    steer_meas: SensorChannelConfig = field(default_factory=lambda: SensorChannelConfig(45.0, 0.005))
    seed: int = 0


@dataclass(frozen=True)
class GnssFix:
    tick: int
    x: float
    y: float
    var: float


@dataclass(frozen=True)
class WheelSpeed:
    tick: int
    v: float
    var: float


@dataclass(frozen=True)
class YawRate:
    tick: int
    omega: float
    var: float


@dataclass(frozen=True)
class SteerMeas:
    tick: int
    delta: float


Measurement = GnssFix | WheelSpeed | YawRate | SteerMeas


@dataclass
class EkfEstimate:
    """Mean [x, y, heading, speed] with 4x4 covariance."""

    mean: np.ndarray
    cov: np.ndarray
    tick: int = 0

    def copy(self) -> "EkfEstimate":
        return EkfEstimate(self.mean.copy(), self.cov.copy(), self.tick)


def simulate_sensors(log: TrajectoryLog, cfg: SensorSuiteConfig,
                     wheelbase: float = 2.8) -> list[Measurement]:
    """Sample each sensor from ground truth at its rate with seeded noise.

    The IMU reports the kinematic yaw rate v*tan(delta)/L evaluated on ground
    truth; GNSS reports position, the wheel channel speed, and the steering
    channel the actual steering angle (used downstream as the control input).
    """
    rng = np.random.default_rng(cfg.seed)
    tick_rate = log.tick_rate
    decs = {name: RateDecimator(tick_rate, chan.rate)
            for name, chan in (("gnss", cfg.gnss), ("imu", cfg.imu),
                               ("wheel", cfg.wheel), ("steer", cfg.steer_meas))}
    out: list[Measurement] = []
    for w in log.samples:
        tick = w.clock.tick
        v = w.vehicle
        if decs["steer"].fires(tick):
            noise = rng.normal(0.0, cfg.steer_meas.sigma) if cfg.steer_meas.sigma > 0 else 0.0
            out.append(SteerMeas(tick, v.steer_angle + noise))
        if decs["gnss"].fires(tick):
            nx = rng.normal(0.0, cfg.gnss.sigma) if cfg.gnss.sigma > 0 else 0.0
            ny = rng.normal(0.0, cfg.gnss.sigma) if cfg.gnss.sigma > 0 else 0.0
            out.append(GnssFix(tick, v.pose.x + nx, v.pose.y + ny,
                               max(cfg.gnss.sigma ** 2, 1e-12)))
        if decs["wheel"].fires(tick):
            noise = rng.normal(0.0, cfg.wheel.sigma) if cfg.wheel.sigma > 0 else 0.0
            out.append(WheelSpeed(tick, v.speed + noise,
                                  max(cfg.wheel.sigma ** 2, 1e-12)))
        if decs["imu"].fires(tick):
            omega = v.speed * math.tan(v.steer_angle) / wheelbase
            noise = rng.normal(0.0, cfg.imu.sigma) if cfg.imu.sigma > 0 else 0.0
            out.append(YawRate(tick, omega + noise, max(cfg.imu.sigma ** 2, 1e-12)))
    return out


DEFAULT_Q = np.diag([1e-6, 1e-6, 1e-6, 2.5e-4])
DEFAULT_P0 = np.diag([1.0, 1.0, 0.3, 0.1])
ALIGNED_HEADING_VAR = 1e-3  # when the init heading comes from a real baseline


def ekf_predict(est: EkfEstimate, steer: float, wheelbase: float,
                Q: np.ndarray, dt: float) -> EkfEstimate:
    """Propagate mean and covariance through the kinematic bicycle (v held)."""
    x, y, psi, v = est.mean
    mean = np.array([
        x + dt * v * math.cos(psi),
        y + dt * v * math.sin(psi),
        wrap_angle(psi + dt * v * math.tan(steer) / wheelbase),
        v,
    ])
    F = np.eye(4)
    F[0, 2] = -v * math.sin(psi) * dt
    F[0, 3] = math.cos(psi) * dt
    F[1, 2] = v * math.cos(psi) * dt
    F[1, 3] = math.sin(psi) * dt
    F[2, 3] = math.tan(steer) * dt / wheelbase
    cov = F @ est.cov @ F.T + Q
    cov = 0.5 * (cov + cov.T)
    return EkfEstimate(mean, cov, est.tick + 1)


def predict_jacobian(mean: np.ndarray, steer: float, wheelbase: float,
                     dt: float) -> np.ndarray:
    _, _, psi, v = mean
    F = np.eye(4)
    F[0, 2] = -v * math.sin(psi) * dt
    F[0, 3] = math.cos(psi) * dt
    F[1, 2] = v * math.cos(psi) * dt
    F[1, 3] = math.sin(psi) * dt
    F[2, 3] = math.tan(steer) * dt / wheelbase
    return F


def _joseph_update(est: EkfEstimate, z: np.ndarray, h: np.ndarray,
                   H: np.ndarray, R: np.ndarray,
                   wrap_rows: tuple[int, ...] = ()) -> EkfEstimate:
    innovation = z - h
    for i in wrap_rows:
        innovation[i] = wrap_angle(innovation[i])
    S = H @ est.cov @ H.T + R
    try:
        S_inv = np.linalg.inv(S)
    except np.linalg.LinAlgError:
        raise SingularInnovation("innovation covariance not invertible") from None
    K = est.cov @ H.T @ S_inv
    mean = est.mean + K @ innovation
    mean[2] = wrap_angle(mean[2])
    I_KH = np.eye(4) - K @ H
    cov = I_KH @ est.cov @ I_KH.T + K @ R @ K.T
    cov = 0.5 * (cov + cov.T)
    return EkfEstimate(mean, cov, est.tick)


def ekf_update(est: EkfEstimate, meas: Measurement, steer: float = 0.0,
               wheelbase: float = 2.8) -> EkfEstimate:
    """Fuse one measurement (Joseph-form covariance update).

    YawRate measures v*tan(delta)/L with the current steering control, so its
    Jacobian row is [0, 0, 0, tan(delta)/L].
    """
    x, y, psi, v = est.mean
    if isinstance(meas, GnssFix):
        z = np.array([meas.x, meas.y])
        h = np.array([x, y])
        H = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
        R = np.diag([meas.var, meas.var])
        return _joseph_update(est, z, h, H, R)
    if isinstance(meas, WheelSpeed):
        z = np.array([meas.v])
        h = np.array([v])
        H = np.array([[0.0, 0.0, 0.0, 1.0]])
        R = np.array([[meas.var]])
        return _joseph_update(est, z, h, H, R)
    if isinstance(meas, YawRate):
        g = math.tan(steer) / wheelbase
        z = np.array([meas.omega])
        h = np.array([v * g])
        H = np.array([[0.0, 0.0, 0.0, g]])
        R = np.array([[meas.var]])
        return _joseph_update(est, z, h, H, R)
    raise TypeError(f"not an EKF update measurement: {type(meas).__name__}")


def measurement_jacobian(meas: Measurement, mean: np.ndarray, steer: float,
                         wheelbase: float) -> np.ndarray:
    if isinstance(meas, GnssFix):
        return np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
    if isinstance(meas, WheelSpeed):
        return np.array([[0.0, 0.0, 0.0, 1.0]])
    if isinstance(meas, YawRate):
        return np.array([[0.0, 0.0, 0.0, math.tan(steer) / wheelbase]])
    raise TypeError(type(meas).__name__)


HEADING_BASELINE = 25.0  # m between the two alignment fixes


def initial_estimate(sensors: list[Measurement],
                     P0: np.ndarray | None = None,
                     heading_baseline: float = HEADING_BASELINE) -> EkfEstimate:
    """Bootstrap: first GNSS fix for position, heading from two fixes, speed
    from the first wheel sample.

    Offline alignment: the heading pair is the first fix and the first later
    fix at least `heading_baseline` apart, so GNSS noise does not randomize
    the heading when the vehicle starts from standstill. Falls back to the
    first two fixes when the track never moves that far; only then does the
    default heading variance stay at its uninformed value.
    """
    fixes = [m for m in sensors if isinstance(m, GnssFix)]
    wheels = [m for m in sensors if isinstance(m, WheelSpeed)]
    if len(fixes) < 2:
        raise ValueError("need at least two GNSS fixes to initialize")
    first = fixes[0]
    second = next((f for f in fixes[1:]
                   if math.hypot(f.x - first.x, f.y - first.y) >= heading_baseline),
                  None)
    aligned = second is not None
    if second is None:
        second = fixes[1]
    dx, dy = second.x - first.x, second.y - first.y
    heading = math.atan2(dy, dx) if math.hypot(dx, dy) > 1e-9 else 0.0
    v0 = wheels[0].v if wheels else 0.0
    if P0 is None:
        P0 = DEFAULT_P0.copy()
        if aligned:
            P0[2, 2] = ALIGNED_HEADING_VAR
    else:
        P0 = P0.copy()
    return EkfEstimate(np.array([first.x, first.y, heading, v0]), P0,
                       tick=first.tick)


def reconstruct_trajectory(sensors: list[Measurement], init: EkfEstimate,
                           wheelbase: float = 2.8,
                           Q: np.ndarray | None = None,
                           tick_rate: float = 90.0) -> list[EkfEstimate]:
    """Predict at tick rate with the latest steering measurement as control;
    update on measurement arrival. Returns one estimate per tick."""
    Q = DEFAULT_Q.copy() if Q is None else Q
    dt = 1.0 / tick_rate
    by_tick: dict[int, list[Measurement]] = {}
    last_tick = init.tick
    for m in sensors:
        by_tick.setdefault(m.tick, []).append(m)
        last_tick = max(last_tick, m.tick)

    steer = 0.0
    for m in by_tick.get(init.tick, []):
        if isinstance(m, SteerMeas):
            steer = m.delta
    est = init.copy()
    for m in by_tick.get(init.tick, []):
        if not isinstance(m, SteerMeas):
            est = ekf_update(est, m, steer=steer, wheelbase=wheelbase)
    out = [est.copy()]
    for tick in range(init.tick + 1, last_tick + 1):
        est = ekf_predict(est, steer, wheelbase, Q, dt)
        for m in by_tick.get(tick, []):
            if isinstance(m, SteerMeas):
                steer = m.delta
        for m in by_tick.get(tick, []):
            if not isinstance(m, SteerMeas):
                est = ekf_update(est, m, steer=steer, wheelbase=wheelbase)
        out.append(est.copy())
    return out


def sample_relative_observations(log: TrajectoryLog, rate: float = 20.0,
                                 sigma: float = 0.1, seed: int = 0
                                 ) -> list[tuple[int, tuple[float, float]]]:
    """Body-frame cyclist offsets sampled from ground truth with noise; the
    stand-in for a camera/range detection pipeline."""
    rng = np.random.default_rng(seed)
    dec = RateDecimator(log.tick_rate, rate)
    out = []
    for w in log.samples:
        if not dec.fires(w.clock.tick):
            continue
        vp, cp = w.vehicle.pose, w.cyclist.pose
        dx, dy = cp.x - vp.x, cp.y - vp.y
        c, s = math.cos(vp.heading), math.sin(vp.heading)
        rel = [c * dx + s * dy, -s * dx + c * dy]
        if sigma > 0:
            rel[0] += rng.normal(0.0, sigma)
            rel[1] += rng.normal(0.0, sigma)
        out.append((w.clock.tick, (rel[0], rel[1])))
    return out


def first_gesture_tick(log: TrajectoryLog) -> int:
    for w in log.samples:
        if w.cyclist.hand_height is HandHeight.ABOVE_HEAD:
            return w.clock.tick
    raise NoGestureFound("no raised hand in the log")


def cyclist_global_track(vehicle_estimates: list[EkfEstimate],
                         relative_observations: list[tuple[int, tuple[float, float]]],
                         gesture_tick: int,
                         anchor_point: tuple[float, float]
                         ) -> list[tuple[int, float, float]]:
    """Compose vehicle estimates with relative sightings, then rigidly shift
    the track so the position at the first-gesture tick equals the anchor."""
    by_tick = {e.tick: e for e in vehicle_estimates}
    raw: list[tuple[int, float, float]] = []
    for tick, rel in relative_observations:
        est = by_tick.get(tick)
        if est is None:
            continue
        x, y, psi, _ = est.mean
        c, s = math.cos(psi), math.sin(psi)
        raw.append((tick, x + c * rel[0] - s * rel[1], y + s * rel[0] + c * rel[1]))
    if not raw:
        return []
    anchor_obs = min(raw, key=lambda r: abs(r[0] - gesture_tick))
    shift_x = anchor_point[0] - anchor_obs[1]
    shift_y = anchor_point[1] - anchor_obs[2]
    return [(tick, x + shift_x, y + shift_y) for tick, x, y in raw]


def covariance_upper_triangle(cov: np.ndarray) -> list[float]:
    return [float(cov[i, j]) for i in range(4) for j in range(i, 4)]
