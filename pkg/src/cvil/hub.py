"""Authoritative virtual-environment hub.

Owns the world state, advances it at the fixed tick rate, applies the latest
accepted agent commands (hold-last-value on starvation), supervises the
scenario phase, broadcasts snapshots, and logs ground truth per tick.

Lockstep mode is the reference semantics: single-threaded, no sockets, no
wall clock, byte-identical logs for equal seeds. Realtime mode serves UDP
clients on a wall-clock-aligned tick schedule and must converge to lockstep
as channel conditions go ideal.
"""
from __future__ import annotations

import json
import logging
import queue
import socket
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

from .core import (CyclistState, HandHeight, Pose2, RateDecimator,
                   ScenarioPhase, SimClock, VehicleState, WorldSnapshot, clamp)
from .cyclist import (CyclistParams, RiderCommand, RiderInput,
                      clamp_rider_input, cyclist_kinematics_step,
                      cyclist_longitudinal_step)
from . import protocol
from .protocol import (Bye, Hello, RiderInputMsg, SnapshotMsg,
                       VehicleInputMsg, decode, encode, freshness_filter)
from .vehicle import VehicleCommand, VehicleParams, vehicle_dynamics_step

log = logging.getLogger(__name__)

STANDSTILL_SPEED = 0.05  # m/s, used by the phase supervisor


class PortBindFailure(OSError):
    pass


@dataclass(frozen=True)
class HubConfig:
    tick_rate: float = 90.0
    snapshot_rate: float = 90.0
    mode: str = "lockstep"
    log_path: str | None = None
    seed: int = 0
    port: int = protocol.DEFAULT_HUB_PORT
    deadline_miss_threshold: float = 0.01
    rider_failsafe_s: float | None = 0.5  # realtime only
    end_grace_ticks: int = 90

    def __post_init__(self):
        if self.tick_rate <= 0:
            raise ValueError("tick_rate must be > 0")
        if self.snapshot_rate > self.tick_rate:
            raise ValueError("snapshot_rate must be <= tick_rate")


@dataclass
class ClientSession:
    client_id: int
    role: int
    addr: tuple[str, int]
    last_input_tick: int | None = None
    last_seen: float = 0.0


def hub_step(world: WorldSnapshot, vehicle_cmd: VehicleCommand,
             rider_cmd: RiderCommand, vparams: VehicleParams,
             cparams: CyclistParams, dt: float) -> WorldSnapshot:
    """Advance the world one tick from the latest accepted commands.

    The hub is authoritative: it re-clamps every command against the physical
    limits before integrating, and runs the scenario phase supervisor.
    """
    steer = clamp(vehicle_cmd.steer_cmd, -vparams.steer_limit, vparams.steer_limit)
    accel = clamp(vehicle_cmd.accel_cmd, -vparams.decel_limit, vparams.accel_limit)
    vehicle = vehicle_dynamics_step(
        replace(world.vehicle, steer_cmd=vehicle_cmd.steer_cmd),
        accel, steer, vparams, dt)

    inp = clamp_rider_input(rider_cmd.input, cparams)
    speed = cyclist_longitudinal_step(world.cyclist, inp, cparams, dt)
    pose = cyclist_kinematics_step(world.cyclist, inp, dt, cparams.wheelbase)
    cyclist = CyclistState(
        pose=pose, speed=speed, lean=inp.lean, steer_angle=inp.steer_angle,
        hand_height=inp.hand_height, pedal_power=inp.pedal_power,
        brake_force_front=inp.brake_front * cparams.max_brake_force,
        brake_force_rear=inp.brake_rear * cparams.max_brake_force)

    phase = world.phase
    if phase is ScenarioPhase.PRE_START and inp.hand_height is HandHeight.ABOVE_HEAD:
        phase = ScenarioPhase.RUNNING
    elif (phase is ScenarioPhase.RUNNING and rider_cmd.done
          and vehicle.speed < STANDSTILL_SPEED and speed < STANDSTILL_SPEED):
        phase = ScenarioPhase.ENDED

    return WorldSnapshot(clock=world.clock.advance(), vehicle=vehicle,
                         cyclist=cyclist, phase=phase)


# ---------------------------------------------------------------------------
# Ground-truth log

def snapshot_to_row(w: WorldSnapshot) -> dict:
    v, c = w.vehicle, w.cyclist
    return {
        "tick": w.clock.tick,
        "t": w.clock.elapsed,
        "veh": {"x": v.pose.x, "y": v.pose.y, "psi": v.pose.heading,
                "v": v.speed, "delta": v.steer_angle},
        "cyc": {"x": c.pose.x, "y": c.pose.y, "psi": c.pose.heading,
                "v": c.speed, "lean": c.lean, "hand": c.hand_height.label,
                "p": c.pedal_power, "bf": c.brake_force_front,
                "br": c.brake_force_rear},
        "phase": w.phase.label,
    }


def row_to_snapshot(row: dict, tick_rate: float = 90.0) -> WorldSnapshot:
    v, c = row["veh"], row["cyc"]
    return WorldSnapshot(
        clock=SimClock(tick=row["tick"], tick_rate=tick_rate),
        vehicle=VehicleState(pose=Pose2(v["x"], v["y"], v["psi"]),
                             speed=v["v"], steer_angle=v["delta"]),
        cyclist=CyclistState(pose=Pose2(c["x"], c["y"], c["psi"]), speed=c["v"],
                             lean=c["lean"],
                             hand_height=HandHeight.from_label(c["hand"]),
                             pedal_power=c["p"], brake_force_front=c["bf"],
                             brake_force_rear=c["br"]),
        phase=ScenarioPhase.from_label(row["phase"]))


@dataclass
class TrajectoryLog:
    metadata: dict
    samples: list[WorldSnapshot] = field(default_factory=list)

    @property
    def tick_rate(self) -> float:
        return self.metadata.get("tick_rate", 90.0)

    def rows(self):
        return [snapshot_to_row(w) for w in self.samples]

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w") as f:
            f.write(json.dumps({"meta": self.metadata}) + "\n")
            for w in self.samples:
                f.write(json.dumps(snapshot_to_row(w)) + "\n")

    @classmethod
    def read_jsonl(cls, path: str | Path) -> "TrajectoryLog":
        metadata: dict = {}
        samples: list[WorldSnapshot] = []
        with open(path) as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                if "meta" in obj:
                    metadata = obj["meta"]
                else:
                    samples.append(row_to_snapshot(obj, metadata.get("tick_rate", 90.0)))
        return cls(metadata=metadata, samples=samples)


# ---------------------------------------------------------------------------
# Lockstep

def run_lockstep(config: HubConfig, vehicle_policy, rider_policy, n_ticks: int,
                 initial_world: WorldSnapshot | None = None,
                 metadata: dict | None = None,
                 vparams: VehicleParams | None = None,
                 cparams: CyclistParams | None = None,
                 stop_on_end: bool = True) -> TrajectoryLog:
    """Single-process deterministic run; the reference semantics for tests.

    Policies are deterministic callables of the snapshot; returning None means
    "no input this tick" and the last accepted command is held.
    """
    vparams = vparams or VehicleParams()
    cparams = cparams or CyclistParams()
    dt = 1.0 / config.tick_rate
    world = initial_world or WorldSnapshot(clock=SimClock(0, config.tick_rate))
    meta = {"mode": "lockstep", "seed": config.seed,
            "tick_rate": config.tick_rate, **(metadata or {})}
    traj = TrajectoryLog(metadata=meta, samples=[world])
    vehicle_cmd = VehicleCommand()
    rider_cmd = RiderCommand()
    for _ in range(n_ticks):
        out = vehicle_policy(world) if vehicle_policy else None
        if out is not None:
            vehicle_cmd = out
        out = rider_policy(world) if rider_policy else None
        if out is not None:
            rider_cmd = out
        world = hub_step(world, vehicle_cmd, rider_cmd, vparams, cparams, dt)
        traj.samples.append(world)
        if stop_on_end and world.phase is ScenarioPhase.ENDED:
            break
    return traj


# ---------------------------------------------------------------------------
# Realtime

RIDER_ROLES = (protocol.ROLE_CYCLIST, protocol.ROLE_GATEWAY)


class RealtimeHub:
    """UDP hub on a wall-clock tick schedule.

    A receiver thread decodes datagrams into a queue; the simulation thread
    drains it at each tick boundary, applies freshness filtering per session,
    steps the world, and broadcasts snapshots at the decimated rate.
    """

    def __init__(self, config: HubConfig,
                 initial_world: WorldSnapshot | None = None,
                 vparams: VehicleParams | None = None,
                 cparams: CyclistParams | None = None,
                 metadata: dict | None = None):
        self.config = config
        self.vparams = vparams or VehicleParams()
        self.cparams = cparams or CyclistParams()
        self.world = initial_world or WorldSnapshot(clock=SimClock(0, config.tick_rate))
        self.metadata = {"mode": "realtime", "seed": config.seed,
                         "tick_rate": config.tick_rate, **(metadata or {})}
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            self.sock.bind(("127.0.0.1", config.port))
        except OSError as exc:
            raise PortBindFailure(f"cannot bind UDP port {config.port}: {exc}") from exc
        self.bound_port = self.sock.getsockname()[1]
        self._queue: queue.Queue = queue.Queue()
        self._stop = threading.Event()
        self.sessions: dict[tuple[str, int], ClientSession] = {}
        self._next_client_id = 10
        self.report: dict = {}

    def request_stop(self) -> None:
        self._stop.set()

    def _recv_loop(self) -> None:
        self.sock.settimeout(0.2)
        while not self._stop.is_set():
            try:
                data, addr = self.sock.recvfrom(protocol.MAX_DATAGRAM)
            except socket.timeout:
                continue
            except OSError:
                break
            try:
                msg = decode(data, tick_rate=self.config.tick_rate)
            except protocol.DecodeError as exc:
                log.warning("dropping undecodable datagram from %s: %s", addr, exc)
                continue
            self._queue.put((msg, addr))

    def _register(self, msg: Hello, addr) -> None:
        existing = self.sessions.get(addr)
        if existing is not None:
            existing.last_seen = time.monotonic()
            return
        if msg.role in (protocol.ROLE_VEHICLE,) + RIDER_ROLES:
            for s in self.sessions.values():
                same_kind = (s.role == msg.role
                             or (s.role in RIDER_ROLES and msg.role in RIDER_ROLES))
                if same_kind:
                    log.warning("rejecting duplicate %s session from %s",
                                protocol.ROLE_NAMES[msg.role], addr)
                    return
        cid = msg.client_id or self._next_client_id
        self._next_client_id += 1
        self.sessions[addr] = ClientSession(client_id=cid, role=msg.role,
                                            addr=addr, last_seen=time.monotonic())
        log.info("registered %s session %d from %s",
                 protocol.ROLE_NAMES[msg.role], cid, addr)
        ack = Hello(client_id=0, role=msg.role, tick=self.world.clock.tick)
        self.sock.sendto(encode(ack), addr)

    def run(self, n_ticks: int) -> TrajectoryLog:
        recv_thread = threading.Thread(target=self._recv_loop, daemon=True)
        recv_thread.start()
        dt = 1.0 / self.config.tick_rate
        decimator = RateDecimator(self.config.tick_rate, self.config.snapshot_rate)
        traj = TrajectoryLog(metadata=self.metadata, samples=[self.world])
        vehicle_cmd = VehicleCommand()
        rider_cmd = RiderCommand()
        last_rider_tick: int | None = None
        misses = 0
        starved_warn_at = 0.0
        ended_at_tick: int | None = None

        if decimator.fires(self.world.clock.tick):
            self._broadcast(self.world)
        t0 = time.monotonic()
        try:
            for k in range(1, n_ticks + 1):
                deadline = t0 + k * dt
                now = time.monotonic()
                if deadline > now:
                    time.sleep(deadline - now)
                elif now - deadline > dt:
                    misses += 1

                while True:
                    try:
                        msg, addr = self._queue.get_nowait()
                    except queue.Empty:
                        break
                    if isinstance(msg, Hello):
                        self._register(msg, addr)
                        continue
                    session = self.sessions.get(addr)
                    if session is None:
                        continue
                    if isinstance(msg, Bye):
                        del self.sessions[addr]
                        continue
                    if not freshness_filter(session.last_input_tick, msg.tick):
                        continue
                    session.last_input_tick = msg.tick
                    session.last_seen = time.monotonic()
                    if isinstance(msg, VehicleInputMsg) and session.role == protocol.ROLE_VEHICLE:
                        vehicle_cmd = VehicleCommand(msg.accel_cmd, msg.steer_cmd)
                    elif isinstance(msg, RiderInputMsg) and session.role in RIDER_ROLES:
                        rider_cmd = RiderCommand(input=msg.input, done=msg.done)
                        last_rider_tick = self.world.clock.tick

                now_mono = time.monotonic()
                for session in self.sessions.values():
                    if (session.role in (protocol.ROLE_VEHICLE,) + RIDER_ROLES
                            and session.last_input_tick is not None
                            and now_mono - session.last_seen > 1.0
                            and now_mono - starved_warn_at > 1.0):
                        log.warning("input starved from %s since tick %s (now tick %d)",
                                    protocol.ROLE_NAMES[session.role],
                                    session.last_input_tick, self.world.clock.tick)
                        starved_warn_at = now_mono

                applied_rider = rider_cmd
                if (self.config.rider_failsafe_s is not None
                        and last_rider_tick is not None
                        and (self.world.clock.tick - last_rider_tick) * dt
                        > self.config.rider_failsafe_s):
                    applied_rider = RiderCommand(input=replace(
                        rider_cmd.input, pedal_power=0.0,
                        brake_front=0.3, brake_rear=0.3,
                        hand_height=HandHeight.BETWEEN))
                    if time.monotonic() - starved_warn_at > 1.0:
                        log.warning("rider input starved at tick %d; fail-safe ramp",
                                    self.world.clock.tick)
                        starved_warn_at = time.monotonic()

                self.world = hub_step(self.world, vehicle_cmd, applied_rider,
                                      self.vparams, self.cparams, dt)
                traj.samples.append(self.world)
                if decimator.fires(self.world.clock.tick):
                    self._broadcast(self.world)

                if self.world.phase is ScenarioPhase.ENDED and ended_at_tick is None:
                    ended_at_tick = self.world.clock.tick
                if (ended_at_tick is not None
                        and self.world.clock.tick - ended_at_tick
                        >= self.config.end_grace_ticks):
                    break
                if self._stop.is_set():
                    break
        finally:
            for addr in list(self.sessions):
                try:
                    self.sock.sendto(encode(Bye(client_id=0,
                                                tick=self.world.clock.tick)), addr)
                except OSError:
                    pass
            self._stop.set()
            recv_thread.join(timeout=1.0)
            self.sock.close()

        ticks_run = self.world.clock.tick
        miss_rate = misses / max(1, ticks_run)
        self.report = {
            "ticks": ticks_run,
            "deadline_misses": misses,
            "miss_rate": miss_rate,
            "miss_rate_exceeded": miss_rate > self.config.deadline_miss_threshold,
            "sessions_at_exit": len(self.sessions),
        }
        return traj

    def _broadcast(self, world: WorldSnapshot) -> None:
        payload = encode(SnapshotMsg(client_id=0, snapshot=world))
        for addr in list(self.sessions):
            try:
                self.sock.sendto(payload, addr)
            except OSError:
                pass
