"""Fixed-layout datagram protocol plus the deterministic channel model.

Every message starts with an 11-byte header: magic "CVIL", version, message
type, client id, and a little-endian u32 tick. Payload reals are 64-bit IEEE
little-endian. Layouts are fixed so golden-byte fixtures and cross-language
peers can be tested bit-exactly.
"""
from __future__ import annotations

import heapq
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .core import (CyclistState, HandHeight, Pose2, ScenarioPhase, SimClock,
                   VehicleState, WorldSnapshot)
from .cyclist import RiderInput

MAGIC = b"CVIL"
VERSION = 1
HEADER = struct.Struct("<4sBBBI")
HEADER_SIZE = HEADER.size  # 11 bytes
MAX_DATAGRAM = 512
DEFAULT_HUB_PORT = 47900

MSG_HELLO = 1
MSG_SNAPSHOT = 2
MSG_VEHICLE_INPUT = 3
MSG_RIDER_INPUT = 4
MSG_BYE = 5

ROLE_VEHICLE = 1
ROLE_CYCLIST = 2
ROLE_GATEWAY = 3
ROLE_OBSERVER = 4
ROLE_NAMES = {ROLE_VEHICLE: "vehicle", ROLE_CYCLIST: "cyclist",
              ROLE_GATEWAY: "gateway", ROLE_OBSERVER: "observer"}


class DecodeError(ValueError):
    """Base class; `field` names the earliest violated field."""

    def __init__(self, field_name: str, detail: str = ""):
        self.field = field_name
        super().__init__(f"{field_name}: {detail}" if detail else field_name)


class BadMagic(DecodeError):
    pass


class BadVersion(DecodeError):
    pass


class BadType(DecodeError):
    pass


class TruncatedPayload(DecodeError):
    pass


@dataclass(frozen=True)
class Hello:
    client_id: int
    role: int
    tick: int = 0


@dataclass(frozen=True)
class Bye:
    client_id: int
    tick: int = 0


@dataclass(frozen=True)
class VehicleInputMsg:
    client_id: int
    tick: int
    accel_cmd: float
    steer_cmd: float


@dataclass(frozen=True)
class RiderInputMsg:
    client_id: int
    tick: int
    input: RiderInput
    done: bool = False


@dataclass(frozen=True)
class SnapshotMsg:
    client_id: int
    snapshot: WorldSnapshot

    @property
    def tick(self) -> int:
        return self.snapshot.clock.tick


Message = Hello | Bye | VehicleInputMsg | RiderInputMsg | SnapshotMsg

_SNAP_BODY = struct.Struct("<5d9dBB")
_RIDER_BODY = struct.Struct("<5dBB")
_VEH_BODY = struct.Struct("<dd")
_HELLO_BODY = struct.Struct("<B")


def _header(msg_type: int, client_id: int, tick: int) -> bytes:
    return HEADER.pack(MAGIC, VERSION, msg_type, client_id, tick)


def encode(msg: Message) -> bytes:
    if isinstance(msg, Hello):
        return _header(MSG_HELLO, msg.client_id, msg.tick) + _HELLO_BODY.pack(msg.role)
    if isinstance(msg, Bye):
        return _header(MSG_BYE, msg.client_id, msg.tick)
    if isinstance(msg, VehicleInputMsg):
        return (_header(MSG_VEHICLE_INPUT, msg.client_id, msg.tick)
                + _VEH_BODY.pack(msg.accel_cmd, msg.steer_cmd))
    if isinstance(msg, RiderInputMsg):
        i = msg.input
        return (_header(MSG_RIDER_INPUT, msg.client_id, msg.tick)
                + _RIDER_BODY.pack(i.pedal_power, i.brake_front, i.brake_rear,
                                   i.steer_angle, i.lean, i.hand_height.value,
                                   1 if msg.done else 0))
    if isinstance(msg, SnapshotMsg):
        w = msg.snapshot
        v, c = w.vehicle, w.cyclist
        return (_header(MSG_SNAPSHOT, msg.client_id, w.clock.tick)
                + _SNAP_BODY.pack(
                    v.pose.x, v.pose.y, v.pose.heading, v.speed, v.steer_angle,
                    c.pose.x, c.pose.y, c.pose.heading, c.speed, c.lean,
                    c.steer_angle, c.pedal_power, c.brake_force_front,
                    c.brake_force_rear, c.hand_height.value, w.phase.value))
    raise TypeError(f"cannot encode {type(msg).__name__}")


_PAYLOAD_SIZES = {
    MSG_HELLO: _HELLO_BODY.size,
    MSG_SNAPSHOT: _SNAP_BODY.size,
    MSG_VEHICLE_INPUT: _VEH_BODY.size,
    MSG_RIDER_INPUT: _RIDER_BODY.size,
    MSG_BYE: 0,
}


def decode(data: bytes, tick_rate: float = 90.0) -> Message:
    """Exact inverse of encode; raises the error naming the first bad field."""
    if len(data) < HEADER_SIZE:
        raise TruncatedPayload("header", f"{len(data)} bytes < {HEADER_SIZE}")
    magic, version, msg_type, client_id, tick = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagic("magic", magic.hex())
    if version != VERSION:
        raise BadVersion("version", str(version))
    if msg_type not in _PAYLOAD_SIZES:
        raise BadType("msg_type", str(msg_type))
    payload = data[HEADER_SIZE:]
    expected = _PAYLOAD_SIZES[msg_type]
    if len(payload) != expected:
        raise TruncatedPayload("payload", f"{len(payload)} bytes, expected {expected}")

    if msg_type == MSG_BYE:
        return Bye(client_id=client_id, tick=tick)
    if msg_type == MSG_HELLO:
        (role,) = _HELLO_BODY.unpack(payload)
        if role not in ROLE_NAMES:
            raise BadType("role", str(role))
        return Hello(client_id=client_id, role=role, tick=tick)
    if msg_type == MSG_VEHICLE_INPUT:
        accel, steer = _VEH_BODY.unpack(payload)
        return VehicleInputMsg(client_id=client_id, tick=tick,
                               accel_cmd=accel, steer_cmd=steer)
    if msg_type == MSG_RIDER_INPUT:
        power, bf, br, steer, lean, hand, done = _RIDER_BODY.unpack(payload)
        try:
            hand_enum = HandHeight(hand)
        except ValueError:
            raise BadType("hand_height", str(hand)) from None
        return RiderInputMsg(
            client_id=client_id, tick=tick,
            input=RiderInput(pedal_power=power, brake_front=bf, brake_rear=br,
                             steer_angle=steer, lean=lean, hand_height=hand_enum),
            done=bool(done))

    vals = _SNAP_BODY.unpack(payload)
    try:
        hand_enum = HandHeight(vals[14])
    except ValueError:
        raise BadType("hand_height", str(vals[14])) from None
    try:
        phase = ScenarioPhase(vals[15])
    except ValueError:
        raise BadType("scenario_phase", str(vals[15])) from None
    world = WorldSnapshot(
        clock=SimClock(tick=tick, tick_rate=tick_rate),
        vehicle=VehicleState(pose=Pose2(vals[0], vals[1], vals[2]),
                             speed=vals[3], steer_angle=vals[4]),
        cyclist=CyclistState(pose=Pose2(vals[5], vals[6], vals[7]),
                             speed=vals[8], lean=vals[9], steer_angle=vals[10],
                             pedal_power=vals[11], brake_force_front=vals[12],
                             brake_force_rear=vals[13], hand_height=hand_enum),
        phase=phase)
    return SnapshotMsg(client_id=client_id, snapshot=world)


def freshness_filter(last_accepted_tick: int | None, incoming_tick: int) -> bool:
    """Latest-wins: accept only strictly newer ticks, dropping stale/duplicate."""
    return last_accepted_tick is None or incoming_tick > last_accepted_tick


# ---------------------------------------------------------------------------
# Deterministic channel model

@dataclass(frozen=True)
class ChannelCondition:
    delay_ms: float = 0.0
    jitter_ms: float = 0.0
    drop_probability: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.delay_ms < 0 or self.jitter_ms < 0:
            raise ValueError("delay and jitter must be >= 0")
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ValueError("drop_probability must be in [0, 1]")

    @property
    def ideal(self) -> bool:
        return self.delay_ms == 0 and self.jitter_ms == 0 and self.drop_probability == 0


def channel_deliver(condition: ChannelCondition, send_time: float,
                    rng: np.random.Generator) -> float | None:
    """Delivery time for one send, or None when dropped.

    Always draws the drop and jitter variates (in that order) so the stream is
    reproducible regardless of the condition's parameters.
    """
    u_drop = rng.random()
    u_jitter = rng.random()
    if u_drop < condition.drop_probability:
        return None
    return send_time + (condition.delay_ms + u_jitter * condition.jitter_ms) / 1000.0


class SimulatedChannel:
    """Single-owner delayed-delivery queue over simulated or wall time.

    With zero jitter and drop the channel is FIFO at constant delay; ties in
    delivery time preserve send order.
    """

    def __init__(self, condition: ChannelCondition):
        self.condition = condition
        self.rng = np.random.default_rng(condition.seed)
        self._heap: list[tuple[float, int, object]] = []
        self._seq = 0

    def send(self, send_time: float, payload) -> None:
        t = channel_deliver(self.condition, send_time, self.rng)
        if t is not None:
            heapq.heappush(self._heap, (t, self._seq, payload))
        self._seq += 1

    def poll(self, now: float) -> list:
        """Pop everything deliverable by `now`, in delivery order."""
        out = []
        while self._heap and self._heap[0][0] <= now:
            out.append(heapq.heappop(self._heap)[2])
        return out

    def pending(self) -> int:
        return len(self._heap)


RIDER_FIELDS = ("steer", "lean", "brake_front", "brake_rear", "power", "hand")

TABLE1_PRESET_MS = {
    # published-bench pipeline delays usable as per-field channel presets
    "steer": 225.0,
    "lean": 243.0,
    "brake_front": 198.0,
    "brake_rear": 210.0,
    "power": 1492.0,
    "hand": 89.0,
}


def channel_preset(name: str, seed: int = 0) -> dict[str, ChannelCondition]:
    """Named per-field condition sets for the rider input channels."""
    if name == "ideal":
        return {f: ChannelCondition(seed=seed + i) for i, f in enumerate(RIDER_FIELDS)}
    if name == "table1":
        return {f: ChannelCondition(delay_ms=TABLE1_PRESET_MS[f], seed=seed + i)
                for i, f in enumerate(RIDER_FIELDS)}
    if name.startswith("table1-"):
        target = name.split("-", 1)[1]
        if target not in RIDER_FIELDS:
            raise ValueError(f"unknown channel {target!r}")
        out = {}
        for i, f in enumerate(RIDER_FIELDS):
            delay = TABLE1_PRESET_MS[f] if f == target else 0.0
            out[f] = ChannelCondition(delay_ms=delay, seed=seed + i)
        return out
    raise ValueError(f"unknown channel preset {name!r}")


class RiderFieldChannels:
    """Per-field delayed delivery of rider input values.

    Each rider channel (steer, lean, brakes, power, hand) rides its own
    SimulatedChannel, mirroring a bench where every sensor has its own
    pipeline latency. The effective input at any time is the latest-sent
    delivered value per field.
    """

    def __init__(self, conditions: dict[str, ChannelCondition]):
        self.channels = {f: SimulatedChannel(conditions.get(f, ChannelCondition()))
                         for f in RIDER_FIELDS}
        self._latest_sent: dict[str, float] = {f: -math.inf for f in RIDER_FIELDS}
        self._value: dict[str, object] = {
            "steer": 0.0, "lean": 0.0, "brake_front": 0.0, "brake_rear": 0.0,
            "power": 0.0, "hand": HandHeight.BETWEEN,
        }

    def send_input(self, send_time: float, inp: RiderInput) -> None:
        self.send_field(send_time, "steer", inp.steer_angle)
        self.send_field(send_time, "lean", inp.lean)
        self.send_field(send_time, "brake_front", inp.brake_front)
        self.send_field(send_time, "brake_rear", inp.brake_rear)
        self.send_field(send_time, "power", inp.pedal_power)
        self.send_field(send_time, "hand", inp.hand_height)

    def send_field(self, send_time: float, field_name: str, value) -> None:
        self.channels[field_name].send(send_time, (send_time, value))

    def effective_input(self, now: float) -> RiderInput:
        for name, chan in self.channels.items():
            for sent_at, value in chan.poll(now):
                if sent_at >= self._latest_sent[name]:
                    self._latest_sent[name] = sent_at
                    self._value[name] = value
        return RiderInput(
            pedal_power=self._value["power"],
            brake_front=self._value["brake_front"],
            brake_rear=self._value["brake_rear"],
            steer_angle=self._value["steer"],
            lean=self._value["lean"],
            hand_height=self._value["hand"],
        )
