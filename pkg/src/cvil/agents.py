"""UDP client loops for the vehicle and cyclist agents.

Each client says Hello, consumes freshness-filtered snapshot broadcasts, runs
its policy, and replies with stamped input datagrams. Clients exit on Bye
from the hub, on request, or after an idle timeout.
"""
from __future__ import annotations

import json
import logging
import socket
import threading
import time

from .cyclist import RiderCommand
from .protocol import (Bye, Hello, RiderInputMsg, SnapshotMsg,
                       VehicleInputMsg, decode, encode, freshness_filter,
                       DecodeError, MAX_DATAGRAM, ROLE_CYCLIST, ROLE_VEHICLE)

log = logging.getLogger(__name__)

HELLO_RETRY_S = 0.5
IDLE_TIMEOUT_S = 5.0


class _AgentClient:
    role = ROLE_VEHICLE

    def __init__(self, hub_addr: tuple[str, int], client_id: int,
                 tick_rate: float = 90.0):
        self.hub_addr = hub_addr
        self.client_id = client_id
        self.tick_rate = tick_rate
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.bind(("127.0.0.1", 0))
        self.sock.settimeout(0.2)
        self._stop = threading.Event()
        self.last_snapshot_tick: int | None = None

    def request_stop(self) -> None:
        self._stop.set()

    def _respond(self, world) -> None:
        raise NotImplementedError

    def run(self) -> None:
        last_hello = 0.0
        last_traffic = time.monotonic()
        try:
            while not self._stop.is_set():
                now = time.monotonic()
                if self.last_snapshot_tick is None and now - last_hello > HELLO_RETRY_S:
                    self.sock.sendto(encode(Hello(self.client_id, self.role)),
                                     self.hub_addr)
                    last_hello = now
                try:
                    data, _ = self.sock.recvfrom(MAX_DATAGRAM)
                except socket.timeout:
                    if (self.last_snapshot_tick is not None
                            and now - last_traffic > IDLE_TIMEOUT_S):
                        log.warning("agent %d idle timeout", self.client_id)
                        break
                    continue
                except OSError:
                    break
                last_traffic = time.monotonic()
                try:
                    msg = decode(data, tick_rate=self.tick_rate)
                except DecodeError:
                    continue
                if isinstance(msg, Bye):
                    break
                if isinstance(msg, SnapshotMsg):
                    if not freshness_filter(self.last_snapshot_tick, msg.tick):
                        continue
                    self.last_snapshot_tick = msg.tick
                    self._respond(msg.snapshot)
        finally:
            try:
                self.sock.sendto(encode(Bye(self.client_id)), self.hub_addr)
            except OSError:
                pass
            self.sock.close()
            self._finish()

    def _finish(self) -> None:
        pass


class VehicleAgentClient(_AgentClient):
    role = ROLE_VEHICLE

    def __init__(self, hub_addr, controller, client_id: int = 1,
                 tick_rate: float = 90.0, trace_path: str | None = None):
        super().__init__(hub_addr, client_id, tick_rate)
        self.controller = controller
        self.trace_path = trace_path

    def _respond(self, world) -> None:
        cmd = self.controller(world)
        msg = VehicleInputMsg(self.client_id, world.clock.tick,
                              cmd.accel_cmd, cmd.steer_cmd)
        self.sock.sendto(encode(msg), self.hub_addr)

    def _finish(self) -> None:
        if self.trace_path and getattr(self.controller, "trace", None):
            with open(self.trace_path, "w") as f:
                for row in self.controller.trace:
                    f.write(json.dumps(row) + "\n")


class CyclistAgentClient(_AgentClient):
    role = ROLE_CYCLIST

    def __init__(self, hub_addr, rider_policy, client_id: int = 2,
                 tick_rate: float = 90.0):
        super().__init__(hub_addr, client_id, tick_rate)
        self.rider_policy = rider_policy

    def _respond(self, world) -> None:
        cmd = self.rider_policy(world)
        if cmd is None:
            return
        msg = RiderInputMsg(self.client_id, world.clock.tick,
                            input=cmd.input, done=cmd.done)
        self.sock.sendto(encode(msg), self.hub_addr)


class ExternalRiderSource:
    """Rider policy fed by RiderInputMsg datagrams on a local port.

    Used by `cyclist-agent --external`: whatever gateway relays rider frames
    sends them here; the latest frame is forwarded to the hub at snapshot
    rate under the hold-last-value contract.
    """

    def __init__(self, listen_port: int = 0):
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.bind(("127.0.0.1", listen_port))
        self.bound_port = self.sock.getsockname()[1]
        self.sock.settimeout(0.1)
        self._latest: RiderCommand | None = None
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._recv_loop, daemon=True)
        self._thread.start()

    def close(self) -> None:
        self._stop.set()
        self._thread.join(timeout=1.0)
        self.sock.close()

    def _recv_loop(self) -> None:
        last_seq: int | None = None
        while not self._stop.is_set():
            try:
                data, _ = self.sock.recvfrom(MAX_DATAGRAM)
            except socket.timeout:
                continue
            except OSError:
                break
            try:
                msg = decode(data)
            except DecodeError:
                continue
            if not isinstance(msg, RiderInputMsg):
                continue
            if not freshness_filter(last_seq, msg.tick):
                continue
            last_seq = msg.tick
            with self._lock:
                self._latest = RiderCommand(input=msg.input, done=msg.done)

    def __call__(self, world) -> RiderCommand | None:
        with self._lock:
            return self._latest
