"""Trial orchestration: wires scripts, policies, and the hub together for a
single closed-loop run in either lockstep or realtime (loopback) mode.
"""
from __future__ import annotations

import threading
from dataclasses import asdict

from .agents import CyclistAgentClient, VehicleAgentClient
from .config import config_hash
from .core import ScenarioPhase, SimClock, WorldSnapshot, VehicleState, CyclistState
from .cyclist import CyclistParams, RiderCommand, ScriptedRider, ScriptedRiderConfig
from .hub import HubConfig, RealtimeHub, TrajectoryLog, run_lockstep
from .protocol import ChannelCondition, RiderFieldChannels, channel_preset
from .scenario import ManeuverScript, script_to_dict
from .vehicle import PerceptionConfig, TffConfig, TrackAndFollow, VehicleParams


def initial_world(script: ManeuverScript, tick_rate: float = 90.0) -> WorldSnapshot:
    return WorldSnapshot(
        clock=SimClock(0, tick_rate),
        vehicle=VehicleState(pose=script.start_pose_vehicle),
        cyclist=CyclistState(pose=script.start_pose_cyclist),
        phase=ScenarioPhase.PRE_START)


class DelayedRiderPolicy:
    """Wraps a rider policy so each input field rides its own delay channel."""

    def __init__(self, base, conditions: dict[str, ChannelCondition]):
        self.base = base
        self.channels = RiderFieldChannels(conditions)

    def __call__(self, world: WorldSnapshot) -> RiderCommand:
        cmd = self.base(world)
        now = world.clock.elapsed
        self.channels.send_input(now, cmd.input)
        return RiderCommand(input=self.channels.effective_input(now), done=cmd.done)


class TraceRiderPolicy:
    """Replays a recorded rider-input trace (tick -> input), holding the last
    frame between records. Never signals completion."""

    def __init__(self, frames):
        # frames: iterable of (tick, RiderInput), sorted by tick
        self.frames = sorted(frames, key=lambda f: f[0])
        self.index = 0
        self.current = None

    def __call__(self, world: WorldSnapshot) -> RiderCommand | None:
        tick = world.clock.tick
        while self.index < len(self.frames) and self.frames[self.index][0] <= tick:
            self.current = self.frames[self.index][1]
            self.index += 1
        if self.current is None:
            return None
        return RiderCommand(input=self.current, done=False)


def trial_config_hash(script: ManeuverScript, tff: TffConfig,
                      perception: PerceptionConfig, vparams: VehicleParams,
                      cparams: CyclistParams, hub: HubConfig) -> str:
    return config_hash({
        "script": script_to_dict(script),
        "tff": asdict(tff),
        "perception": asdict(perception),
        "vehicle": asdict(vparams),
        "cyclist": asdict(cparams),
        "hub": asdict(hub),
    })


def run_scripted_trial(script: ManeuverScript, seed: int = 0,
                       mode: str = "lockstep", channel_preset_name: str = "ideal",
                       channel_preset: str | None = None,
                       timeout_s: float = 600.0,
                       tff_config: TffConfig | None = None,
                       perception: PerceptionConfig | None = None,
                       vehicle_params: VehicleParams | None = None,
                       cyclist_params: CyclistParams | None = None,
                       rider_config: ScriptedRiderConfig | None = None,
                       hub_config: HubConfig | None = None,
                       collect_traces: bool = False):
    """One scripted trial; returns a TrajectoryLog (plus traces if asked).

    The trial ends when the scenario phase reaches Ended (final stop gesture
    accepted and both entities at standstill) or at the simulated timeout,
    which is then flagged in the metadata.
    """
    preset = channel_preset if channel_preset is not None else channel_preset_name
    vparams = vehicle_params or VehicleParams()
    cparams = cyclist_params or CyclistParams()
    tff = tff_config or TffConfig()
    percep = perception or PerceptionConfig(seed=seed)
    if percep.seed != seed:
        from dataclasses import replace as _replace
        percep = _replace(percep, seed=seed)
    hub_cfg = hub_config or HubConfig(mode=mode, seed=seed)
    n_ticks = int(round(timeout_s * hub_cfg.tick_rate))

    controller = TrackAndFollow(params=vparams, tff=tff, perception=percep)
    rider = ScriptedRider(script, params=cparams, config=rider_config)
    rider_policy = rider
    if preset != "ideal":
        rider_policy = DelayedRiderPolicy(rider, channel_preset(preset, seed=seed))

    meta = {
        "script": script.name,
        "seed": seed,
        "mode": mode,
        "channel_preset": preset,
        "config_hash": trial_config_hash(script, tff, percep, vparams, cparams, hub_cfg),
    }

    world0 = initial_world(script, hub_cfg.tick_rate)
    if mode == "lockstep":
        traj = run_lockstep(hub_cfg, controller, rider_policy, n_ticks,
                            initial_world=world0, metadata=meta,
                            vparams=vparams, cparams=cparams, stop_on_end=True)
    elif mode == "realtime":
        traj = _run_realtime_trial(hub_cfg, world0, vparams, cparams,
                                   controller, rider_policy, n_ticks, meta)
    else:
        raise ValueError(f"unknown mode {mode!r}")

    traj.metadata["timeout"] = traj.samples[-1].phase is not ScenarioPhase.ENDED
    if collect_traces:
        return traj, controller.trace, rider.trace
    return traj


def _run_realtime_trial(hub_cfg: HubConfig, world0, vparams, cparams,
                        controller, rider_policy, n_ticks, meta) -> TrajectoryLog:
    """Loopback realtime run with the agents as in-process UDP clients."""
    from dataclasses import replace as _replace

    cfg = _replace(hub_cfg, mode="realtime", port=0)
    hub = RealtimeHub(cfg, initial_world=world0, vparams=vparams,
                      cparams=cparams, metadata=meta)
    addr = ("127.0.0.1", hub.bound_port)
    vehicle_client = VehicleAgentClient(addr, controller, client_id=1)
    cyclist_client = CyclistAgentClient(addr, rider_policy, client_id=2)
    threads = [threading.Thread(target=vehicle_client.run, daemon=True),
               threading.Thread(target=cyclist_client.run, daemon=True)]
    for t in threads:
        t.start()
    try:
        traj = hub.run(n_ticks)
    finally:
        vehicle_client.request_stop()
        cyclist_client.request_stop()
        for t in threads:
            t.join(timeout=2.0)
    return traj
