"""Command-line entry points.

Six commands are installed: hub, vehicle-agent, cyclist-agent, scenario-run,
estimate, analyze. `python -m cvil <command> ...` reaches the same mains
without relying on PATH.
"""
from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .agents import CyclistAgentClient, ExternalRiderSource, VehicleAgentClient
from .analysis import (LATENCY_CHANNELS, NoResponse, channel_preset_delay_ms,
                       compare_trajectories, format_latency_table,
                       latency_experiment, latency_stats_to_csv,
                       radius_speed_sweep, trajectory_metrics)
from .config import build_dataclass, load_config
from .core import HandHeight
from .cyclist import CyclistParams, RiderInput, ScriptedRider
from .estimation import (SensorChannelConfig, SensorSuiteConfig,
                         covariance_upper_triangle, initial_estimate,
                         reconstruct_trajectory, simulate_sensors)
from .hub import HubConfig, RealtimeHub, TrajectoryLog, run_lockstep
from .protocol import ChannelCondition
from .runner import TraceRiderPolicy, initial_world, run_scripted_trial
from .scenario import TrialPlan, load_script, run_trials
from .vehicle import (PerceptionConfig, TffConfig, TrackAndFollow,
                      VehicleParams, stop_override_after)

log = logging.getLogger(__name__)


def _setup_logging(verbose: bool = False) -> None:
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def _load_vehicle_configs(params_path, tff_path, seed):
    data = load_config(params_path) if params_path else {}
    vparams = build_dataclass(VehicleParams, data.get("vehicle", data))
    percep_cfg = dict(data.get("perception", {}))
    if "detection_latency" in percep_cfg:
        percep_cfg["detection_latency"] = build_dataclass(
            ChannelCondition, percep_cfg["detection_latency"])
    perception = build_dataclass(PerceptionConfig, percep_cfg, seed=seed)
    tff = build_dataclass(TffConfig, load_config(tff_path) if tff_path else {})
    return vparams, perception, tff


def _load_cyclist_params(path) -> CyclistParams:
    return build_dataclass(CyclistParams, load_config(path) if path else {})


def _parse_addr(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    return host or "127.0.0.1", int(port)


def _read_rider_trace(path) -> list[tuple[int, RiderInput]]:
    frames = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            frames.append((row["tick"], RiderInput(
                pedal_power=row.get("p", 0.0),
                brake_front=row.get("bf", 0.0),
                brake_rear=row.get("br", 0.0),
                steer_angle=row.get("steer", 0.0),
                lean=row.get("lean", 0.0),
                hand_height=HandHeight.from_label(row.get("hand", "between")))))
    return frames


# ---------------------------------------------------------------------------
# hub

def hub_main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="hub", description="authoritative world hub")
    p.add_argument("--config", help="hub config JSON")
    p.add_argument("--mode", choices=["realtime", "lockstep"], default=None)
    p.add_argument("--ticks", type=int, default=9000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--script", help="scenario file setting initial poses")
    p.add_argument("--log", help="ground-truth log path (JSON Lines)")
    p.add_argument("--rider-trace", help="lockstep: replay this rider input trace")
    p.add_argument("--vehicle-params", help="vehicle/perception config JSON")
    p.add_argument("--tff", help="track-and-follow config JSON")
    p.add_argument("--cyclist-params", help="cyclist params JSON")
    p.add_argument("--verbose", action="store_true")
    args = p.parse_args(argv)
    _setup_logging(args.verbose)

    cfg_data = load_config(args.config) if args.config else {}
    hub_cfg = build_dataclass(HubConfig, cfg_data, seed=args.seed)
    if args.mode:
        hub_cfg = replace(hub_cfg, mode=args.mode)
    if args.port is not None:
        hub_cfg = replace(hub_cfg, port=args.port)
    if args.log:
        hub_cfg = replace(hub_cfg, log_path=args.log)

    script = load_script(args.script) if args.script else None
    world0 = initial_world(script, hub_cfg.tick_rate) if script else None
    vparams, perception, tff = _load_vehicle_configs(
        args.vehicle_params, args.tff, args.seed)
    cparams = _load_cyclist_params(args.cyclist_params)
    meta = {"script": script.name if script else None, "seed": args.seed}

    if hub_cfg.mode == "lockstep":
        controller = TrackAndFollow(params=vparams, tff=tff, perception=perception)
        if args.rider_trace:
            rider = TraceRiderPolicy(_read_rider_trace(args.rider_trace))
        elif script is not None:
            rider = ScriptedRider(script, params=cparams)
        else:
            rider = None
        traj = run_lockstep(hub_cfg, controller, rider, args.ticks,
                            initial_world=world0, metadata=meta,
                            vparams=vparams, cparams=cparams,
                            stop_on_end=args.rider_trace is None)
        if hub_cfg.log_path:
            traj.write_jsonl(hub_cfg.log_path)
        print(json.dumps({"mode": "lockstep", "ticks": traj.samples[-1].clock.tick,
                          "phase": traj.samples[-1].phase.label}))
        return 0

    hub = RealtimeHub(hub_cfg, initial_world=world0, vparams=vparams,
                      cparams=cparams, metadata=meta)
    signal.signal(signal.SIGTERM, lambda *_: hub.request_stop())
    signal.signal(signal.SIGINT, lambda *_: hub.request_stop())
    print(f"HUB_READY port={hub.bound_port}", flush=True)
    traj = hub.run(args.ticks)
    if hub_cfg.log_path:
        traj.write_jsonl(hub_cfg.log_path)
    if hub.report.get("miss_rate_exceeded"):
        log.warning("tick deadline miss rate %.3f exceeded threshold %.3f",
                    hub.report["miss_rate"], hub_cfg.deadline_miss_threshold)
    print(json.dumps(hub.report))
    return 0


# ---------------------------------------------------------------------------
# agents

def vehicle_agent_main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="vehicle-agent",
                                description="track-and-follow vehicle client")
    p.add_argument("--hub", required=True, help="host:port of the hub")
    p.add_argument("--params", help="vehicle/perception config JSON")
    p.add_argument("--tff", help="track-and-follow config JSON")
    p.add_argument("--override-stop-at", type=float, default=None,
                   help="simulated time after which a full-stop override applies")
    p.add_argument("--trace", help="controller trace output (JSON Lines)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--client-id", type=int, default=1)
    p.add_argument("--verbose", action="store_true")
    args = p.parse_args(argv)
    _setup_logging(args.verbose)

    vparams, perception, tff = _load_vehicle_configs(args.params, args.tff, args.seed)
    override_fn = (stop_override_after(args.override_stop_at, vparams)
                   if args.override_stop_at is not None else None)
    controller = TrackAndFollow(params=vparams, tff=tff, perception=perception,
                                override_fn=override_fn)
    client = VehicleAgentClient(_parse_addr(args.hub), controller,
                                client_id=args.client_id, trace_path=args.trace)
    signal.signal(signal.SIGTERM, lambda *_: client.request_stop())
    client.run()
    return 0


def cyclist_agent_main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="cyclist-agent",
                                description="scripted or externally driven cyclist client")
    p.add_argument("--hub", required=True, help="host:port of the hub")
    p.add_argument("--params", help="cyclist params JSON")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--script", help="maneuver script to ride")
    group.add_argument("--external", action="store_true",
                       help="accept relayed rider-input datagrams instead")
    p.add_argument("--listen-port", type=int, default=0,
                   help="local port for --external rider datagrams")
    p.add_argument("--client-id", type=int, default=2)
    p.add_argument("--verbose", action="store_true")
    args = p.parse_args(argv)
    _setup_logging(args.verbose)

    cparams = _load_cyclist_params(args.params)
    source = None
    if args.external:
        source = ExternalRiderSource(args.listen_port)
        print(f"RIDER_LISTEN port={source.bound_port}", flush=True)
        policy = source
    else:
        policy = ScriptedRider(load_script(args.script), params=cparams)
    client = CyclistAgentClient(_parse_addr(args.hub), policy,
                                client_id=args.client_id)
    signal.signal(signal.SIGTERM, lambda *_: client.request_stop())
    try:
        client.run()
    finally:
        if source is not None:
            source.close()
    return 0


# ---------------------------------------------------------------------------
# scenario-run

def scenario_run_main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="scenario-run",
                                description="run repeated scripted trials")
    p.add_argument("--script", required=True)
    p.add_argument("--mode", choices=["lockstep", "realtime"], default="lockstep")
    p.add_argument("--reps", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--channel-preset", default="ideal",
                   help="ideal, table1, or table1-<channel>")
    p.add_argument("--tff", help="track-and-follow config JSON")
    p.add_argument("--vehicle-params", help="vehicle/perception config JSON")
    p.add_argument("--verbose", action="store_true")
    args = p.parse_args(argv)
    _setup_logging(args.verbose)

    script = load_script(args.script)
    vparams, perception, tff = _load_vehicle_configs(
        args.vehicle_params, args.tff, args.seed)
    plan = TrialPlan(script=script, repetitions=args.reps, mode=args.mode,
                     channel_preset=args.channel_preset, seed=args.seed)
    logs = run_trials(plan, out_dir=args.out, tff_config=tff,
                      perception=perception, vehicle_params=vparams)
    for i, traj in enumerate(logs):
        last = traj.samples[-1]
        print(json.dumps({"rep": i, "ticks": last.clock.tick,
                          "phase": last.phase.label,
                          "timeout": traj.metadata.get("timeout", False)}))
    return 0


# ---------------------------------------------------------------------------
# estimate

def _sensor_suite_from_config(data: dict, seed: int) -> SensorSuiteConfig:
    def chan(name, default):
        d = data.get(name, {})
        return SensorChannelConfig(rate=d.get("rate", default.rate),
                                   sigma=d.get("sigma", default.sigma))
    base = SensorSuiteConfig(seed=seed)
    return SensorSuiteConfig(
        gnss=chan("gnss", base.gnss), imu=chan("imu", base.imu),
        wheel=chan("wheel", base.wheel), steer_meas=chan("steer_meas", base.steer_meas),
        seed=seed)


def estimate_main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="estimate",
                                description="EKF trajectory reconstruction from a ground-truth log")
    p.add_argument("--log", required=True, help="trajectory JSONL")
    p.add_argument("--sensors", help="sensor suite config JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="estimates JSONL")
    p.add_argument("--wheelbase", type=float, default=2.8)
    args = p.parse_args(argv)
    _setup_logging()

    traj = TrajectoryLog.read_jsonl(args.log)
    cfg = _sensor_suite_from_config(
        load_config(args.sensors) if args.sensors else {}, args.seed)
    sensors = simulate_sensors(traj, cfg, wheelbase=args.wheelbase)
    init = initial_estimate(sensors)
    estimates = reconstruct_trajectory(sensors, init, wheelbase=args.wheelbase,
                                       tick_rate=traj.tick_rate)
    with open(args.out, "w") as f:
        for est in estimates:
            f.write(json.dumps({
                "tick": est.tick,
                "mean": [float(v) for v in est.mean],
                "cov_ut": covariance_upper_triangle(est.cov),
            }) + "\n")
    print(json.dumps({"estimates": len(estimates), "out": args.out}))
    return 0


# ---------------------------------------------------------------------------
# analyze

def _analyze_latency(args) -> int:
    channels = list(LATENCY_CHANNELS) if args.channel == "all" else [args.channel]
    stats_list = []
    for channel in channels:
        if args.delay_ms is not None:
            delay = args.delay_ms
        elif args.preset == "table1":
            delay = channel_preset_delay_ms(channel)
        else:
            delay = 0.0
        cond = ChannelCondition(delay_ms=delay, jitter_ms=args.jitter_ms,
                                drop_probability=0.0, seed=args.seed)
        try:
            stats = latency_experiment(channel, cond, n_trials=args.trials,
                                       seed=args.seed)
        except NoResponse as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        stats_list.append(stats)
    table = format_latency_table(stats_list)
    print(table, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "latency_table.txt").write_text(table)
        (out / "latency_stats.csv").write_text(latency_stats_to_csv(stats_list))
        from .plots import save_latency_figure
        save_latency_figure(out / "latency.png", stats_list)
        print(f"report written to {out}")
    return 0


def _analyze_compare(args) -> int:
    script = load_script(args.script)
    run_a = TrajectoryLog.read_jsonl(args.a)
    run_b = TrajectoryLog.read_jsonl(args.b)
    ma, mb, deltas = compare_trajectories(run_a, run_b, script, d_set=args.d_set)

    def as_dict(m):
        return {k: v for k, v in m.__dict__.items()}

    report = {"run_a": as_dict(ma), "run_b": as_dict(mb), "deltas": deltas}
    text = json.dumps(report, indent=2)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(text + "\n")
        lines = ["metric,run_a,run_b,delta"]
        for key in ("cross_track_rmse", "cross_track_max", "speed_mae",
                    "path_length", "fitted_radius", "settle_time"):
            a, b = getattr(ma, key), getattr(mb, key)
            lines.append(f"{key},{a},{b},{deltas[key]}")
        lines.append(f"speed_mae_between,,,{deltas['speed_mae_between']}")
        (out / "metrics.csv").write_text("\n".join(lines) + "\n")
        for name, log_ in (("a", run_a), ("b", run_b)):
            rows = ["t,veh_x,veh_y,veh_v,cyc_x,cyc_y,cyc_v"]
            for w in log_.samples:
                rows.append(f"{w.clock.elapsed!r},{w.vehicle.pose.x!r},"
                            f"{w.vehicle.pose.y!r},{w.vehicle.speed!r},"
                            f"{w.cyclist.pose.x!r},{w.cyclist.pose.y!r},"
                            f"{w.cyclist.speed!r}")
            (out / f"trajectory_{name}.csv").write_text("\n".join(rows) + "\n")
        from .plots import save_speed_figure, save_trajectory_figure
        save_trajectory_figure(out / "trajectories.png",
                               [("run a", run_a), ("run b", run_b)], script)
        save_speed_figure(out / "speeds.png", [("run a", run_a), ("run b", run_b)],
                          target_speed=script.target_speed)
        print(f"report written to {out}")
    return 0


def _analyze_radius_sweep(args) -> int:
    points = radius_speed_sweep(seed=args.seed)
    lines = ["speed_ms,speed_kmh,vehicle_radius,cyclist_radius"]
    for pt in points:
        lines.append(f"{pt.speed!r},{pt.speed * 3.6!r},{pt.vehicle_radius!r},"
                     f"{pt.cyclist_radius!r}")
    csv_text = "\n".join(lines) + "\n"
    print(csv_text, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "radius_sweep.csv").write_text(csv_text)
        from .plots import save_sweep_figure
        save_sweep_figure(out / "radius_sweep.png", points)
        print(f"report written to {out}")
    return 0


def analyze_main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="analyze", description="evaluation reports")
    sub = p.add_subparsers(dest="command", required=True)

    lat = sub.add_parser("latency", help="latency-lab experiment")
    lat.add_argument("--channel", default="steer",
                     choices=list(LATENCY_CHANNELS) + ["all"])
    lat.add_argument("--preset", default="table1", choices=["table1", "ideal"])
    lat.add_argument("--delay-ms", type=float, default=None)
    lat.add_argument("--jitter-ms", type=float, default=0.0)
    lat.add_argument("--trials", type=int, default=10)
    lat.add_argument("--seed", type=int, default=0)
    lat.add_argument("--out")

    cmp_ = sub.add_parser("compare", help="compare two trajectory logs")
    cmp_.add_argument("--a", required=True)
    cmp_.add_argument("--b", required=True)
    cmp_.add_argument("--script", required=True)
    cmp_.add_argument("--d-set", type=float, default=5.0)
    cmp_.add_argument("--out")

    sweep = sub.add_parser("radius-sweep",
                           help="fitted circle radius across cyclist speeds")
    sweep.add_argument("--seed", type=int, default=0)
    sweep.add_argument("--out")

    args = p.parse_args(argv)
    _setup_logging()
    if args.command == "latency":
        return _analyze_latency(args)
    if args.command == "compare":
        return _analyze_compare(args)
    return _analyze_radius_sweep(args)


COMMANDS = {
    "hub": hub_main,
    "vehicle-agent": vehicle_agent_main,
    "cyclist-agent": cyclist_agent_main,
    "scenario-run": scenario_run_main,
    "estimate": estimate_main,
    "analyze": analyze_main,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] in ("-h", "--help"):
        print("usage: cvil <command> ...\ncommands: " + ", ".join(COMMANDS))
        return 0 if argv else 2
    cmd = argv[0]
    if cmd not in COMMANDS:
        print(f"unknown command {cmd!r}; choose from {', '.join(COMMANDS)}",
              file=sys.stderr)
        return 2
    return COMMANDS[cmd](argv[1:])
