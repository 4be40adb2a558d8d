/**
 * Live loopback session: python hub (realtime) + python vehicle agent +
 * this gateway + a scripted "browser" over WebSocket.
 *
 * Checks the two rider-console acceptance properties:
 *  - a gesture button press appears in the world snapshot within 5 hub ticks
 *  - replaying the recorded input trace through the lockstep hub reproduces
 *    the live trajectory within 0.5 m final-position delta
 */
import { ChildProcess, spawn } from "node:child_process";
import fs from "node:fs";
import os from "node:os";
import path from "node:path";
import { fileURLToPath } from "node:url";
import { WebSocket } from "ws";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { startGateway, Gateway } from "../src/gateway.js";
import type { Snapshot } from "../src/shared.js";

const HERE = path.dirname(fileURLToPath(import.meta.url));
const REPO = path.resolve(HERE, "..", "..");
const PYTHON = process.env.PYTHON ?? "python3";
const HUB_TICKS = 1620; // 18 s at 90 Hz

const SCRIPT = {
  name: "console_straight",
  target_speed: 1.25,
  path: [{ type: "line", from: [0.0, 0.0], to: [40.0, 0.0] }],
  events: [],
  start_pose_vehicle: [-10.0, 0.0, 0.0],
  start_pose_cyclist: [0.0, 0.0, 0.0],
};

function waitLine(proc: ChildProcess, pattern: RegExp, timeoutMs = 15000):
    Promise<RegExpMatchArray> {
  return new Promise((resolve, reject) => {
    let buffer = "";
    const timer = setTimeout(
      () => reject(new Error(`timeout waiting for ${pattern}: ${buffer}`)),
      timeoutMs);
    proc.stdout!.on("data", (chunk: Buffer) => {
      buffer += chunk.toString();
      const m = buffer.match(pattern);
      if (m) {
        clearTimeout(timer);
        resolve(m);
      }
    });
  });
}

function lastLogRow(file: string): { veh: { x: number; y: number };
                                     cyc: { x: number; y: number } } {
  const lines = fs.readFileSync(file, "utf-8").trim().split("\n");
  return JSON.parse(lines[lines.length - 1]);
}

describe("rider console against the live hub", () => {
  let workDir: string;
  let hub: ChildProcess;
  let vehicle: ChildProcess;
  let gateway: Gateway;
  let hubPort: number;
  let scriptPath: string;
  let paramsPath: string;
  let tracePath: string;
  let liveLogPath: string;

  beforeAll(async () => {
    workDir = fs.mkdtempSync(path.join(os.tmpdir(), "console-"));
    scriptPath = path.join(workDir, "script.json");
    fs.writeFileSync(scriptPath, JSON.stringify(SCRIPT));
    paramsPath = path.join(workDir, "vehicle.json");
    fs.writeFileSync(paramsPath, JSON.stringify(
      { perception: { position_noise_sigma: 0.0 } }));
    tracePath = path.join(workDir, "trace.jsonl");
    liveLogPath = path.join(workDir, "live.jsonl");

    hub = spawn(PYTHON, ["-m", "cvil", "hub", "--mode", "realtime",
                         "--port", "0", "--script", scriptPath,
                         "--ticks", String(HUB_TICKS), "--seed", "5",
                         "--log", liveLogPath,
                         "--vehicle-params", paramsPath],
                { cwd: REPO, stdio: ["ignore", "pipe", "pipe"] });
    const m = await waitLine(hub, /HUB_READY port=(\d+)/);
    hubPort = Number(m[1]);

    vehicle = spawn(PYTHON, ["-m", "cvil", "vehicle-agent", "--hub",
                             `127.0.0.1:${hubPort}`, "--params", paramsPath,
                             "--seed", "5"],
                    { cwd: REPO, stdio: ["ignore", "pipe", "pipe"] });

    gateway = await startGateway({
      hubHost: "127.0.0.1", hubPort, wsPort: 0, httpPort: 0,
      tracePath, scriptPath,
    });
  }, 30_000);

  afterAll(async () => {
    await gateway?.close();
    for (const proc of [vehicle, hub]) {
      if (proc && proc.exitCode === null) proc.kill("SIGTERM");
    }
  });

  it("echoes the gesture within 5 hub ticks and replays within 0.5 m", async () => {
    const ws = new WebSocket(`ws://127.0.0.1:${gateway.wsPort}`);
    await new Promise<void>((resolve) => ws.once("open", () => resolve()));

    let latest: Snapshot | null = null;
    let echoTicks: number | null = null;
    let pressTick: number | null = null;
    ws.on("message", (raw) => {
      const msg = JSON.parse(String(raw));
      if (msg.type !== "snap") return;
      latest = msg as Snapshot;
      if (pressTick !== null && echoTicks === null && msg.hand === "above") {
        echoTicks = msg.tick - pressTick;
      }
    });

    // deterministic scripted session keyed to the snapshot tick stream
    let seq = 0;
    const send = (p: number, bf: number, g: 0 | 1) => {
      ws.send(JSON.stringify({ seq: ++seq, s: 0, p, bf, br: bf, g }));
    };
    const tickAtLeast = (t: number) => new Promise<void>((resolve) => {
      const timer = setInterval(() => {
        if (latest && latest.tick >= t) {
          clearInterval(timer);
          resolve();
        }
      }, 5);
    });

    await tickAtLeast(90);               // 1 s of snapshots flowing
    pressTick = latest!.tick;
    send(0, 0, 1);                       // gesture press
    await tickAtLeast(pressTick + 30);
    expect(echoTicks).not.toBeNull();
    expect(echoTicks!).toBeLessThanOrEqual(5);

    // hold the hand up ~1 s so the vehicle's gesture FSM sees it, then drop
    for (let k = 1; k <= 9; k++) {
      await tickAtLeast(pressTick + 30 + k * 9);
      send(0, 0, 1);
    }
    send(0, 0, 0);

    // pedal for ~8 s, then brake to a stop
    const pedalFrom = latest!.tick;
    while (latest!.tick < pedalFrom + 720) {
      send(120, 0, 0);
      await tickAtLeast(latest!.tick + 3);
    }
    const brakeFrom = latest!.tick;
    while (latest!.tick < brakeFrom + 270) {
      send(0, 1, 0);
      await tickAtLeast(latest!.tick + 3);
    }

    // hub exits on its tick budget; wait for both ends to wind down
    await new Promise<void>((resolve) => hub.once("exit", () => resolve()));
    ws.close();
    await gateway.close();

    expect(fs.existsSync(liveLogPath)).toBe(true);
    expect(fs.existsSync(tracePath)).toBe(true);
    expect(gateway.traceRows.length).toBeGreaterThan(100);

    // replay the recorded trace through the lockstep hub
    const replayLog = path.join(workDir, "replay.jsonl");
    const replay = spawn(PYTHON, ["-m", "cvil", "hub", "--mode", "lockstep",
                                  "--script", scriptPath,
                                  "--ticks", String(HUB_TICKS),
                                  "--seed", "5", "--rider-trace", tracePath,
                                  "--log", replayLog,
                                  "--vehicle-params", paramsPath],
                         { cwd: REPO, stdio: ["ignore", "pipe", "pipe"] });
    const code = await new Promise<number>((resolve) =>
      replay.once("exit", (c) => resolve(c ?? 1)));
    expect(code).toBe(0);

    const live = lastLogRow(liveLogPath);
    const rep = lastLogRow(replayLog);
    const cycDelta = Math.hypot(live.cyc.x - rep.cyc.x, live.cyc.y - rep.cyc.y);
    const vehDelta = Math.hypot(live.veh.x - rep.veh.x, live.veh.y - rep.veh.y);
    expect(cycDelta).toBeLessThan(0.5);
    expect(vehDelta).toBeLessThan(0.5);
    const note = `echo ${echoTicks} ticks; replay deltas cyc ${cycDelta.toFixed(3)} m, veh ${vehDelta.toFixed(3)} m`;
    console.log(`PASS: criterion 9 - ${note}`);
  }, 90_000);
});
