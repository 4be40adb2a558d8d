/**
 * Rider-console gateway: a thin process colocated with the hub that bridges
 * browser WebSocket frames to hub datagrams and snapshot broadcasts back.
 * Also serves the static console page and records the session input trace
 * (replayable through the lockstep hub).
 *
 * Run: node dist/src/gateway.js --hub 127.0.0.1:47900 [--ws-port 47901]
 *      [--http-port 47902] [--script scenario.json] [--trace trace.jsonl]
 */
import dgram from "node:dgram";
import fs from "node:fs";
import http from "node:http";
import path from "node:path";
import { fileURLToPath } from "node:url";
import { WebSocket, WebSocketServer } from "ws";

import {
  ConsoleFrame,
  FreshnessFilter,
  GestureTracker,
  ROLE_GATEWAY,
  TraceRow,
  decodeDatagram,
  encodeBye,
  encodeHello,
  encodeRiderInput,
  frameToRiderInput,
  traceToJsonl,
} from "./shared.js";

const HERE = path.dirname(fileURLToPath(import.meta.url));

export interface GatewayOptions {
  hubHost: string;
  hubPort: number;
  wsPort?: number;
  httpPort?: number;
  clientId?: number;
  tracePath?: string;
  scriptPath?: string;
  staticDir?: string;
}

export interface Gateway {
  wsPort: number;
  httpPort: number;
  traceRows: TraceRow[];
  latestTick: () => number;
  close: () => Promise<void>;
}

interface Segment {
  type: string;
  from?: [number, number];
  to?: [number, number];
  center?: [number, number];
  radius?: number;
  start_angle?: number;
  sweep?: number;
}

/** Sample a scenario file's path into a plot-ready polyline. */
export function samplePathFromScript(scriptJson: { path: Segment[] },
                                     step = 0.5): [number, number][] {
  const pts: [number, number][] = [];
  for (const seg of scriptJson.path) {
    if (seg.type === "line" && seg.from && seg.to) {
      const [x0, y0] = seg.from;
      const [x1, y1] = seg.to;
      const len = Math.hypot(x1 - x0, y1 - y0);
      const n = Math.max(1, Math.ceil(len / step));
      for (let i = 0; i <= n; i++) {
        pts.push([x0 + ((x1 - x0) * i) / n, y0 + ((y1 - y0) * i) / n]);
      }
    } else if (seg.type === "arc" && seg.center && seg.radius !== undefined
               && seg.start_angle !== undefined && seg.sweep !== undefined) {
      const len = Math.abs(seg.sweep) * seg.radius;
      const n = Math.max(2, Math.ceil(len / step));
      for (let i = 0; i <= n; i++) {
        const a = seg.start_angle + (seg.sweep * i) / n;
        pts.push([seg.center[0] + seg.radius * Math.cos(a),
                  seg.center[1] + seg.radius * Math.sin(a)]);
      }
    }
  }
  return pts;
}

const CONTENT_TYPES: Record<string, string> = {
  ".html": "text/html",
  ".js": "text/javascript",
  ".css": "text/css",
  ".json": "application/json",
};

export async function startGateway(opts: GatewayOptions): Promise<Gateway> {
  const clientId = opts.clientId ?? 7;
  const sock = dgram.createSocket("udp4");
  const traceRows: TraceRow[] = [];
  const gesture = new GestureTracker();
  const freshness = new FreshnessFilter();
  let latestTick = 0;
  let lastSentTick = -1;
  let sawSnapshot = false;
  let pathPoints: [number, number][] = [];

  if (opts.scriptPath) {
    const raw = JSON.parse(fs.readFileSync(opts.scriptPath, "utf-8"));
    pathPoints = samplePathFromScript(raw);
  }

  await new Promise<void>((resolve) => sock.bind(0, "127.0.0.1", resolve));

  const wss = new WebSocketServer({ host: "127.0.0.1", port: opts.wsPort ?? 47901 });
  await new Promise<void>((resolve) => wss.once("listening", resolve));

  const broadcast = (obj: unknown) => {
    const text = JSON.stringify(obj);
    for (const client of wss.clients) {
      if (client.readyState === WebSocket.OPEN) client.send(text);
    }
  };

  sock.on("message", (data) => {
    let decoded;
    try {
      decoded = decodeDatagram(new Uint8Array(data.buffer, data.byteOffset,
                                              data.byteLength));
    } catch {
      return;
    }
    if (decoded.kind === "snapshot") {
      sawSnapshot = true;
      latestTick = decoded.snapshot.tick;
      broadcast({ type: "snap", ...decoded.snapshot });
    } else if (decoded.kind === "bye") {
      broadcast({ type: "bye" });
    }
  });

  // announce until the hub starts talking to us
  const hello = () => {
    if (!sawSnapshot) {
      sock.send(encodeHello(clientId, ROLE_GATEWAY), opts.hubPort, opts.hubHost);
    }
  };
  hello();
  const helloTimer = setInterval(hello, 500);

  wss.on("connection", (ws) => {
    if (pathPoints.length) ws.send(JSON.stringify({ type: "path", pts: pathPoints }));
    ws.on("message", (raw) => {
      let frame: ConsoleFrame;
      try {
        frame = JSON.parse(String(raw));
      } catch {
        return;
      }
      if (typeof frame.seq !== "number" || !freshness.accept(frame.seq)) return;
      const hand = gesture.update(frame.g === 1, latestTick);
      const rider = frameToRiderInput(frame, hand);
      // every frame gets a strictly newer tick stamp so latest-wins keeps it
      const stamp = Math.max(latestTick, lastSentTick + 1);
      lastSentTick = stamp;
      sock.send(encodeRiderInput(clientId, stamp, rider), opts.hubPort, opts.hubHost);
      traceRows.push({
        tick: stamp, seq: frame.seq, steer: rider.steer, p: rider.power,
        bf: rider.brakeFront, br: rider.brakeRear, lean: rider.lean, hand,
      });
    });
  });

  // compiled layout: dist/gateway.js next to dist/client/{client,src}/*.js
  const staticDir = opts.staticDir ?? path.resolve(HERE, "..", "static");
  const jsRoot = path.join(HERE, "client");
  const httpServer = http.createServer((req, res) => {
    const url = (req.url ?? "/").split("?")[0];
    if (url === "/trace") {
      res.writeHead(200, { "content-type": "application/jsonl" });
      res.end(traceToJsonl(traceRows));
      return;
    }
    if (url === "/config.json") {
      res.writeHead(200, { "content-type": "application/json" });
      res.end(JSON.stringify({ wsPort: (wss.address() as { port: number }).port }));
      return;
    }
    let file = url === "/" ? path.join(staticDir, "index.html")
      : url.endsWith(".js") ? path.join(jsRoot, url.slice(1))
      : path.join(staticDir, url.slice(1));
    if (!fs.existsSync(file)) {
      res.writeHead(404);
      res.end("not found");
      return;
    }
    res.writeHead(200, {
      "content-type": CONTENT_TYPES[path.extname(file)] ?? "application/octet-stream",
    });
    res.end(fs.readFileSync(file));
  });
  await new Promise<void>((resolve) =>
    httpServer.listen(opts.httpPort ?? 47902, "127.0.0.1", resolve));

  const flushTrace = () => {
    if (opts.tracePath) fs.writeFileSync(opts.tracePath, traceToJsonl(traceRows));
  };
  let closed = false;

  return {
    wsPort: (wss.address() as { port: number }).port,
    httpPort: (httpServer.address() as { port: number }).port,
    traceRows,
    latestTick: () => latestTick,
    close: async () => {
      if (closed) return;
      closed = true;
      clearInterval(helloTimer);
      flushTrace();
      try {
        sock.send(encodeBye(clientId, latestTick), opts.hubPort, opts.hubHost);
      } catch {
        // hub may already be gone
      }
      for (const client of wss.clients) client.terminate();
      await new Promise<void>((resolve) => wss.close(() => resolve()));
      await new Promise<void>((resolve) => httpServer.close(() => resolve()));
      sock.close();
    },
  };
}

function parseArgs(argv: string[]): GatewayOptions {
  const get = (flag: string): string | undefined => {
    const i = argv.indexOf(flag);
    return i >= 0 ? argv[i + 1] : undefined;
  };
  const hub = get("--hub") ?? "127.0.0.1:47900";
  const sep = hub.lastIndexOf(":");
  return {
    hubHost: hub.slice(0, sep) || "127.0.0.1",
    hubPort: Number(hub.slice(sep + 1)),
    wsPort: Number(get("--ws-port") ?? 47901),
    httpPort: Number(get("--http-port") ?? 47902),
    tracePath: get("--trace"),
    scriptPath: get("--script"),
  };
}

if (process.argv[1] && fileURLToPath(import.meta.url) === path.resolve(process.argv[1])) {
  const opts = parseArgs(process.argv.slice(2));
  startGateway(opts).then((gw) => {
    console.log(`GATEWAY_READY ws=${gw.wsPort} http=${gw.httpPort}`);
    const stop = () => gw.close().then(() => process.exit(0));
    process.on("SIGINT", stop);
    process.on("SIGTERM", stop);
  });
}
