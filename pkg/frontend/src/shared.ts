/**
 * Shared rider-console logic: the hub's binary datagram layout, gesture
 * timing, sequence filtering, unit mapping, and the session trace format.
 * Pure and portable (DataView only) so the gateway, the browser client, and
 * the tests all use the same code.
 */

export const MAGIC = "CVIL";
export const VERSION = 1;
export const HEADER_SIZE = 11;

export const MSG_HELLO = 1;
export const MSG_SNAPSHOT = 2;
export const MSG_VEHICLE_INPUT = 3;
export const MSG_RIDER_INPUT = 4;
export const MSG_BYE = 5;

export const ROLE_GATEWAY = 3;

export type Hand = "above" | "between" | "below";

const HAND_CODE: Record<Hand, number> = { above: 1, between: 2, below: 3 };
const HAND_NAME: Record<number, Hand> = { 1: "above", 2: "between", 3: "below" };

export type Phase = "prestart" | "running" | "ended";
const PHASE_NAME: Record<number, Phase> = { 1: "prestart", 2: "running", 3: "ended" };

export interface RiderFrame {
  power: number;       // W
  brakeFront: number;  // fraction [0, 1]
  brakeRear: number;   // fraction [0, 1]
  steer: number;       // rad
  lean: number;        // rad
  hand: Hand;
  done?: boolean;
}

export interface EntityState {
  x: number;
  y: number;
  psi: number;
  v: number;
}

export interface Snapshot {
  tick: number;
  veh: EntityState & { delta: number };
  cyc: EntityState & { lean: number; steer: number; power: number; bf: number; br: number };
  hand: Hand;
  phase: Phase;
}

function header(buf: DataView, msgType: number, clientId: number, tick: number): void {
  buf.setUint8(0, MAGIC.charCodeAt(0));
  buf.setUint8(1, MAGIC.charCodeAt(1));
  buf.setUint8(2, MAGIC.charCodeAt(2));
  buf.setUint8(3, MAGIC.charCodeAt(3));
  buf.setUint8(4, VERSION);
  buf.setUint8(5, msgType);
  buf.setUint8(6, clientId);
  buf.setUint32(7, tick >>> 0, true);
}

export function encodeHello(clientId: number, role: number, tick = 0): Uint8Array {
  const out = new Uint8Array(HEADER_SIZE + 1);
  header(new DataView(out.buffer), MSG_HELLO, clientId, tick);
  out[HEADER_SIZE] = role;
  return out;
}

export function encodeBye(clientId: number, tick = 0): Uint8Array {
  const out = new Uint8Array(HEADER_SIZE);
  header(new DataView(out.buffer), MSG_BYE, clientId, tick);
  return out;
}

export function encodeRiderInput(clientId: number, tick: number,
                                 frame: RiderFrame): Uint8Array {
  const out = new Uint8Array(HEADER_SIZE + 5 * 8 + 2);
  const view = new DataView(out.buffer);
  header(view, MSG_RIDER_INPUT, clientId, tick);
  view.setFloat64(HEADER_SIZE, frame.power, true);
  view.setFloat64(HEADER_SIZE + 8, frame.brakeFront, true);
  view.setFloat64(HEADER_SIZE + 16, frame.brakeRear, true);
  view.setFloat64(HEADER_SIZE + 24, frame.steer, true);
  view.setFloat64(HEADER_SIZE + 32, frame.lean, true);
  view.setUint8(HEADER_SIZE + 40, HAND_CODE[frame.hand]);
  view.setUint8(HEADER_SIZE + 41, frame.done ? 1 : 0);
  return out;
}

export type Decoded =
  | { kind: "snapshot"; clientId: number; snapshot: Snapshot }
  | { kind: "hello"; clientId: number; role: number; tick: number }
  | { kind: "bye"; clientId: number; tick: number }
  | { kind: "other"; msgType: number };

export function decodeDatagram(data: Uint8Array): Decoded {
  if (data.length < HEADER_SIZE) {
    throw new Error(`datagram truncated: ${data.length} bytes`);
  }
  const view = new DataView(data.buffer, data.byteOffset, data.byteLength);
  const magic = String.fromCharCode(data[0], data[1], data[2], data[3]);
  if (magic !== MAGIC) throw new Error(`bad magic ${magic}`);
  if (view.getUint8(4) !== VERSION) throw new Error("bad version");
  const msgType = view.getUint8(5);
  const clientId = view.getUint8(6);
  const tick = view.getUint32(7, true);

  if (msgType === MSG_SNAPSHOT) {
    if (data.length !== HEADER_SIZE + 14 * 8 + 2) {
      throw new Error("snapshot payload truncated");
    }
    const f = (i: number) => view.getFloat64(HEADER_SIZE + 8 * i, true);
    const hand = HAND_NAME[view.getUint8(HEADER_SIZE + 112)];
    const phase = PHASE_NAME[view.getUint8(HEADER_SIZE + 113)];
    if (!hand || !phase) throw new Error("bad enum byte");
    return {
      kind: "snapshot",
      clientId,
      snapshot: {
        tick,
        veh: { x: f(0), y: f(1), psi: f(2), v: f(3), delta: f(4) },
        cyc: { x: f(5), y: f(6), psi: f(7), v: f(8), lean: f(9), steer: f(10),
               power: f(11), bf: f(12), br: f(13) },
        hand,
        phase,
      },
    };
  }
  if (msgType === MSG_HELLO) {
    return { kind: "hello", clientId, role: view.getUint8(HEADER_SIZE), tick };
  }
  if (msgType === MSG_BYE) {
    return { kind: "bye", clientId, tick };
  }
  return { kind: "other", msgType };
}

// ---------------------------------------------------------------------------
// Input translation

export const STEER_FULL_SCALE_RAD = 0.3;
export const GESTURE_REARM_TICKS = 90; // released > 1 s at 90 Hz -> below shoulder

export function steerToRad(normalized: number): number {
  const s = Math.max(-1, Math.min(1, normalized));
  return s * STEER_FULL_SCALE_RAD;
}

export function msToKmh(v: number): number {
  return v * 3.6;
}

/**
 * Momentary gesture button to hand height on the hub tick clock:
 * pressed -> above head; released for more than the re-arm window -> below
 * shoulder; otherwise between.
 */
export class GestureTracker {
  private releaseTick: number | null = null;
  private pressed = false;

  constructor(private rearmTicks: number = GESTURE_REARM_TICKS) {}

  update(pressed: boolean, tick: number): Hand {
    if (pressed) {
      this.pressed = true;
      return "above";
    }
    if (this.pressed) {
      this.pressed = false;
      this.releaseTick = tick;
      return "between";
    }
    if (this.releaseTick !== null && tick - this.releaseTick > this.rearmTicks) {
      return "below";
    }
    return "between";
  }
}

/** Latest-wins ordering filter: accept only strictly newer sequence numbers. */
export class FreshnessFilter {
  private last: number | null = null;

  accept(seq: number): boolean {
    if (this.last !== null && seq <= this.last) return false;
    this.last = seq;
    return true;
  }
}

// ---------------------------------------------------------------------------
// Console input frames and the session trace

export interface ConsoleFrame {
  seq: number;
  s: number;   // steer, normalized [-1, 1]
  p: number;   // pedal power, W
  bf: number;  // brake front fraction
  br: number;  // brake rear fraction
  g: 0 | 1;    // gesture button
}

export interface TraceRow {
  tick: number;
  seq: number;
  steer: number; // rad
  p: number;
  bf: number;
  br: number;
  lean: number;
  hand: Hand;
}

export function traceToJsonl(rows: TraceRow[]): string {
  return rows.map((r) => JSON.stringify(r)).join("\n") + (rows.length ? "\n" : "");
}

export function traceFromJsonl(text: string): TraceRow[] {
  return text
    .split("\n")
    .filter((line) => line.trim().length > 0)
    .map((line) => JSON.parse(line) as TraceRow);
}

/** Translate one browser frame into the rider input sent to the hub. */
export function frameToRiderInput(frame: ConsoleFrame, hand: Hand): RiderFrame {
  return {
    power: Math.max(0, frame.p),
    brakeFront: Math.max(0, Math.min(1, frame.bf)),
    brakeRear: Math.max(0, Math.min(1, frame.br)),
    steer: steerToRad(frame.s),
    lean: 0,
    hand,
  };
}
