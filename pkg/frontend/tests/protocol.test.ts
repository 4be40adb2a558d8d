import fs from "node:fs";
import path from "node:path";
import { fileURLToPath } from "node:url";
import { describe, expect, it } from "vitest";

import {
  decodeDatagram,
  encodeBye,
  encodeHello,
  encodeRiderInput,
} from "../src/shared.js";

const HERE = path.dirname(fileURLToPath(import.meta.url));
const FIXTURE = path.resolve(HERE, "..", "..", "fixtures", "protocol_golden.bin");

/** The fixture stores datagrams with a little-endian u16 length prefix. */
function unpackFixture(blob: Buffer): Uint8Array[] {
  const out: Uint8Array[] = [];
  let i = 0;
  while (i < blob.length) {
    const n = blob.readUInt16LE(i);
    i += 2;
    out.push(new Uint8Array(blob.subarray(i, i + n)));
    i += n;
  }
  return out;
}

const golden = unpackFixture(fs.readFileSync(FIXTURE));

describe("golden byte compatibility with the hub protocol", () => {
  it("encodes Hello exactly as the fixture", () => {
    expect(encodeHello(1, 1, 0)).toEqual(golden[0]);
  });

  it("encodes Bye exactly as the fixture", () => {
    expect(encodeBye(3, 0)).toEqual(golden[1]);
  });

  it("encodes RiderInputMsg exactly as the fixture", () => {
    const data = encodeRiderInput(2, 77, {
      power: 100.5, brakeFront: 0.25, brakeRear: 0.5,
      steer: 0.1, lean: -0.05, hand: "above", done: false,
    });
    expect(data).toEqual(golden[3]);
    expect(data.length).toBe(53);
  });

  it("decodes the zero-state snapshot", () => {
    const decoded = decodeDatagram(golden[4]);
    if (decoded.kind !== "snapshot") throw new Error("expected snapshot");
    expect(decoded.snapshot.tick).toBe(7);
    expect(decoded.snapshot.veh).toEqual({ x: 0, y: 0, psi: 0, v: 0, delta: 0 });
    expect(decoded.snapshot.hand).toBe("between");
    expect(decoded.snapshot.phase).toBe("prestart");
  });

  it("decodes the populated snapshot", () => {
    const decoded = decodeDatagram(golden[5]);
    if (decoded.kind !== "snapshot") throw new Error("expected snapshot");
    const s = decoded.snapshot;
    expect(s.tick).toBe(424242);
    expect(s.veh.x).toBeCloseTo(1.5, 12);
    expect(s.veh.psi).toBeCloseTo(0.7853981633974483, 15);
    expect(s.cyc.x).toBeCloseTo(10.0, 12);
    expect(s.cyc.power).toBeCloseTo(75.0, 12);
    expect(s.hand).toBe("below");
    expect(s.phase).toBe("running");
  });

  it("rejects truncated datagrams", () => {
    expect(() => decodeDatagram(golden[5].slice(0, 60))).toThrow(/truncated/);
    expect(() => decodeDatagram(new Uint8Array(4))).toThrow(/truncated/);
  });

  it("rejects a flipped magic byte", () => {
    const bad = new Uint8Array(golden[1]);
    bad[0] ^= 0xff;
    expect(() => decodeDatagram(bad)).toThrow(/magic/);
  });
});
