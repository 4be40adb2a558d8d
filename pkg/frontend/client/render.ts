/** Top-down canvas view: reference path, vehicle and cyclist with headings,
 * plus the HUD. The view follows the cyclist. */
import { msToKmh } from "../src/shared.js";

export interface SnapMessage {
  type: "snap";
  tick: number;
  veh: { x: number; y: number; psi: number; v: number };
  cyc: { x: number; y: number; psi: number; v: number };
  hand: string;
  phase: string;
}

export class SceneRenderer {
  private ctx: CanvasRenderingContext2D;
  pathPoints: [number, number][] = [];
  scale = 8; // px per meter

  constructor(private canvas: HTMLCanvasElement) {
    const ctx = canvas.getContext("2d");
    if (!ctx) throw new Error("no 2d context");
    this.ctx = ctx;
  }

  private toScreen(cx: number, cy: number, x: number, y: number): [number, number] {
    // world x east -> screen right, world y north -> screen up
    return [
      this.canvas.width / 2 + (x - cx) * this.scale,
      this.canvas.height / 2 - (y - cy) * this.scale,
    ];
  }

  private drawEntity(cx: number, cy: number, x: number, y: number, psi: number,
                     size: number, color: string): void {
    const ctx = this.ctx;
    const [sx, sy] = this.toScreen(cx, cy, x, y);
    ctx.save();
    ctx.translate(sx, sy);
    ctx.rotate(-psi);
    ctx.fillStyle = color;
    ctx.beginPath();
    ctx.moveTo(size, 0);
    ctx.lineTo(-size * 0.6, size * 0.45);
    ctx.lineTo(-size * 0.6, -size * 0.45);
    ctx.closePath();
    ctx.fill();
    ctx.restore();
  }

  draw(snap: SnapMessage | null, stale: boolean): void {
    const ctx = this.ctx;
    ctx.fillStyle = "#10141a";
    ctx.fillRect(0, 0, this.canvas.width, this.canvas.height);
    if (!snap) {
      ctx.fillStyle = "#888";
      ctx.font = "16px sans-serif";
      ctx.fillText("waiting for snapshots...", 20, 30);
      return;
    }
    const cx = snap.cyc.x;
    const cy = snap.cyc.y;

    if (this.pathPoints.length > 1) {
      ctx.strokeStyle = "#3a4b5c";
      ctx.lineWidth = 2;
      ctx.beginPath();
      this.pathPoints.forEach(([x, y], i) => {
        const [sx, sy] = this.toScreen(cx, cy, x, y);
        if (i === 0) ctx.moveTo(sx, sy);
        else ctx.lineTo(sx, sy);
      });
      ctx.stroke();
    }

    this.drawEntity(cx, cy, snap.veh.x, snap.veh.y, snap.veh.psi, 16, "#e0a33b");
    this.drawEntity(cx, cy, snap.cyc.x, snap.cyc.y, snap.cyc.psi, 10, "#5bd374");

    const gap = Math.hypot(snap.veh.x - snap.cyc.x, snap.veh.y - snap.cyc.y);
    const following = snap.veh.v > 0.05;
    ctx.fillStyle = "#dde";
    ctx.font = "15px monospace";
    ctx.fillText(`cyclist ${msToKmh(snap.cyc.v).toFixed(1)} km/h`, 16, 24);
    ctx.fillText(`gap ${gap.toFixed(1)} m`, 16, 44);
    ctx.fillText(`vehicle ${following ? "FOLLOWING" : "idle"} (inferred)`, 16, 64);
    ctx.fillText(`phase ${snap.phase}  hand ${snap.hand}  tick ${snap.tick}`, 16, 84);

    if (stale) {
      ctx.fillStyle = "#b33";
      ctx.fillRect(0, this.canvas.height - 34, this.canvas.width, 34);
      ctx.fillStyle = "#fff";
      ctx.fillText("STALE DATA - no snapshot for > 500 ms", 16,
                   this.canvas.height - 12);
    }
  }
}
