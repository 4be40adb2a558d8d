/** Keyboard and slider state assembled into console input frames.
 *
 * Arrow keys steer with a 2 units/s slew (and return to center at the same
 * rate); W pedals at the power slider's level; space squeezes both brakes;
 * G is the momentary gesture button. No other smoothing is applied.
 */
import type { ConsoleFrame } from "../src/shared.js";

export const STEER_SLEW_PER_S = 2.0;

export class InputState {
  private keys = new Set<string>();
  steer = 0;
  powerLevel = 120;
  private seq = 0;
  private lastUpdate: number | null = null;

  attach(target: HTMLElement | Window): void {
    target.addEventListener("keydown", (e) => {
      this.press((e as KeyboardEvent).key);
    });
    target.addEventListener("keyup", (e) => {
      this.release((e as KeyboardEvent).key);
    });
  }

  press(key: string): void {
    this.keys.add(key.toLowerCase());
  }

  release(key: string): void {
    this.keys.delete(key.toLowerCase());
  }

  down(key: string): boolean {
    return this.keys.has(key.toLowerCase());
  }

  /** Advance the steer slew and emit the next frame. */
  sample(nowMs: number): ConsoleFrame {
    const dt = this.lastUpdate === null ? 0 : (nowMs - this.lastUpdate) / 1000;
    this.lastUpdate = nowMs;
    const target = this.down("arrowleft") ? 1 : this.down("arrowright") ? -1 : 0;
    const maxStep = STEER_SLEW_PER_S * dt;
    const delta = Math.max(-maxStep, Math.min(maxStep, target - this.steer));
    this.steer = Math.max(-1, Math.min(1, this.steer + delta));
    const braking = this.down(" ") ? 1 : 0;
    return {
      seq: ++this.seq,
      s: this.steer,
      p: this.down("w") ? this.powerLevel : 0,
      bf: braking,
      br: braking,
      g: this.down("g") ? 1 : 0,
    };
  }
}
