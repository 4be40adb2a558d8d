/** Rider console entry point: WebSocket link to the gateway, a 30 Hz input
 * loop while the tab is focused, and render-on-animation-frame. */
import { InputState } from "./input.js";
import { SceneRenderer, SnapMessage } from "./render.js";

const STALE_MS = 500;
const FRAME_MS = 33; // >= 30 Hz input frames

async function connect(): Promise<void> {
  const canvas = document.getElementById("scene") as HTMLCanvasElement;
  const renderer = new SceneRenderer(canvas);
  const input = new InputState();
  input.attach(window);

  const powerSlider = document.getElementById("power") as HTMLInputElement;
  const steerSlider = document.getElementById("steer") as HTMLInputElement;
  const gestureBtn = document.getElementById("gesture") as HTMLButtonElement;
  let gesturePressed = false;
  gestureBtn.addEventListener("mousedown", () => { gesturePressed = true; });
  gestureBtn.addEventListener("mouseup", () => { gesturePressed = false; });
  gestureBtn.addEventListener("mouseleave", () => { gesturePressed = false; });

  const cfg = await fetch("/config.json").then((r) => r.json());
  const ws = new WebSocket(`ws://${location.hostname}:${cfg.wsPort}`);

  let latest: SnapMessage | null = null;
  let lastSnapAt = 0;
  ws.onmessage = (ev) => {
    const msg = JSON.parse(ev.data);
    if (msg.type === "snap") {
      latest = msg as SnapMessage;
      lastSnapAt = performance.now();
    } else if (msg.type === "path") {
      renderer.pathPoints = msg.pts;
    } else if (msg.type === "bye") {
      document.title = "rider console (hub closed)";
    }
  };

  setInterval(() => {
    if (document.visibilityState !== "visible" || ws.readyState !== WebSocket.OPEN) {
      return;
    }
    input.powerLevel = Number(powerSlider.value);
    const frame = input.sample(performance.now());
    const manualSteer = Number(steerSlider.value);
    if (Math.abs(manualSteer) > 0.02) frame.s = manualSteer;
    if (gesturePressed) frame.g = 1;
    ws.send(JSON.stringify(frame));
  }, FRAME_MS);

  const loop = () => {
    renderer.draw(latest, latest !== null
      && performance.now() - lastSnapAt > STALE_MS);
    requestAnimationFrame(loop);
  };
  loop();
}

connect();
