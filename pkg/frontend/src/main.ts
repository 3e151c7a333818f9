// Wiring: WebSocket transport, canvas events, and the 10 FPS playback loop.
// Configuration via URL query parameters: ?host=...&port=...&seed=...

import { FrameBuffer } from "./frames.js";
import {
  chunkIndicatorText,
  drawFloorplan,
  drawGoalMarker,
  drawSkeletonSide,
  drawSkeletonTopDown,
  drawTrail,
} from "./render.js";
import { SteerSession } from "./session.js";
import { PELVIS } from "./skeleton.js";
import { ViewTransform, Viewport } from "./transform.js";

const FPS = 10;
const GAP_TIMEOUT_MS = 5000;

function query(name: string, fallback: string): string {
  return new URLSearchParams(location.search).get(name) ?? fallback;
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function main(): void {
  const planCanvas = el<HTMLCanvasElement>("floorplan");
  const sideCanvas = el<HTMLCanvasElement>("sideview");
  const statusLine = el<HTMLDivElement>("status");
  const chunkLine = el<HTMLDivElement>("chunks");
  const banner = el<HTMLDivElement>("banner");
  const actionSelect = el<HTMLSelectElement>("action");
  const actionButton = el<HTMLButtonElement>("do-action");
  const stopButton = el<HTMLButtonElement>("stop");

  const host = query("host", location.hostname || "127.0.0.1");
  const port = query("port", "8765");
  const seed = parseInt(query("seed", "0"), 10);

  const socket = new WebSocket(`ws://${host}:${port}/ws`);
  const session = new SteerSession((text) => socket.send(text));
  let transform = new ViewTransform(0, 0, 60);
  let playhead = 0;
  let lastTick = 0;

  const planView = (): Viewport => ({
    widthPx: planCanvas.width,
    heightPx: planCanvas.height,
  });

  socket.addEventListener("open", () => {
    session.start(seed, [0.0, 0.0]);
  });
  socket.addEventListener("message", (event) => {
    const hadGrid = session.grid !== null;
    session.handleRaw(String(event.data), performance.now());
    if (!hadGrid && session.grid !== null) {
      transform = ViewTransform.fitGrid(
        session.grid.dims, session.grid.origin, session.grid.cellSize,
        planView());
    }
  });
  socket.addEventListener("close", () => session.onDisconnect());
  socket.addEventListener("error", () => session.onDisconnect());

  planCanvas.addEventListener("click", (event) => {
    const rect = planCanvas.getBoundingClientRect();
    session.clickToGoal(
      event.clientX - rect.left, event.clientY - rect.top,
      transform, planView());
  });
  planCanvas.addEventListener("wheel", (event) => {
    event.preventDefault();
    transform.zoomBy(event.deltaY < 0 ? 1.2 : 1 / 1.2);
  });
  actionButton.addEventListener("click", () => {
    session.setAction(parseInt(actionSelect.value, 10), 20);
  });
  stopButton.addEventListener("click", () => session.stop());

  function frameLoop(nowMs: number): void {
    if (nowMs - lastTick >= 1000 / FPS && playhead < session.buffer.length - 1) {
      playhead += 1;
      lastTick = nowMs;
    }
    const planCtx = planCanvas.getContext("2d")!;
    drawFloorplan(planCtx, session.grid, transform, planView());

    const trail: Array<[number, number]> = [];
    for (let i = 0; i <= playhead; i++) {
      const f = session.buffer.at(i);
      if (f) trail.push([f[PELVIS][0], f[PELVIS][1]]);
    }
    drawTrail(planCtx, trail, transform, planView());
    const frame = session.buffer.at(playhead);
    if (frame) {
      drawSkeletonTopDown(planCtx, frame, transform, planView());
      drawSkeletonSide(sideCanvas.getContext("2d")!, frame, {
        widthPx: sideCanvas.width,
        heightPx: sideCanvas.height,
      });
    }
    if (session.pendingGoal) {
      drawGoalMarker(planCtx, session.pendingGoal, transform, planView());
    }

    statusLine.textContent =
      `${session.status} | playhead ${playhead + 1}/${session.buffer.length}` +
      (session.selectedAction !== null
        ? ` | action ${session.selectedAction}` : "");
    chunkLine.textContent = chunkIndicatorText(
      session.buffer.cumulativeCounts());

    const gap = session.buffer.gapTimedOut(nowMs, GAP_TIMEOUT_MS);
    const problem = session.status === "disconnected"
      ? "connection lost - playback paused"
      : gap ? "stream gap timed out"
      : session.lastError ?? session.warning;
    banner.textContent = problem ?? "";
    banner.style.display = problem ? "block" : "none";

    requestAnimationFrame(frameLoop);
  }
  requestAnimationFrame(frameLoop);
}

window.addEventListener("load", main);

export { FrameBuffer, SteerSession };
