// Canvas drawing: top-down floor plan with the skeleton, a side elevation,
// goal markers, and the chunk-arrival indicator.

import { Frame } from "./frames.js";
import { GridData } from "./grid.js";
import { PendingGoal } from "./session.js";
import { PARENTS, PELVIS } from "./skeleton.js";
import { ViewTransform, Viewport } from "./transform.js";

const COLORS = {
  background: "#11161c",
  floor: "#1d2630",
  obstacle: "#46566a",
  skeleton: "#7fd1ff",
  pelvisTrail: "#3a86c8",
  goalPending: "#ffb020",
  goalAcked: "#59d98c",
  text: "#c6d4e2",
  error: "#ff6b6b",
};

export function drawFloorplan(
  ctx: CanvasRenderingContext2D,
  grid: GridData | null,
  transform: ViewTransform,
  view: Viewport,
): void {
  ctx.fillStyle = COLORS.background;
  ctx.fillRect(0, 0, view.widthPx, view.heightPx);
  if (grid === null) {
    ctx.fillStyle = COLORS.text;
    ctx.font = "14px sans-serif";
    ctx.fillText("waiting for scene...", 16, 24);
    return;
  }
  const [nx, ny] = grid.dims;
  const obstacles = grid.standingObstaclesCache();
  const cell = grid.cellSize;
  for (let ix = 0; ix < nx; ix++) {
    for (let iy = 0; iy < ny; iy++) {
      const wx = grid.origin[0] + ix * cell;
      const wy = grid.origin[1] + (iy + 1) * cell;
      const [px, py] = transform.worldToPixel(wx, wy, view);
      const size = cell * transform.pixelsPerMeter;
      ctx.fillStyle = obstacles[ix * ny + iy] ? COLORS.obstacle : COLORS.floor;
      ctx.fillRect(px, py, size + 0.5, size + 0.5);
    }
  }
}

export function drawSkeletonTopDown(
  ctx: CanvasRenderingContext2D,
  frame: Frame,
  transform: ViewTransform,
  view: Viewport,
): void {
  ctx.strokeStyle = COLORS.skeleton;
  ctx.lineWidth = 2;
  ctx.beginPath();
  for (let j = 0; j < PARENTS.length; j++) {
    const p = PARENTS[j];
    if (p < 0 || !frame[j] || !frame[p]) continue;
    const [ax, ay] = transform.worldToPixel(frame[p][0], frame[p][1], view);
    const [bx, by] = transform.worldToPixel(frame[j][0], frame[j][1], view);
    ctx.moveTo(ax, ay);
    ctx.lineTo(bx, by);
  }
  ctx.stroke();
  const [cx, cy] = transform.worldToPixel(
    frame[PELVIS][0], frame[PELVIS][1], view);
  ctx.fillStyle = COLORS.skeleton;
  ctx.beginPath();
  ctx.arc(cx, cy, 4, 0, 2 * Math.PI);
  ctx.fill();
}

export function drawTrail(
  ctx: CanvasRenderingContext2D,
  pelvisXY: Array<[number, number]>,
  transform: ViewTransform,
  view: Viewport,
): void {
  if (pelvisXY.length < 2) return;
  ctx.strokeStyle = COLORS.pelvisTrail;
  ctx.lineWidth = 1;
  ctx.beginPath();
  const [x0, y0] = transform.worldToPixel(pelvisXY[0][0], pelvisXY[0][1], view);
  ctx.moveTo(x0, y0);
  for (const [wx, wy] of pelvisXY.slice(1)) {
    const [px, py] = transform.worldToPixel(wx, wy, view);
    ctx.lineTo(px, py);
  }
  ctx.stroke();
}

export function drawGoalMarker(
  ctx: CanvasRenderingContext2D,
  goal: PendingGoal,
  transform: ViewTransform,
  view: Viewport,
): void {
  const [px, py] = transform.worldToPixel(goal.xy[0], goal.xy[1], view);
  ctx.strokeStyle = goal.acknowledged ? COLORS.goalAcked : COLORS.goalPending;
  ctx.lineWidth = 2;
  ctx.beginPath();
  ctx.arc(px, py, 8, 0, 2 * Math.PI);
  ctx.moveTo(px - 12, py);
  ctx.lineTo(px + 12, py);
  ctx.moveTo(px, py - 12);
  ctx.lineTo(px, py + 12);
  ctx.stroke();
}

/** Side elevation: world x right, world z up, auto-centered on the pelvis. */
export function drawSkeletonSide(
  ctx: CanvasRenderingContext2D,
  frame: Frame,
  view: Viewport,
  pixelsPerMeter = 90,
): void {
  ctx.fillStyle = COLORS.background;
  ctx.fillRect(0, 0, view.widthPx, view.heightPx);
  ctx.strokeStyle = "#2c3947";
  const floorY = view.heightPx - 20;
  ctx.beginPath();
  ctx.moveTo(0, floorY);
  ctx.lineTo(view.widthPx, floorY);
  ctx.stroke();

  const cx = frame[PELVIS][0];
  const toPx = (wx: number, wz: number): [number, number] => [
    view.widthPx / 2 + (wx - cx) * pixelsPerMeter,
    floorY - wz * pixelsPerMeter,
  ];
  ctx.strokeStyle = COLORS.skeleton;
  ctx.lineWidth = 2;
  ctx.beginPath();
  for (let j = 0; j < PARENTS.length; j++) {
    const p = PARENTS[j];
    if (p < 0 || !frame[j] || !frame[p]) continue;
    const [ax, ay] = toPx(frame[p][0], frame[p][2]);
    const [bx, by] = toPx(frame[j][0], frame[j][2]);
    ctx.moveTo(ax, ay);
    ctx.lineTo(bx, by);
  }
  ctx.stroke();
}

export function chunkIndicatorText(cumulative: number[], tail = 6): string {
  if (cumulative.length === 0) return "chunks: none yet";
  const shown = cumulative.slice(-tail);
  const prefix = cumulative.length > tail ? "... " : "";
  return `chunks: ${prefix}${shown.join(", ")}`;
}
