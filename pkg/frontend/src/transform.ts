// Invertible world <-> pixel mapping for the top-down floor plan.
// World x grows right, world y grows up; pixels have y growing down.

export interface Viewport {
  widthPx: number;
  heightPx: number;
}

export class ViewTransform {
  centerX: number; // world coords at the canvas center
  centerY: number;
  pixelsPerMeter: number;

  constructor(centerX: number, centerY: number, pixelsPerMeter: number) {
    this.centerX = centerX;
    this.centerY = centerY;
    this.pixelsPerMeter = pixelsPerMeter;
  }

  static fitGrid(
    dims: [number, number, number],
    origin: [number, number, number],
    cellSize: number,
    view: Viewport,
    margin = 0.95,
  ): ViewTransform {
    const w = dims[0] * cellSize;
    const h = dims[1] * cellSize;
    const scale = margin * Math.min(view.widthPx / w, view.heightPx / h);
    return new ViewTransform(origin[0] + w / 2, origin[1] + h / 2, scale);
  }

  worldToPixel(wx: number, wy: number, view: Viewport): [number, number] {
    return [
      view.widthPx / 2 + (wx - this.centerX) * this.pixelsPerMeter,
      view.heightPx / 2 - (wy - this.centerY) * this.pixelsPerMeter,
    ];
  }

  pixelToWorld(px: number, py: number, view: Viewport): [number, number] {
    return [
      this.centerX + (px - view.widthPx / 2) / this.pixelsPerMeter,
      this.centerY - (py - view.heightPx / 2) / this.pixelsPerMeter,
    ];
  }

  zoomBy(factor: number): void {
    this.pixelsPerMeter *= factor;
  }

  panByPixels(dx: number, dy: number): void {
    this.centerX -= dx / this.pixelsPerMeter;
    this.centerY += dy / this.pixelsPerMeter;
  }
}
