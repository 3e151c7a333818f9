// Decoded occupancy grid and its standing-height obstacle projection.

import { GridMeta } from "./protocol.js";

const STANDING_EXTENT = 1.8; // meters, matches the generator's scene slice

export class GridData {
  readonly dims: [number, number, number];
  readonly origin: [number, number, number];
  readonly cellSize: number;
  readonly cells: Uint8Array; // 1 = reachable, ((ix*Ny)+iy)*Nz+iz order

  constructor(meta: GridMeta) {
    this.dims = meta.dims;
    this.origin = meta.origin;
    this.cellSize = meta.cell_size;
    this.cells = decodeBase64(meta.data_b64);
    const n = meta.dims[0] * meta.dims[1] * meta.dims[2];
    if (this.cells.length !== n) {
      throw new Error(`grid payload has ${this.cells.length} cells, want ${n}`);
    }
  }

  at(ix: number, iy: number, iz: number): boolean {
    const [, ny, nz] = this.dims;
    return this.cells[(ix * ny + iy) * nz + iz] !== 0;
  }

  /** xy map of cells blocked anywhere in the standing band [0, 1.8] m. */
  standingObstacles(): Uint8Array {
    const [nx, ny, nz] = this.dims;
    const out = new Uint8Array(nx * ny);
    const zLo = this.origin[2];
    for (let ix = 0; ix < nx; ix++) {
      for (let iy = 0; iy < ny; iy++) {
        let blocked = 0;
        for (let iz = 0; iz < nz; iz++) {
          const zc = zLo + (iz + 0.5) * this.cellSize;
          if (zc < 0 || zc > STANDING_EXTENT) continue;
          if (!this.at(ix, iy, iz)) {
            blocked = 1;
            break;
          }
        }
        out[ix * ny + iy] = blocked;
      }
    }
    return out;
  }

  /** Is the world xy walkable at standing height (and inside the grid)? */
  walkableAt(wx: number, wy: number): boolean {
    const ix = Math.floor((wx - this.origin[0]) / this.cellSize);
    const iy = Math.floor((wy - this.origin[1]) / this.cellSize);
    if (ix < 0 || iy < 0 || ix >= this.dims[0] || iy >= this.dims[1]) {
      return false;
    }
    const [, ny] = this.dims;
    return this.standingObstaclesCache()[ix * ny + iy] === 0;
  }

  private obstacleCache: Uint8Array | null = null;

  standingObstaclesCache(): Uint8Array {
    if (this.obstacleCache === null) this.obstacleCache = this.standingObstacles();
    return this.obstacleCache;
  }
}

const B64_ALPHABET =
  "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
const B64_LOOKUP = new Map([...B64_ALPHABET].map((c, i) => [c, i]));

function decodeBase64(b64: string): Uint8Array {
  const clean = b64.replace(/=+$/, "");
  const out = new Uint8Array(Math.floor((clean.length * 3) / 4));
  let acc = 0;
  let bits = 0;
  let at = 0;
  for (const ch of clean) {
    const v = B64_LOOKUP.get(ch);
    if (v === undefined) throw new Error(`bad base64 character ${ch}`);
    acc = (acc << 6) | v;
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out[at++] = (acc >> bits) & 0xff;
    }
  }
  return out;
}
