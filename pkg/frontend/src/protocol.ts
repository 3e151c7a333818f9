// Wire protocol spoken with the steering service (JSON over WebSocket).

export const PROTOCOL_VERSION = 1;

export interface GridMeta {
  dims: [number, number, number];
  origin: [number, number, number];
  cell_size: number;
  data_b64: string;
}

export type ServerMessage =
  | { type: "hello"; proto: number }
  | { type: "scene"; grid: GridMeta }
  | { type: "frames"; frame_index: number; data: number[][][] }
  | { type: "status"; status: string; frames_emitted: number }
  | { type: "error"; code: string; msg: string };

export type ClientMessage =
  | { type: "start"; seed: number; start_xy: [number, number] }
  | { type: "set_goal"; xy: [number, number] }
  | { type: "set_goal"; hand: "left" | "right"; xyz: [number, number, number] }
  | { type: "set_action"; action: number; duration_frames: number }
  | { type: "stop" };

function isFiniteNumber(x: unknown): x is number {
  return typeof x === "number" && Number.isFinite(x);
}

function isVec(x: unknown, n: number): boolean {
  return Array.isArray(x) && x.length === n && x.every(isFiniteNumber);
}

/** Outbound schema gate: the UI refuses to send anything malformed. */
export function validateClientMessage(msg: ClientMessage): string | null {
  switch (msg.type) {
    case "start":
      if (!Number.isInteger(msg.seed)) return "start.seed must be an integer";
      if (!isVec(msg.start_xy, 2)) return "start.start_xy must be [x, y]";
      return null;
    case "set_goal":
      if ("hand" in msg) {
        if (msg.hand !== "left" && msg.hand !== "right")
          return "set_goal.hand must be left or right";
        if (!isVec(msg.xyz, 3)) return "set_goal.xyz must be [x, y, z]";
        return null;
      }
      if (!isVec(msg.xy, 2)) return "set_goal.xy must be [x, y]";
      return null;
    case "set_action":
      if (!Number.isInteger(msg.action) || msg.action < 0)
        return "set_action.action must be a non-negative integer";
      if (!Number.isInteger(msg.duration_frames) || msg.duration_frames < 1)
        return "set_action.duration_frames must be a positive integer";
      return null;
    case "stop":
      return null;
    default:
      return "unknown message type";
  }
}

/** Parse and shape-check one server message; null when unusable. */
export function parseServerMessage(raw: string): ServerMessage | null {
  let msg: unknown;
  try {
    msg = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof msg !== "object" || msg === null || !("type" in msg)) return null;
  const m = msg as Record<string, unknown>;
  switch (m.type) {
    case "hello":
      return isFiniteNumber(m.proto) ? (m as never) : null;
    case "scene": {
      const grid = m.grid as GridMeta | undefined;
      if (!grid || !isVec(grid.dims, 3) || !isVec(grid.origin, 3)) return null;
      if (!isFiniteNumber(grid.cell_size) || typeof grid.data_b64 !== "string")
        return null;
      return m as never;
    }
    case "frames":
      if (!Number.isInteger(m.frame_index) || !Array.isArray(m.data))
        return null;
      return m as never;
    case "status":
      return typeof m.status === "string" ? (m as never) : null;
    case "error":
      return typeof m.code === "string" ? (m as never) : null;
    default:
      return null;
  }
}
