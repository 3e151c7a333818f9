// Client-side session state machine: owns the protocol conversation,
// validates everything it sends, and feeds the frame buffer.

import { FrameBuffer } from "./frames.js";
import { GridData } from "./grid.js";
import {
  ClientMessage,
  PROTOCOL_VERSION,
  parseServerMessage,
  validateClientMessage,
} from "./protocol.js";
import { ViewTransform, Viewport } from "./transform.js";

export type SendFn = (text: string) => void;

export interface PendingGoal {
  xy: [number, number];
  acknowledged: boolean;
}

export class SteerSession {
  readonly send: SendFn;
  grid: GridData | null = null;
  buffer = new FrameBuffer();
  status = "disconnected";
  framesEmittedByServer = 0;
  pendingGoal: PendingGoal | null = null;
  selectedAction: number | null = null;
  lastError: string | null = null;
  warning: string | null = null;
  serverProto: number | null = null;

  constructor(send: SendFn) {
    this.send = send;
  }

  // -- outbound -------------------------------------------------------------

  private post(msg: ClientMessage): boolean {
    const problem = validateClientMessage(msg);
    if (problem !== null) {
      this.warning = `refusing to send invalid message: ${problem}`;
      return false;
    }
    this.send(JSON.stringify(msg));
    return true;
  }

  start(seed: number, startXY: [number, number]): boolean {
    this.buffer = new FrameBuffer();
    this.pendingGoal = null;
    return this.post({ type: "start", seed, start_xy: startXY });
  }

  /** Convert a canvas click to a navigation goal; block clicks that land on
   * an obstacle or outside the scene. */
  clickToGoal(
    px: number,
    py: number,
    transform: ViewTransform,
    view: Viewport,
  ): boolean {
    if (this.grid === null) {
      this.warning = "scene not loaded yet";
      return false;
    }
    const [wx, wy] = transform.pixelToWorld(px, py, view);
    if (!this.grid.walkableAt(wx, wy)) {
      this.warning = "that spot is blocked";
      return false;
    }
    if (!this.post({ type: "set_goal", xy: [wx, wy] })) return false;
    this.pendingGoal = { xy: [wx, wy], acknowledged: false };
    this.warning = null;
    return true;
  }

  setHandGoal(hand: "left" | "right", xyz: [number, number, number]): boolean {
    return this.post({ type: "set_goal", hand, xyz });
  }

  setAction(action: number, durationFrames: number): boolean {
    if (!this.post({ type: "set_action", action, duration_frames: durationFrames })) {
      return false;
    }
    this.selectedAction = action;
    return true;
  }

  stop(): boolean {
    return this.post({ type: "stop" });
  }

  // -- inbound --------------------------------------------------------------

  handleRaw(raw: string, nowMs = 0): void {
    const msg = parseServerMessage(raw);
    if (msg === null) {
      this.lastError = "unparseable server message";
      return;
    }
    switch (msg.type) {
      case "hello":
        this.serverProto = msg.proto;
        this.status = msg.proto === PROTOCOL_VERSION ? "connected"
          : "protocol-mismatch";
        break;
      case "scene":
        this.grid = new GridData(msg.grid);
        break;
      case "frames":
        this.buffer.insert(msg.frame_index, msg.data as never, nowMs);
        if (this.pendingGoal !== null) {
          // the first frames of the rebuilt episode acknowledge the goal
          this.pendingGoal.acknowledged = true;
        }
        break;
      case "status":
        this.status = msg.status;
        this.framesEmittedByServer = msg.frames_emitted;
        if (this.pendingGoal?.acknowledged && msg.status === "idle") {
          this.pendingGoal = null; // goal fully played out
        }
        break;
      case "error":
        this.lastError = `${msg.code}: ${msg.msg}`;
        break;
    }
  }

  onDisconnect(): void {
    this.status = "disconnected";
  }
}
