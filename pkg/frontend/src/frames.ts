// In-order frame assembly from possibly shuffled frames messages.
//
// Frames enter keyed by their global index; delivery to the playback buffer
// happens strictly in index order, so late chunks wait in a stash until the
// gap before them fills. Duplicates are dropped. A gap that stays open past
// a deadline is surfaced as an error state.

export type Frame = number[][]; // J x 3

export interface ChunkRecord {
  frameIndex: number;
  count: number;
  cumulative: number; // frames delivered after this chunk landed
}

export class FrameBuffer {
  private frames: Frame[] = [];
  private stash = new Map<number, Frame>();
  private chunkLog: ChunkRecord[] = [];
  private gapSinceMs: number | null = null;

  /** Accept one frames message; returns how many frames became playable. */
  insert(frameIndex: number, data: Frame[], nowMs = 0): number {
    for (let i = 0; i < data.length; i++) {
      const idx = frameIndex + i;
      if (idx < this.frames.length || this.stash.has(idx)) continue; // dup
      this.stash.set(idx, data[i]);
    }
    const before = this.frames.length;
    while (this.stash.has(this.frames.length)) {
      const next = this.stash.get(this.frames.length)!;
      this.stash.delete(this.frames.length);
      this.frames.push(next);
    }
    const delivered = this.frames.length - before;
    if (data.length > 0) {
      this.chunkLog.push({
        frameIndex,
        count: data.length,
        cumulative: this.frames.length,
      });
    }
    this.gapSinceMs = this.stash.size > 0 ? (this.gapSinceMs ?? nowMs) : null;
    return delivered;
  }

  get length(): number {
    return this.frames.length;
  }

  at(i: number): Frame | undefined {
    return this.frames[i];
  }

  last(): Frame | undefined {
    return this.frames[this.frames.length - 1];
  }

  /** True when a stashed chunk has waited longer than timeoutMs. */
  gapTimedOut(nowMs: number, timeoutMs: number): boolean {
    return this.gapSinceMs !== null && nowMs - this.gapSinceMs > timeoutMs;
  }

  get pendingOutOfOrder(): number {
    return this.stash.size;
  }

  chunks(): readonly ChunkRecord[] {
    return this.chunkLog;
  }

  /** Cumulative delivered counts per chunk, e.g. [2, 6, 14, 16]. */
  cumulativeCounts(): number[] {
    return this.chunkLog.map((c) => c.cumulative);
  }
}
