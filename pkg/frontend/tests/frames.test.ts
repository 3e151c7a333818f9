import { describe, expect, it } from "vitest";

import { Frame, FrameBuffer } from "../src/frames.js";

function frame(tag: number): Frame {
  return [[tag, 0, 0]];
}

function chunk(start: number, n: number): Frame[] {
  return Array.from({ length: n }, (_, i) => frame(start + i));
}

// deterministic shuffle
function shuffled<T>(items: T[], seed: number): T[] {
  const out = items.slice();
  let s = seed;
  for (let i = out.length - 1; i > 0; i--) {
    s = (s * 1103515245 + 12345) % 2147483648;
    const j = s % (i + 1);
    [out[i], out[j]] = [out[j], out[i]];
  }
  return out;
}

describe("FrameBuffer", () => {
  it("delivers in-order chunks immediately", () => {
    const buf = new FrameBuffer();
    expect(buf.insert(0, chunk(0, 2))).toBe(2);
    expect(buf.insert(2, chunk(2, 4))).toBe(4);
    expect(buf.length).toBe(6);
    for (let i = 0; i < 6; i++) expect(buf.at(i)![0][0]).toBe(i);
  });

  it("tracks the chunk arrival pattern 2, 6, 14, 16", () => {
    const buf = new FrameBuffer();
    buf.insert(0, chunk(0, 2));
    buf.insert(2, chunk(2, 4));
    buf.insert(6, chunk(6, 8));
    buf.insert(14, chunk(14, 2));
    expect(buf.cumulativeCounts()).toEqual([2, 6, 14, 16]);
  });

  it("renders shuffled delivery in index order", () => {
    const chunks: Array<[number, Frame[]]> = [
      [0, chunk(0, 2)], [2, chunk(2, 4)], [6, chunk(6, 8)],
      [14, chunk(14, 2)], [16, chunk(16, 4)], [20, chunk(20, 4)],
    ];
    for (let seed = 1; seed <= 25; seed++) {
      const buf = new FrameBuffer();
      for (const [idx, data] of shuffled(chunks, seed)) {
        buf.insert(idx, data);
      }
      expect(buf.length).toBe(24);
      for (let i = 0; i < 24; i++) expect(buf.at(i)![0][0]).toBe(i);
      expect(buf.pendingOutOfOrder).toBe(0);
    }
  });

  it("holds late chunks until the gap fills", () => {
    const buf = new FrameBuffer();
    expect(buf.insert(2, chunk(2, 4))).toBe(0); // gap before it
    expect(buf.length).toBe(0);
    expect(buf.pendingOutOfOrder).toBe(4);
    expect(buf.insert(0, chunk(0, 2))).toBe(6); // gap filled, all deliver
    expect(buf.length).toBe(6);
  });

  it("drops duplicate frames on reconnect replays", () => {
    const buf = new FrameBuffer();
    buf.insert(0, chunk(0, 4));
    buf.insert(0, chunk(0, 4)); // replay of already-delivered frames
    buf.insert(2, chunk(2, 4)); // partial overlap
    expect(buf.length).toBe(6);
    for (let i = 0; i < 6; i++) expect(buf.at(i)![0][0]).toBe(i);
  });

  it("never reorders or duplicates under random replays", () => {
    const chunks: Array<[number, Frame[]]> = [];
    let at = 0;
    for (const n of [2, 4, 8, 2, 14, 14, 3]) {
      chunks.push([at, chunk(at, n)]);
      at += n;
    }
    for (let seed = 1; seed <= 20; seed++) {
      const buf = new FrameBuffer();
      const doubled = chunks.concat(chunks); // every chunk replayed once
      for (const [idx, data] of shuffled(doubled, seed)) {
        buf.insert(idx, data);
      }
      expect(buf.length).toBe(at);
      for (let i = 0; i < at; i++) expect(buf.at(i)![0][0]).toBe(i);
    }
  });

  it("reports a gap timeout", () => {
    const buf = new FrameBuffer();
    buf.insert(4, chunk(4, 2), 1000);
    expect(buf.gapTimedOut(1500, 1000)).toBe(false);
    expect(buf.gapTimedOut(2100, 1000)).toBe(true);
    buf.insert(0, chunk(0, 4), 2200); // gap closes
    expect(buf.gapTimedOut(99999, 1000)).toBe(false);
  });
});
