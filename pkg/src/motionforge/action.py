"""Frame-wise multi-hot action labels with a progress indicator.

Inside a segment the channel ramps affinely from 1 at the first frame to 2
at the last, so every label value lies in {0} u [1, 2] and the model can
read how far an action has advanced. Segment endpoints are global frame
indices; slicing an episode out of a longer timeline keeps the global ramp,
which is what lets one action span several episodes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import InvalidInput, InvalidSegments, ShapeMismatch


@dataclass(frozen=True)
class ActionSegment:
    action_id: int
    start_frame: int
    end_frame: int  # inclusive

    def __post_init__(self):
        if self.start_frame > self.end_frame:
            raise InvalidInput("segment start after end")
        if self.action_id < 0:
            raise InvalidInput("negative action id")


@dataclass
class ActionTrack:
    labels: np.ndarray  # (length, n_actions) float64, values in {0} u [1, 2]
    segments: tuple[ActionSegment, ...]

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.float64)


def add_progress_indicator(segments, length: int, n_actions: int,
                           start_frame: int = 0) -> ActionTrack:
    """Labels for global frames [start_frame, start_frame + length).

    A segment spanning frames i..j contributes 1 + (t - i) / (j - i) on its
    channel (1 when j == i); frames outside every segment stay 0. Segments of
    the same action must not overlap.
    """
    segments = tuple(segments)
    by_action: dict[int, list[ActionSegment]] = {}
    for seg in segments:
        if seg.action_id >= n_actions:
            raise InvalidInput(
                f"action id {seg.action_id} outside {n_actions} channels")
        by_action.setdefault(seg.action_id, []).append(seg)
    for action_id, segs in by_action.items():
        segs.sort(key=lambda s: s.start_frame)
        for a, b in zip(segs, segs[1:]):
            if b.start_frame <= a.end_frame:
                raise InvalidSegments(
                    f"segments of action {action_id} overlap at frame "
                    f"{b.start_frame}")

    labels = np.zeros((length, n_actions))
    t = np.arange(start_frame, start_frame + length)
    for seg in segments:
        span = seg.end_frame - seg.start_frame
        inside = (t >= seg.start_frame) & (t <= seg.end_frame)
        if span == 0:
            labels[inside, seg.action_id] = 1.0
        else:
            labels[inside, seg.action_id] = \
                1.0 + (t[inside] - seg.start_frame) / span
    return ActionTrack(labels, segments)


def load_actions(path: str):
    """(n_actions, segments) from the action JSON file."""
    with open(path) as fh:
        doc = json.load(fh)
    segments = [ActionSegment(s["action"], s["start"], s["end"])
                for s in doc["segments"]]
    return int(doc["n_actions"]), segments


def save_actions(n_actions: int, segments, path: str) -> None:
    doc = {"n_actions": int(n_actions),
           "segments": [{"action": s.action_id, "start": s.start_frame,
                         "end": s.end_frame} for s in segments]}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


class ActionEncoder:
    """Frozen transformer over per-frame label tokens; the last token's
    features pass through a two-layer head to give the embedding."""

    def __init__(self, n_actions: int, width: int = 64, layers: int = 2,
                 heads: int = 4, ffn: int = 128, seed: int = 4096):
        rng = np.random.default_rng(seed)
        self.n_actions = n_actions
        self.width = width
        self.proj = nn.Dense("action.proj", n_actions, width, rng)
        self.encoder = nn.TransformerEncoder("action.enc", width, layers,
                                             heads, ffn, dropout=0.0, rng=rng)
        self.mlp1 = nn.Dense("action.mlp1", width, width, rng)
        self.mlp2 = nn.Dense("action.mlp2", width, width, rng)
        self.posenc = nn.sinusoidal_positions(4096, width)

    def encode(self, track: ActionTrack) -> np.ndarray:
        labels = track.labels
        if labels.ndim != 2 or labels.shape[1] != self.n_actions:
            raise ShapeMismatch(
                f"encoder expects (*, {self.n_actions}) labels, got {labels.shape}")
        x = self.proj.forward(labels) + self.posenc[:len(labels)]
        h = self.encoder.forward(x)
        return self.mlp2.forward(np.maximum(self.mlp1.forward(h[-1]), 0.0))


def encode_actions(track: ActionTrack, encoder: ActionEncoder) -> np.ndarray:
    return encoder.encode(track)
