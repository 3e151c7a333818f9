"""Procedural corridor-walking corpus and the desk-scale training loop.

Clips are produced through forward kinematics of a sinusoidal gait (leg and
arm swing with a pelvis bob), starting from standing and ramping up to
walking speed, then rotated to a random heading. Training windows are
re-anchored so the first frame's pelvis xy sits at the origin, which is the
same frame the sampler uses at generation time.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import action as act
from . import diffusion as dif
from . import kinematics as kin
from . import nn
from . import scene as sc
from .denoiser import Denoiser, DenoiserConfig


def _ry6(angle: float) -> np.ndarray:
    return kin.matrix_to_rot6d(kin.rotvec_to_matrix(np.array([0.0, angle, 0.0])))


def walking_pose(skeleton: kin.Skeleton, phase: float, amplitude: float,
                 pelvis_xy, pelvis_z: float) -> kin.Pose:
    """Canonical gait pose facing +x at the given cycle phase."""
    pose = kin.Pose.rest(skeleton,
                         (pelvis_xy[0], pelvis_xy[1], pelvis_z))
    swing = amplitude * np.sin(phase)
    lift = amplitude * 0.6
    idx = {b.name: i for i, b in enumerate(skeleton.bones)}
    pose.bone_rotations[idx["left_hip"]] = _ry6(swing)
    pose.bone_rotations[idx["right_hip"]] = _ry6(-swing)
    pose.bone_rotations[idx["left_knee"]] = _ry6(lift * max(0.0, -np.sin(phase)))
    pose.bone_rotations[idx["right_knee"]] = _ry6(lift * max(0.0, np.sin(phase)))
    pose.bone_rotations[idx["left_shoulder"]] = _ry6(-0.5 * swing)
    pose.bone_rotations[idx["right_shoulder"]] = _ry6(0.5 * swing)
    return pose


def corridor_clip(skeleton: kin.Skeleton, frames: int, heading: float,
                  speed: float, rng: np.random.Generator,
                  fps: int = 10) -> np.ndarray:
    """(frames, J, 3) walk from standing start along ``heading``."""
    amplitude = 0.35 + 0.1 * rng.uniform(-1, 1)
    stride_hz = 1.4 + 0.2 * rng.uniform(-1, 1)
    out = np.zeros((frames, skeleton.joint_count, 3))
    x = 0.0
    phase = rng.uniform(0, 2 * np.pi)
    c, s = np.cos(heading), np.sin(heading)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    for t in range(frames):
        ramp = min(1.0, t / 5.0)  # standing start
        v = speed * ramp
        x += v / fps
        phase += 2 * np.pi * stride_hz / fps * ramp
        bob = 0.9 + 0.02 * np.sin(2 * phase) * ramp
        pose = walking_pose(skeleton, phase, amplitude * ramp, (x, 0.0), bob)
        out[t] = kin.forward_kinematics(skeleton, pose) @ rot.T
    return out


def make_corpus(skeleton: kin.Skeleton, n_clips: int, clip_frames: int,
                rng: np.random.Generator) -> list[np.ndarray]:
    return [
        corridor_clip(skeleton, clip_frames, rng.uniform(-np.pi, np.pi),
                      rng.uniform(0.9, 1.5), rng)
        for _ in range(n_clips)
    ]


def mean_joint_displacement(clips) -> float:
    """Mean over frames and joints of the per-frame joint travel distance."""
    total, count = 0.0, 0
    for clip in clips:
        d = np.linalg.norm(np.diff(clip, axis=0), axis=2)
        total += d.sum()
        count += d.size
    return total / max(count, 1)


def episode_window(clip: np.ndarray, start: int, length: int) -> np.ndarray:
    """Window re-anchored so the first frame's pelvis xy is the origin."""
    w = clip[start:start + length].copy()
    w[:, :, 0] -= w[0, dif.PELVIS, 0]
    w[:, :, 1] -= w[0, dif.PELVIS, 1]
    return w


def training_mask(length: int, joints: int, k: int) -> np.ndarray:
    mask = np.zeros((length, joints, 3), dtype=bool)
    mask[:k] = True
    mask[length - 1, dif.PELVIS, :2] = True
    return mask


@dataclass
class ToyModel:
    denoiser: Denoiser
    schedule: dif.DiffusionSchedule
    scene_encoder: sc.SceneEncoder
    action_encoder: act.ActionEncoder
    scene_emb: np.ndarray   # empty-corridor embedding reused everywhere
    action_emb: np.ndarray  # no-action embedding
    corpus_displacement: float
    config: DenoiserConfig


def empty_scene_embedding(encoder: sc.SceneEncoder, dims=(32, 32, 18),
                          cell=0.1, patch=8) -> np.ndarray:
    local = sc.LocalGrid(dims, (0.0, 0.0), 0.0, cell,
                         np.ones(dims, dtype=bool))
    return encoder.encode(sc.patchify(local, patch))


def train_corridor_model(n_clips: int = 200, steps: int = 4000,
                         batch_size: int = 32, lr: float = 2e-3,
                         seed: int = 0, episode_frames: int = 16,
                         transition_frames: int = 2, clip_frames: int = 48,
                         n_actions: int = 12, time_budget_s: float | None = None,
                         log_every: int = 0) -> ToyModel:
    """Train the desk-scale model on synthetic corridor walks.

    Stops early if ``time_budget_s`` runs out. Deterministic for a seed.
    """
    rng = np.random.default_rng(seed)
    skeleton = kin.default_skeleton()
    clips = make_corpus(skeleton, n_clips, clip_frames, rng)
    disp = mean_joint_displacement(clips)

    config = DenoiserConfig(max_frames=episode_frames,
                            joint_dim=skeleton.joint_count * 3)
    model = Denoiser(config, seed=seed)
    schedule = dif.default_schedule(config.timesteps)
    scene_encoder = sc.SceneEncoder(token_dim=8 * 8 * 18, width=config.width)
    action_encoder = act.ActionEncoder(n_actions, width=config.width)
    scene_emb = empty_scene_embedding(scene_encoder)
    action_emb = action_encoder.encode(
        act.add_progress_indicator([], episode_frames, n_actions))

    mask = training_mask(episode_frames, skeleton.joint_count,
                         transition_frames)
    opt = nn.Adam(model.named_params(), lr=lr)
    start_time = time.monotonic()
    loss = np.nan
    for step in range(steps):
        if time_budget_s is not None \
                and time.monotonic() - start_time > time_budget_s:
            break
        opt.lr = lr * (0.02 ** (step / steps))  # geometric decay to lr/50
        ids = rng.integers(0, len(clips), size=batch_size)
        starts = rng.integers(0, clip_frames - episode_frames + 1,
                              size=batch_size)
        x0 = np.stack([episode_window(clips[i], int(s), episode_frames)
                       for i, s in zip(ids, starts)])
        conds = {"scene": np.tile(scene_emb, (batch_size, 1)),
                 "action": np.tile(action_emb, (batch_size, 1))}
        loss, grads = dif.training_loss(model, x0, conds, schedule,
                                        mask[None], rng)
        opt.step(grads)
        if log_every and step % log_every == 0:
            print(f"step {step}: loss {loss:.4f}")
    return ToyModel(model, schedule, scene_encoder, action_encoder, scene_emb,
                    action_emb, disp, config)
