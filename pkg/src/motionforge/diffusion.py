"""Mask-aware DDPM over body-joint episodes.

An episode is a fixed-length (L, J, 3) tensor. Conditioning is expressed as
a boolean mask plus a value tensor: the transition part pins the first k
frames to the previous episode's tail, the goal part pins the final frame's
pelvis xy (navigation) or one hand joint's xyz (fine interaction). Masked
entries never receive noise and are re-imposed after every reverse step, so
they come out bit-identical to the conditioning. Long motions are stitched
from episodes overlapping by k frames.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import kinematics as kin
from .errors import (InvalidInput, InvalidSchedule, NumericalError,
                     ShapeMismatch)

PELVIS = kin.PELVIS


# ---------------------------------------------------------------------------
# variance schedule


@dataclass(frozen=True)
class DiffusionSchedule:
    alpha: np.ndarray      # (T,)
    alpha_bar: np.ndarray  # (T,) cumulative products

    @property
    def timesteps(self) -> int:
        return len(self.alpha)

    @property
    def beta(self) -> np.ndarray:
        return 1.0 - self.alpha


def make_schedule(timesteps: int, beta_start: float = 1e-4,
                  beta_end: float = 0.02) -> DiffusionSchedule:
    """Linear beta schedule; alpha_bar[t] is the product of alpha[0..t]."""
    if timesteps < 1:
        raise InvalidSchedule("need at least one timestep")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise InvalidSchedule(
            f"betas must satisfy 0 < start <= end < 1, got ({beta_start}, {beta_end})")
    beta = np.linspace(beta_start, beta_end, timesteps)
    alpha = 1.0 - beta
    return DiffusionSchedule(alpha, np.cumprod(alpha))


def default_schedule(timesteps: int = 50) -> DiffusionSchedule:
    """Linear schedule with the canonical 1000-step endpoints (1e-4, 0.02)
    rescaled by 1000/T, so alpha_bar still decays to ~0 at short step counts
    and sampling can start from pure noise. Endpoints are clamped below 1
    for very short schedules."""
    scale = 1000.0 / timesteps
    end = min(0.02 * scale, 0.999)
    return make_schedule(timesteps, min(1e-4 * scale, end), end)


# ---------------------------------------------------------------------------
# episode masks and specs


@dataclass(frozen=True)
class EpisodeMask:
    """Boolean (L, J, 3) conditioning mask, split into its two parts."""

    transition: np.ndarray
    goal: np.ndarray

    def __post_init__(self):
        if self.transition.shape != self.goal.shape:
            raise ShapeMismatch("mask parts must share a shape")

    @property
    def combined(self) -> np.ndarray:
        return self.transition | self.goal


@dataclass(frozen=True)
class NavigationGoal:
    """Pelvis xy at the final frame; z is left for the model to infer."""

    xy: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "xy", np.asarray(self.xy, dtype=np.float64))
        if self.xy.shape != (2,) or not np.isfinite(self.xy).all():
            raise InvalidInput("navigation goal must be a finite 2-vector")


@dataclass(frozen=True)
class JointGoal:
    """A joint (typically a hand) pinned to a 3D point at the final frame."""

    joint_index: int
    xyz: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "xyz", np.asarray(self.xyz, dtype=np.float64))
        if self.xyz.shape != (3,) or not np.isfinite(self.xyz).all():
            raise InvalidInput("joint goal must be a finite 3-vector")


@dataclass(frozen=True)
class EpisodeSpec:
    """One generation unit: length, pinned transition frames, one subgoal,
    and the conditioning embeddings."""

    length: int
    transition_frames: np.ndarray  # (k, J, 3)
    subgoal: NavigationGoal | JointGoal
    scene_emb: np.ndarray
    action_emb: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "transition_frames",
                           np.asarray(self.transition_frames, dtype=np.float64))
        object.__setattr__(self, "scene_emb",
                           np.asarray(self.scene_emb, dtype=np.float64))
        object.__setattr__(self, "action_emb",
                           np.asarray(self.action_emb, dtype=np.float64))
        if self.transition_frames.ndim != 3 or self.transition_frames.shape[2] != 3:
            raise ShapeMismatch("transition frames must be (k, J, 3)")
        if not np.isfinite(self.transition_frames).all():
            raise InvalidInput("transition frames must be finite")
        if self.k >= self.length:
            raise InvalidInput("transition must be shorter than the episode")
        if not isinstance(self.subgoal, (NavigationGoal, JointGoal)):
            raise InvalidInput("subgoal must be a NavigationGoal or JointGoal")

    @property
    def k(self) -> int:
        return self.transition_frames.shape[0]

    @property
    def joints(self) -> int:
        return self.transition_frames.shape[1]

    def mask(self) -> EpisodeMask:
        l, j = self.length, self.joints
        trans = np.zeros((l, j, 3), dtype=bool)
        trans[:self.k] = True
        goal = np.zeros((l, j, 3), dtype=bool)
        if isinstance(self.subgoal, NavigationGoal):
            goal[l - 1, PELVIS, :2] = True
        else:
            goal[l - 1, self.subgoal.joint_index, :] = True
        return EpisodeMask(trans, goal)

    def conditioning(self) -> np.ndarray:
        l, j = self.length, self.joints
        cond = np.zeros((l, j, 3))
        cond[:self.k] = self.transition_frames
        if isinstance(self.subgoal, NavigationGoal):
            cond[l - 1, PELVIS, :2] = self.subgoal.xy
        else:
            cond[l - 1, self.subgoal.joint_index] = self.subgoal.xyz
        return cond


# ---------------------------------------------------------------------------
# forward process


def forward_noise(x0: np.ndarray, t: int, schedule: DiffusionSchedule,
                  mask: np.ndarray | None, rng: np.random.Generator):
    """Closed-form marginal of the stepwise noising: (x_t, injected noise).

    Noise is drawn for the full tensor (stable rng consumption) and then
    zeroed on masked entries, where x_t stays exactly x0.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    t = np.asarray(t, dtype=np.int64)
    if np.any(t >= schedule.timesteps) or np.any(t < 0):
        raise InvalidInput(f"t out of range [0, {schedule.timesteps})")
    eps = rng.standard_normal(x0.shape)
    ab = schedule.alpha_bar[t]
    while np.ndim(ab) < x0.ndim:  # broadcast per-batch t over trailing axes
        ab = np.expand_dims(ab, -1)
    x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
    if mask is not None:
        x_t = np.where(mask, x0, x_t)
        eps = np.where(mask, 0.0, eps)
    return x_t, eps


# ---------------------------------------------------------------------------
# training objective


def huber(residual: np.ndarray, delta: float = 1.0):
    """Elementwise Huber value and derivative."""
    a = np.abs(residual)
    quad = a <= delta
    val = np.where(quad, 0.5 * residual * residual,
                   delta * (a - 0.5 * delta))
    dval = np.where(quad, residual, delta * np.sign(residual))
    return val, dval


def loss_and_grads_given_noised(denoiser, x_t, t, eps, conditions, mask,
                                loss_type: str = "huber"):
    """Deterministic loss + exact gradients for pre-noised inputs.

    The finite-difference gradient check drives this directly; training draws
    (t, eps) first and then delegates here.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    batched = x_t.ndim == 4
    b = x_t.shape[0] if batched else 1
    l, j = x_t.shape[-3], x_t.shape[-2]
    flat = (b, l, j * 3) if batched else (l, j * 3)

    cache: dict = {}
    pred = denoiser.forward(x_t.reshape(flat), t, conditions["scene"],
                            conditions["action"], cache)
    residual = pred - eps.reshape(flat)
    keep = np.ones_like(residual, dtype=bool) if mask is None \
        else ~np.broadcast_to(np.asarray(mask, dtype=bool),
                              x_t.shape).reshape(flat)
    n = max(int(keep.sum()), 1)
    if loss_type == "huber":
        val, dval = huber(residual)
    elif loss_type == "l2":
        val, dval = residual * residual, 2.0 * residual
    else:
        raise InvalidInput(f"unknown loss type {loss_type!r}")
    loss = float(val[keep].sum() / n)
    if not np.isfinite(loss):
        raise NumericalError(f"non-finite loss at t={t}")
    d_pred = np.where(keep, dval, 0.0) / n
    grads, _ = denoiser.backward(cache, d_pred)
    return loss, grads


def training_loss(denoiser, x0, conditions, schedule: DiffusionSchedule,
                  mask, rng: np.random.Generator, loss_type: str = "huber"):
    """Sample t and noise, then score the denoiser's noise prediction over
    unmasked entries. Returns (loss, parameter gradients)."""
    x0 = np.asarray(x0, dtype=np.float64)
    batched = x0.ndim == 4
    t = rng.integers(0, schedule.timesteps, size=x0.shape[0]) if batched \
        else int(rng.integers(0, schedule.timesteps))
    x_t, eps = forward_noise(x0, t, schedule, mask, rng)
    return loss_and_grads_given_noised(denoiser, x_t, t, eps, conditions,
                                       mask, loss_type)


# ---------------------------------------------------------------------------
# sampling


def sample_with_mask(denoiser, mask: np.ndarray, cond: np.ndarray,
                     scene_emb, action_emb, schedule: DiffusionSchedule,
                     rng: np.random.Generator, callback=None,
                     clip_x0: float | None = 10.0) -> np.ndarray:
    """Ancestral DDPM inpainting with an explicit mask/conditioning pair.

    Each reverse step forms the implied clean-sample estimate from the
    predicted noise, clamps it to the scene-scale bound ``clip_x0`` (short
    schedules are unstable without this; None disables, giving the textbook
    epsilon-form update exactly), and samples the posterior with variance
    beta_t. Masked entries start at their conditioning values and are
    re-imposed after every step, so they come out bit-exact. Noise tensors
    are always drawn full-shape (one for the start, one per step t > 0),
    keeping rng consumption independent of the mask. ``callback(t, x)`` runs
    after each step's re-imposition.
    """
    mask = np.asarray(mask, dtype=bool)
    cond = np.asarray(cond, dtype=np.float64)
    l, j, _ = mask.shape

    x = np.where(mask, cond, rng.standard_normal((l, j, 3)))
    for t in range(schedule.timesteps - 1, -1, -1):
        pred = denoiser.forward(x.reshape(l, j * 3), t, scene_emb,
                                action_emb).reshape(l, j, 3)
        a = schedule.alpha[t]
        ab = schedule.alpha_bar[t]
        ab_prev = schedule.alpha_bar[t - 1] if t > 0 else 1.0
        beta = 1.0 - a
        x0_hat = (x - np.sqrt(1.0 - ab) * pred) / np.sqrt(ab)
        if clip_x0 is not None:
            x0_hat = np.clip(x0_hat, -clip_x0, clip_x0)
        mean = (np.sqrt(ab_prev) * beta * x0_hat
                + np.sqrt(a) * (1.0 - ab_prev) * x) / (1.0 - ab)
        if t > 0:
            x = mean + np.sqrt(beta) * rng.standard_normal((l, j, 3))
        else:
            x = mean
        if not np.isfinite(x[~mask]).all():
            raise NumericalError(f"non-finite sample state at t={t}")
        x = np.where(mask, cond, x)
        if callback is not None:
            callback(t, x)
    return x


def sample_episode(denoiser, spec: EpisodeSpec, schedule: DiffusionSchedule,
                   rng: np.random.Generator, callback=None) -> np.ndarray:
    """Ancestral DDPM inpainting of one episode, (L, J, 3)."""
    return sample_with_mask(denoiser, spec.mask().combined,
                            spec.conditioning(), spec.scene_emb,
                            spec.action_emb, schedule, rng, callback)


def generate_long(denoiser, specs: list[EpisodeSpec], k: int,
                  schedule: DiffusionSchedule, rng: np.random.Generator,
                  recenter: bool = True) -> np.ndarray:
    """Autoregressive chain of episodes with k-frame overlaps removed.

    The first spec supplies the initial k frames; every later episode's
    transition is the previous episode's final k frames, so the overlap rows
    are bit-identical. With ``recenter`` the sampler works in a frame whose
    origin is the episode's starting pelvis xy (matching how the model is
    trained) and results are shifted back, with world conditioning re-imposed.
    Output length is N * L - (N - 1) * k.
    """
    if not specs:
        raise InvalidInput("need at least one episode spec")
    out: np.ndarray | None = None
    transition = specs[0].transition_frames
    for spec in specs:
        if transition.shape != spec.transition_frames.shape:
            raise ShapeMismatch("inconsistent transition shapes across specs")
        spec = EpisodeSpec(spec.length, transition, spec.subgoal,
                           spec.scene_emb, spec.action_emb)
        episode = sample_episode_recentered(denoiser, spec, schedule, rng) \
            if recenter else sample_episode(denoiser, spec, schedule, rng)
        if out is None:
            out = episode
        else:
            out = np.concatenate([out, episode[k:]], axis=0)
        transition = episode[-k:] if k > 0 else episode[:0]
    return out


def sample_episode_recentered(denoiser, spec: EpisodeSpec,
                              schedule: DiffusionSchedule,
                              rng: np.random.Generator) -> np.ndarray:
    """Sample in a local frame anchored at the starting pelvis xy.

    The anchor is subtracted from all conditioning positions, the episode is
    sampled, and the result is shifted back; masked entries are then restored
    from the world-frame conditioning so the inpainting guarantee survives
    the round trip bit-exactly.
    """
    if spec.k > 0:
        anchor = np.array([spec.transition_frames[0, PELVIS, 0],
                           spec.transition_frames[0, PELVIS, 1], 0.0])
    else:
        anchor = np.zeros(3)
    local_goal: NavigationGoal | JointGoal
    if isinstance(spec.subgoal, NavigationGoal):
        local_goal = NavigationGoal(spec.subgoal.xy - anchor[:2])
    else:
        local_goal = JointGoal(spec.subgoal.joint_index,
                               spec.subgoal.xyz - anchor)
    local = EpisodeSpec(spec.length, spec.transition_frames - anchor,
                        local_goal, spec.scene_emb, spec.action_emb)
    x = sample_episode(denoiser, local, schedule, rng) + anchor
    mask = spec.mask().combined
    return np.where(mask, spec.conditioning(), x)


# ---------------------------------------------------------------------------
# joint-to-pose fitting


def fit_pose_params(joint_window: np.ndarray, skeleton: kin.Skeleton,
                    init: kin.Pose, max_iters: int = 300,
                    tol: float = 1e-4) -> kin.FitResult:
    """Pose parameters for the middle frame of a 3-frame window.

    Sequence edges pass a window with the edge frame duplicated. The fit is
    a gradient-descent refinement of the FK position error starting from
    ``init`` (the previous frame's solution in sequential use).
    """
    joint_window = np.asarray(joint_window, dtype=np.float64)
    if joint_window.ndim != 3 or joint_window.shape[0] != 3:
        raise ShapeMismatch("expected a (3, J, 3) window")
    return kin.fit_pose(skeleton, joint_window[1], init,
                        max_iters=max_iters, tol=tol)


def fit_motion_params(motion: np.ndarray, skeleton: kin.Skeleton,
                      max_iters: int = 200, tol: float = 1e-4):
    """Per-frame pose fits over a motion, warm-started frame to frame."""
    motion = np.asarray(motion, dtype=np.float64)
    poses: list[kin.Pose] = []
    errors: list[float] = []
    prev = kin.Pose.rest(skeleton)
    for i in range(len(motion)):
        window = np.stack([motion[max(i - 1, 0)], motion[i],
                           motion[min(i + 1, len(motion) - 1)]])
        res = fit_pose_params(window, skeleton, prev, max_iters, tol)
        poses.append(res.pose)
        errors.append(res.max_joint_error)
        prev = res.pose
    return poses, errors


# ---------------------------------------------------------------------------
# motion files


def save_motion(frames: np.ndarray, path: str, fps: int = 10,
                joint_names: list[str] | None = None) -> None:
    frames = np.asarray(frames, dtype=np.float64)
    if joint_names is None:
        joint_names = [b.name for b in kin.default_skeleton().bones]
    doc = {"fps": int(fps), "joints": list(joint_names),
           "frames": frames.tolist()}
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_motion(path: str):
    """(frames (L, J, 3), fps, joint names)."""
    with open(path) as fh:
        doc = json.load(fh)
    frames = np.asarray(doc["frames"], dtype=np.float64)
    if frames.ndim != 3 or frames.shape[2] != 3:
        raise InvalidInput(f"{path}: frames must be (L, J, 3)")
    return frames, int(doc["fps"]), list(doc["joints"])
