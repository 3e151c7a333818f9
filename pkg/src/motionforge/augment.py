"""Contact-preserving motion augmentation.

When a scene object is resized or replaced, contact joints must follow the
moved contact points. The offset applied to a joint's IK target trajectory
ramps linearly inside a proximity window so consecutive-frame target jumps
stay bounded; where two windows overlap on the same joint, the offsets are
blended with their norms as weights. The retargeting step re-solves the
motion per frame with the CCD solver.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import kinematics as kin
from .errors import InvalidInput, UnsupportedOverlap

DEFAULT_WINDOW = 30  # frames


@dataclass(frozen=True)
class ContactEvent:
    """A joint touching an object at a (possibly moved) contact point."""

    joint_index: int
    frame_start: int
    frame_end: int
    contact_point_old: np.ndarray
    contact_point_new: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "contact_point_old",
                           np.asarray(self.contact_point_old, dtype=np.float64))
        object.__setattr__(self, "contact_point_new",
                           np.asarray(self.contact_point_new, dtype=np.float64))
        if self.frame_start > self.frame_end:
            raise InvalidInput("frame_start must not exceed frame_end")
        if not (np.isfinite(self.contact_point_old).all()
                and np.isfinite(self.contact_point_new).all()):
            raise InvalidInput("contact points must be finite")

    @property
    def offset(self) -> np.ndarray:
        return self.contact_point_new - self.contact_point_old


@dataclass(frozen=True)
class OffsetWindow:
    """A displacement applied with linearly decaying norm around a frame."""

    offset: np.ndarray
    anchor_frame: int
    window_length: int

    def __post_init__(self):
        object.__setattr__(self, "offset",
                           np.asarray(self.offset, dtype=np.float64))
        if self.window_length < 1:
            raise InvalidInput("window length must be >= 1")


@dataclass
class TargetTrajectory:
    """Per-frame per-joint IK target positions, shape (L, J, 3)."""

    positions: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 3 or self.positions.shape[2] != 3:
            raise InvalidInput(
                f"trajectory must be (frames, joints, 3), got {self.positions.shape}")

    def copy(self) -> "TargetTrajectory":
        return TargetTrajectory(self.positions.copy())


def compute_target_offset(target: np.ndarray, contact_old: np.ndarray,
                          contact_new: np.ndarray) -> np.ndarray:
    """Adjusted target that preserves the joint-to-contact-point relation."""
    target = np.asarray(target, dtype=np.float64)
    return target + (np.asarray(contact_new, dtype=np.float64)
                     - np.asarray(contact_old, dtype=np.float64))


def window_offset(window: OffsetWindow, t: int) -> np.ndarray:
    """Offset with linearly decreasing norm; zero at and beyond the edge."""
    d = abs(t - window.anchor_frame)
    if d >= window.window_length:
        return np.zeros(3)
    return (1.0 - d / window.window_length) * window.offset


def blend_offsets(v1t: np.ndarray, v2t: np.ndarray) -> np.ndarray:
    """Norm-weighted mean of two simultaneous offsets.

    Both-zero input is the removable singularity of the weight formula and
    maps to the zero vector.
    """
    v1t = np.asarray(v1t, dtype=np.float64)
    v2t = np.asarray(v2t, dtype=np.float64)
    n1 = np.linalg.norm(v1t)
    n2 = np.linalg.norm(v2t)
    if n1 + n2 == 0.0:
        return np.zeros(3)
    return (n1 * v1t + n2 * v2t) / (n1 + n2)


def _event_ramp(event: ContactEvent, window: int, t: int) -> float:
    """Linear ramp: 1 inside [frame_start, frame_end], decaying over window."""
    d = max(0, event.frame_start - t, t - event.frame_end)
    return max(0.0, 1.0 - d / window)


def _event_active(event: ContactEvent, window: int, t: int) -> bool:
    return event.frame_start - window < t < event.frame_end + window


def build_smoothed_trajectory(
    base: TargetTrajectory,
    events: list[ContactEvent],
    post_ik_deviations: list[tuple[int, OffsetWindow]] | None = None,
    window: int = DEFAULT_WINDOW,
) -> TargetTrajectory:
    """Apply ramped contact offsets to the base trajectory.

    ``post_ik_deviations`` pairs a joint index with a window describing how an
    untargeted bone drifted after a previous IK pass; within overlap regions
    the event offset and the deviation offset are norm-weight blended. More
    than two windows covering the same joint at the same frame is unsupported.
    """
    frames, joints, _ = base.positions.shape
    for ev in events:
        if not 0 <= ev.joint_index < joints:
            raise InvalidInput(f"event joint {ev.joint_index} out of range")
        if not (0 <= ev.frame_start and ev.frame_end < frames):
            raise InvalidInput("event frames outside motion bounds")
    deviations = post_ik_deviations or []
    for j, _w in deviations:
        if not 0 <= j < joints:
            raise InvalidInput(f"deviation joint {j} out of range")

    out = base.copy()
    for t in range(frames):
        per_joint: dict[int, list[np.ndarray]] = {}
        for ev in events:
            if _event_active(ev, window, t):
                per_joint.setdefault(ev.joint_index, []).append(
                    _event_ramp(ev, window, t) * ev.offset)
        for j, w in deviations:
            if abs(t - w.anchor_frame) < w.window_length:
                per_joint.setdefault(j, []).append(window_offset(w, t))
        for j, offsets in per_joint.items():
            if len(offsets) == 1:
                out.positions[t, j] += offsets[0]
            elif len(offsets) == 2:
                out.positions[t, j] += blend_offsets(offsets[0], offsets[1])
            else:
                raise UnsupportedOverlap(
                    f"{len(offsets)} windows overlap on joint {j} at frame {t}")
    return out


@dataclass
class IKConfig:
    limits: kin.RotationLimits | None = None
    max_iters: int = 50
    tol: float = 1e-3
    reg_weight: float = 0.1


@dataclass
class RetargetResult:
    frames: np.ndarray  # (L, J, 3)
    residuals: list[dict[int, float]]  # per frame, per targeted joint


def retarget_motion(motion: np.ndarray, skeleton: kin.Skeleton,
                    events: list[ContactEvent], window: int = DEFAULT_WINDOW,
                    ik_config: IKConfig | None = None) -> RetargetResult:
    """Re-solve a motion so contact joints follow their moved contact points.

    Each frame's pose is fit to the original joint positions (warm-started
    from the previous frame), then the CCD solver pulls the event joints to
    their smoothed targets. Frames outside every offset window pass through
    unchanged. IK shortfalls are reported per frame, never raised.
    """
    motion = np.asarray(motion, dtype=np.float64)
    cfg = ik_config or IKConfig()
    limits = cfg.limits or kin.RotationLimits.default(skeleton)
    base = TargetTrajectory(motion)
    smoothed = build_smoothed_trajectory(base, events, None, window)

    out = motion.copy()
    residuals: list[dict[int, float]] = [{} for _ in range(len(motion))]
    if np.array_equal(smoothed.positions, base.positions):
        return RetargetResult(out, residuals)

    prev_pose: kin.Pose | None = None
    for t in range(len(motion)):
        active = {ev.joint_index for ev in events if _event_active(ev, window, t)}
        if not active:
            prev_pose = None  # next windowed frame re-fits from scratch
            continue
        init = prev_pose if prev_pose is not None \
            else kin.estimate_pose_from_positions(skeleton, motion[t])
        tracked = kin.fit_pose(skeleton, motion[t], init,
                               max_iters=120, tol=cfg.tol / 4).pose
        targets = {j: smoothed.positions[t, j] for j in sorted(active)}
        res = kin.ccd_ik_solve(skeleton, tracked, targets, limits,
                               max_iters=cfg.max_iters, tol=cfg.tol,
                               reg_weight=cfg.reg_weight)
        out[t] = kin.forward_kinematics(skeleton, res.pose)
        residuals[t] = res.residuals
        prev_pose = res.pose
    return RetargetResult(out, residuals)


# ---------------------------------------------------------------------------
# events file


def load_events(path: str) -> list[ContactEvent]:
    with open(path) as fh:
        doc = json.load(fh)
    return [
        ContactEvent(e["joint_index"], e["frame_start"], e["frame_end"],
                     e["contact_point_old"], e["contact_point_new"])
        for e in doc["events"]
    ]


def save_events(events: list[ContactEvent], path: str) -> None:
    doc = {"events": [
        {"joint_index": e.joint_index,
         "frame_start": e.frame_start,
         "frame_end": e.frame_end,
         "contact_point_old": [float(x) for x in e.contact_point_old],
         "contact_point_new": [float(x) for x in e.contact_point_new]}
        for e in events
    ]}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
