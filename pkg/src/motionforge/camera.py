"""Adaptive camera tracking for rendering interaction footage.

Twenty camera proposals ring the character at 2 m radius and 1.4 m height,
18 degrees apart, looking horizontally at the body. Keyframes every 30
frames score each proposal by how many joints of the interacting hand it
sees (ray-cast against the scene, with a 10 cm occlusion allowance);
dynamic programming picks the keyframe sequence minimizing total yaw
rotation minus a coverage reward, and a natural cubic spline interpolates
yaw between keyframes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput
from .mesh import TriangleMesh, ray_hits

RING_RADIUS = 2.0
CAMERA_HEIGHT = 1.4
N_PROPOSALS = 20
KEYFRAME_INTERVAL = 30
HAND_SWITCH_DISTANCE = 0.20
OCCLUSION_ALLOWANCE = 0.10


@dataclass(frozen=True)
class CameraProposal:
    index: int
    yaw: float            # about z in the human frame
    position: np.ndarray  # world, height 1.4 m
    look_at: np.ndarray   # horizontal target


def ring_proposals(human_xy, human_yaw: float = 0.0) -> list[CameraProposal]:
    """The 20 evenly spaced ring proposals around a human position."""
    human_xy = np.asarray(human_xy, dtype=np.float64)
    out = []
    for i in range(N_PROPOSALS):
        yaw = human_yaw + 2.0 * np.pi * i / N_PROPOSALS
        pos = np.array([human_xy[0] + RING_RADIUS * np.cos(yaw),
                        human_xy[1] + RING_RADIUS * np.sin(yaw),
                        CAMERA_HEIGHT])
        look = np.array([human_xy[0], human_xy[1], CAMERA_HEIGHT])
        out.append(CameraProposal(i, float(yaw), pos, look))
    return out


def select_interacting_hand(left_positions, right_positions,
                            object_points) -> str:
    """Track the hand closest to a dynamic object, or the right hand when
    both are over 20 cm away (ties also go right)."""
    obj = np.asarray(object_points, dtype=np.float64).reshape(-1, 3)
    if len(obj) == 0:
        return "right"

    def dist(hand):
        hand = np.asarray(hand, dtype=np.float64).reshape(-1, 3)
        return min(np.linalg.norm(obj - h, axis=1).min() for h in hand)

    dl, dr = dist(left_positions), dist(right_positions)
    if min(dl, dr) > HAND_SWITCH_DISTANCE:
        return "right"
    return "left" if dl < dr else "right"


def visibility_count(camera: CameraProposal, joints: np.ndarray,
                     mesh: TriangleMesh | None, fov_h_deg: float = 90.0,
                     aspect: float = 16.0 / 9.0) -> int:
    """Number of joints the camera sees.

    A joint counts when it projects inside the image plane and the first
    scene intersection along the view ray (if any) lies within 10 cm of the
    joint.
    """
    joints = np.asarray(joints, dtype=np.float64).reshape(-1, 3)
    fwd = camera.look_at - camera.position
    fwd_n = np.linalg.norm(fwd)
    if fwd_n < 1e-12:
        return 0
    fwd = fwd / fwd_n
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    true_up = np.cross(right, fwd)
    tan_h = np.tan(np.deg2rad(fov_h_deg) / 2.0)
    tan_v = tan_h / aspect

    tris = mesh.triangles if mesh is not None and len(mesh.faces) else None
    count = 0
    for joint in joints:
        ray = joint - camera.position
        depth = ray @ fwd
        if depth <= 1e-9:
            continue
        if abs(ray @ right) > tan_h * depth or abs(ray @ true_up) > tan_v * depth:
            continue
        if tris is not None:
            dist = np.linalg.norm(ray)
            direction = ray / dist
            ts = ray_hits(camera.position, direction, tris)
            t = ts.min()
            if np.isfinite(t):
                hit = camera.position + t * direction
                if np.linalg.norm(hit - joint) > OCCLUSION_ALLOWANCE:
                    continue
        count += 1
    return count


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.mod(-np.asarray(a, dtype=np.float64) + np.pi, 2.0 * np.pi)
    return -(w - np.pi)


def dp_select_path(coverage: np.ndarray, yaws: np.ndarray,
                   rotation_weight: float = 1.0,
                   feasible: np.ndarray | None = None) -> list[int]:
    """Proposal index per keyframe minimizing total |yaw change| minus
    weighted coverage, over proposals marked feasible at each keyframe.

    Yaw differences wrap to (-pi, pi]. Ties prefer the lower index.
    """
    coverage = np.asarray(coverage, dtype=np.float64)
    k, p = coverage.shape
    yaws = np.asarray(yaws, dtype=np.float64)
    feasible = np.ones((k, p), dtype=bool) if feasible is None \
        else np.asarray(feasible, dtype=bool)
    if k < 1:
        raise InvalidInput("need at least one keyframe")
    assert feasible.any(axis=1).all(), \
        "threshold adjustment must leave a feasible proposal per keyframe"

    inf = np.inf
    cost = np.where(feasible[0], -rotation_weight * coverage[0], inf)
    back = np.zeros((k, p), dtype=int)
    for i in range(1, k):
        delta = np.abs(wrap_angle(yaws[None, :] - yaws[:, None]))  # prev x cur
        step = cost[:, None] + delta
        best_prev = np.argmin(step, axis=0)  # lowest index wins ties
        cost = step[best_prev, np.arange(p)] - rotation_weight * coverage[i]
        cost = np.where(feasible[i], cost, inf)
        back[i] = best_prev
    path = [int(np.argmin(cost))]
    for i in range(k - 1, 0, -1):
        path.append(int(back[i][path[-1]]))
    return path[::-1]


def adjust_thresholds(visibility: np.ndarray) -> np.ndarray:
    """Feasibility mask: per keyframe, require the most joints any proposal
    achieves (all-invisible keyframes are unconstrained)."""
    visibility = np.asarray(visibility)
    best = visibility.max(axis=1, keepdims=True)
    return (visibility >= best) | (best == 0)


def interpolate_yaw(keyframe_yaws, keyframe_indices, frame_count: int) -> np.ndarray:
    """Per-frame yaw via a natural cubic spline through unwrapped keyframe
    yaws, wrapped back to (-pi, pi]. One keyframe gives a constant."""
    yaws = np.unwrap(np.asarray(keyframe_yaws, dtype=np.float64))
    idx = np.asarray(keyframe_indices, dtype=np.float64)
    if len(yaws) != len(idx) or len(yaws) == 0:
        raise InvalidInput("keyframe yaws and indices must align")
    frames = np.arange(frame_count, dtype=np.float64)
    if len(yaws) == 1:
        return wrap_angle(np.full(frame_count, yaws[0]))
    return wrap_angle(natural_cubic_eval(idx, yaws, frames))


def natural_cubic_second_derivatives(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Knot second derivatives of the natural cubic spline (Thomas solve)."""
    n = len(x)
    if n < 3:
        return np.zeros(n)
    h = np.diff(x)
    # tridiagonal system for interior knots
    sub = h[:-1].copy()
    diag = 2.0 * (h[:-1] + h[1:])
    sup = h[1:].copy()
    rhs = 6.0 * (np.diff(y[1:]) / h[1:] - np.diff(y[:-1]) / h[:-1])
    # natural boundary: second derivative 0 at both ends
    for i in range(1, n - 2):
        w = sub[i] / diag[i - 1]
        diag[i] -= w * sup[i - 1]
        rhs[i] -= w * rhs[i - 1]
    m = np.zeros(n)
    m[n - 2] = rhs[-1] / diag[-1]
    for i in range(n - 4, -1, -1):
        m[i + 1] = (rhs[i] - sup[i] * m[i + 2]) / diag[i]
    return m


def natural_cubic_eval(x: np.ndarray, y: np.ndarray,
                       at: np.ndarray) -> np.ndarray:
    m = natural_cubic_second_derivatives(x, y)
    seg = np.clip(np.searchsorted(x, at, side="right") - 1, 0, len(x) - 2)
    h = x[seg + 1] - x[seg]
    a = (x[seg + 1] - at) / h
    b = (at - x[seg]) / h
    return (a * y[seg] + b * y[seg + 1]
            + ((a ** 3 - a) * m[seg] + (b ** 3 - b) * m[seg + 1]) * h * h / 6.0)


# ---------------------------------------------------------------------------
# full pipeline


@dataclass
class CameraTrack:
    yaw: np.ndarray        # per frame
    position: np.ndarray   # (frames, 3)
    look_at: np.ndarray    # (frames, 3)


def track_camera(motion: np.ndarray, mesh: TriangleMesh | None,
                 object_points: np.ndarray | None = None,
                 left_hand_chain=(6, 7, 8, 9, 22),
                 right_hand_chain=(10, 11, 12, 13, 23),
                 rotation_weight: float = 1.0) -> CameraTrack:
    """Camera path for a motion: keyframes every 30 frames plus the final
    frame, hand-aware visibility scoring, DP proposal selection, splined yaw.
    """
    motion = np.asarray(motion, dtype=np.float64)
    frames = len(motion)
    if frames == 0:
        raise InvalidInput("empty motion")
    key_idx = list(range(0, frames, KEYFRAME_INTERVAL))
    if key_idx[-1] != frames - 1:
        key_idx.append(frames - 1)

    obj = np.zeros((0, 3)) if object_points is None else object_points
    coverage = np.zeros((len(key_idx), N_PROPOSALS))
    yaws = np.zeros(N_PROPOSALS)
    for ki, f in enumerate(key_idx):
        joints = motion[f]
        hand = select_interacting_hand(joints[list(left_hand_chain)],
                                       joints[list(right_hand_chain)], obj)
        chain = left_hand_chain if hand == "left" else right_hand_chain
        proposals = ring_proposals(joints[0, :2])
        if ki == 0:
            yaws = np.array([p.yaw for p in proposals])
        for p in proposals:
            coverage[ki, p.index] = visibility_count(p, joints[list(chain)],
                                                     mesh)
    feasible = adjust_thresholds(coverage)
    chosen = dp_select_path(coverage, yaws, rotation_weight, feasible)
    key_yaws = yaws[chosen]
    yaw = interpolate_yaw(key_yaws, key_idx, frames)

    pos = np.stack([
        motion[:, 0, 0] + RING_RADIUS * np.cos(yaw),
        motion[:, 0, 1] + RING_RADIUS * np.sin(yaw),
        np.full(frames, CAMERA_HEIGHT),
    ], axis=1)
    look = np.stack([motion[:, 0, 0], motion[:, 0, 1],
                     np.full(frames, CAMERA_HEIGHT)], axis=1)
    return CameraTrack(yaw, pos, look)


def save_camera_track(track: CameraTrack, path: str) -> None:
    doc = {"frames": [
        {"yaw": float(track.yaw[i]),
         "position": [float(x) for x in track.position[i]],
         "look_at": [float(x) for x in track.look_at[i]]}
        for i in range(len(track.yaw))
    ]}
    with open(path, "w") as fh:
        json.dump(doc, fh)
