"""Skeleton model, forward kinematics, 6D rotations, and the CCD IK solver.

The humanoid is a fixed 24-joint chain (pelvis root, three spine links, neck,
head, two four-link arms with clavicles, two four-link legs, and one hand
anchor per wrist). Rotations are stored in the continuous 6D representation
and converted to matrices by Gram-Schmidt.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateRotation, InvalidInput, ShapeMismatch

_EPS = 1e-12


# ---------------------------------------------------------------------------
# rotation helpers


def rot6d_to_matrix(r6: np.ndarray) -> np.ndarray:
    """Gram-Schmidt a 6-vector (two stacked 3-vectors) into a rotation matrix.

    Column 1 is the normalized first vector, column 2 the normalized rejection
    of the second from the first, column 3 their cross product.
    """
    r6 = np.asarray(r6, dtype=np.float64)
    if r6.shape != (6,):
        raise ShapeMismatch(f"expected 6-vector, got shape {r6.shape}")
    a, b = r6[:3], r6[3:]
    na = np.linalg.norm(a)
    if na < 1e-8:
        raise DegenerateRotation("first basis vector has near-zero norm")
    c1 = a / na
    nb = np.linalg.norm(b)
    u = b - (b @ c1) * c1
    nu = np.linalg.norm(u)
    if nb < 1e-8 or nu < 1e-8 * nb:
        raise DegenerateRotation("second basis vector is parallel to the first")
    u = u - (u @ c1) * c1  # second pass keeps c2 orthogonal near parallelism
    c2 = u / np.linalg.norm(u)
    c3 = np.cross(c1, c2)
    return np.stack([c1, c2, c3], axis=1)


def matrix_to_rot6d(m: np.ndarray) -> np.ndarray:
    """First two columns of a rotation matrix, stacked into a 6-vector."""
    m = np.asarray(m, dtype=np.float64)
    return np.concatenate([m[:, 0], m[:, 1]])


def identity_rot6d() -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


def rotvec_to_matrix(v: np.ndarray) -> np.ndarray:
    """Rodrigues' formula."""
    v = np.asarray(v, dtype=np.float64)
    theta = np.linalg.norm(v)
    if theta < 1e-12:
        k = _skew(v)
        return np.eye(3) + k  # first-order; exact enough below 1e-12
    axis = v / theta
    k = _skew(axis)
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


def matrix_to_rotvec(m: np.ndarray) -> np.ndarray:
    """Log map of SO(3), robust near 0 and pi."""
    tr = np.trace(m)
    cos_t = np.clip((tr - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_t)
    w = np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])
    if theta < 1e-7:
        return 0.5 * w
    if theta > np.pi - 1e-6:
        # near pi the off-diagonal differences vanish; recover axis from R + I
        s = (np.diag(m) + 1.0) / 2.0
        axis = np.sqrt(np.maximum(s, 0.0))
        order = np.argsort(-axis)
        i = order[0]
        if axis[i] > 0:
            j, k = (i + 1) % 3, (i + 2) % 3
            axis[j] = (m[i, j] + m[j, i]) / (4.0 * axis[i])
            axis[k] = (m[i, k] + m[k, i]) / (4.0 * axis[i])
        axis /= max(np.linalg.norm(axis), _EPS)
        if w @ axis < 0:
            axis = -axis
        return theta * axis
    return (theta / (2.0 * np.sin(theta))) * w


def _skew(v):
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


# ---------------------------------------------------------------------------
# skeleton / pose


@dataclass(frozen=True)
class Bone:
    name: str
    parent: int | None
    rest_offset: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rest_offset",
                           np.asarray(self.rest_offset, dtype=np.float64))


@dataclass(frozen=True)
class Skeleton:
    bones: tuple[Bone, ...]

    def __post_init__(self):
        roots = [i for i, b in enumerate(self.bones) if b.parent is None]
        if len(roots) != 1 or roots[0] != 0:
            raise InvalidInput("skeleton must have exactly one root at index 0")
        for i, b in enumerate(self.bones):
            if b.parent is not None and not 0 <= b.parent < i:
                raise InvalidInput(
                    f"bone {i} ({b.name}) parent {b.parent} breaks topological order")

    @property
    def joint_count(self) -> int:
        return len(self.bones)

    def depths(self) -> np.ndarray:
        """Topological distance of each bone from the root."""
        d = np.zeros(len(self.bones), dtype=int)
        for i, b in enumerate(self.bones):
            if b.parent is not None:
                d[i] = d[b.parent] + 1
        return d

    def children(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in self.bones]
        for i, b in enumerate(self.bones):
            if b.parent is not None:
                out[b.parent].append(i)
        return out

    def subtree(self, bone: int) -> list[int]:
        """Indices of all strict descendants of ``bone``."""
        kids = self.children()
        out, stack = [], list(kids[bone])
        while stack:
            j = stack.pop()
            out.append(j)
            stack.extend(kids[j])
        return out

    def index_of(self, name: str) -> int:
        for i, b in enumerate(self.bones):
            if b.name == name:
                return i
        raise InvalidInput(f"no bone named {name!r}")


@dataclass
class Pose:
    """Root translation plus per-bone 6D rotations, shape (J, 6)."""

    root_translation: np.ndarray
    bone_rotations: np.ndarray

    def __post_init__(self):
        self.root_translation = np.asarray(self.root_translation, dtype=np.float64)
        self.bone_rotations = np.asarray(self.bone_rotations, dtype=np.float64)

    def copy(self) -> "Pose":
        return Pose(self.root_translation.copy(), self.bone_rotations.copy())

    @staticmethod
    def rest(skeleton: Skeleton, root_translation=(0.0, 0.0, 0.0)) -> "Pose":
        rots = np.tile(identity_rot6d(), (skeleton.joint_count, 1))
        return Pose(np.asarray(root_translation, dtype=np.float64), rots)


_SIDE_CHAINS = {
    "left": ((0.0, 1.0), 1.0),
    "right": ((0.0, -1.0), -1.0),
}


def default_skeleton() -> Skeleton:
    """24-joint humanoid, z-up, facing +x, dimensions in meters."""
    bones: list[Bone] = [Bone("pelvis", None, (0.0, 0.0, 0.0))]

    def add(name, parent_name, offset):
        parent = next(i for i, b in enumerate(bones) if b.name == parent_name)
        bones.append(Bone(name, parent, offset))

    add("spine1", "pelvis", (0.0, 0.0, 0.12))
    add("spine2", "spine1", (0.0, 0.0, 0.12))
    add("spine3", "spine2", (0.0, 0.0, 0.12))
    add("neck", "spine3", (0.0, 0.0, 0.10))
    add("head", "neck", (0.0, 0.0, 0.12))
    for side, (_, sgn) in _SIDE_CHAINS.items():
        add(f"{side}_clavicle", "spine3", (0.0, sgn * 0.08, 0.04))
        add(f"{side}_shoulder", f"{side}_clavicle", (0.0, sgn * 0.12, 0.0))
        add(f"{side}_elbow", f"{side}_shoulder", (0.0, sgn * 0.26, 0.0))
        add(f"{side}_wrist", f"{side}_elbow", (0.0, sgn * 0.25, 0.0))
    for side, (_, sgn) in _SIDE_CHAINS.items():
        add(f"{side}_hip", "pelvis", (0.0, sgn * 0.10, -0.05))
        add(f"{side}_knee", f"{side}_hip", (0.0, 0.0, -0.40))
        add(f"{side}_ankle", f"{side}_knee", (0.0, 0.0, -0.40))
        add(f"{side}_foot", f"{side}_ankle", (0.15, 0.0, -0.05))
    add("left_hand", "left_wrist", (0.0, 0.08, 0.0))
    add("right_hand", "right_wrist", (0.0, -0.08, 0.0))
    return Skeleton(tuple(bones))


PELVIS = 0


def save_skeleton(skeleton: Skeleton, path: str) -> None:
    doc = {"bones": [
        {"name": b.name,
         "parent": None if b.parent is None else skeleton.bones[b.parent].name,
         "offset": [float(x) for x in b.rest_offset]}
        for b in skeleton.bones
    ]}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_skeleton(path: str) -> Skeleton:
    with open(path) as fh:
        doc = json.load(fh)
    names: dict[str, int] = {}
    bones: list[Bone] = []
    for i, entry in enumerate(doc["bones"]):
        parent = entry["parent"]
        if parent is not None:
            if parent not in names:
                raise InvalidInput(
                    f"bone {entry['name']!r} listed before its parent {parent!r}")
            parent = names[parent]
        bones.append(Bone(entry["name"], parent, entry["offset"]))
        names[entry["name"]] = i
    return Skeleton(tuple(bones))


# ---------------------------------------------------------------------------
# forward kinematics


def fk_transforms(skeleton: Skeleton, pose: Pose):
    """World positions (J, 3) and world rotations (J, 3, 3)."""
    j = skeleton.joint_count
    if pose.bone_rotations.shape != (j, 6):
        raise ShapeMismatch(
            f"pose has {pose.bone_rotations.shape} rotations for {j} bones")
    pos = np.zeros((j, 3))
    rot = np.zeros((j, 3, 3))
    for i, bone in enumerate(skeleton.bones):
        local = rot6d_to_matrix(pose.bone_rotations[i])
        if bone.parent is None:
            pos[i] = pose.root_translation
            rot[i] = local
        else:
            p = bone.parent
            pos[i] = pos[p] + rot[p] @ bone.rest_offset
            rot[i] = rot[p] @ local
    return pos, rot


def forward_kinematics(skeleton: Skeleton, pose: Pose) -> np.ndarray:
    """World joint positions, shape (J, 3)."""
    return fk_transforms(skeleton, pose)[0]


def fk_loss_and_grad(skeleton: Skeleton, pose: Pose, targets: np.ndarray,
                     weights: np.ndarray | None = None):
    """Squared position error against per-joint targets, with exact gradients.

    Returns (loss, d_root_translation, d_bone_rotations) where the rotation
    gradient is with respect to the raw 6D parameters.
    """
    j = skeleton.joint_count
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != (j, 3):
        raise ShapeMismatch(f"targets shape {targets.shape} != ({j}, 3)")
    w = np.ones(j) if weights is None else np.asarray(weights, dtype=np.float64)

    pos, rot = fk_transforms(skeleton, pose)
    locals_ = [rot6d_to_matrix(pose.bone_rotations[i]) for i in range(j)]
    diff = pos - targets
    loss = float(np.sum(w[:, None] * diff * diff))

    d_pos = 2.0 * w[:, None] * diff
    d_rot = np.zeros((j, 3, 3))
    d_local6 = np.zeros((j, 6))
    d_root = np.zeros(3)
    for i in reversed(range(j)):
        bone = skeleton.bones[i]
        if bone.parent is None:
            d_root += d_pos[i]
            d_local6[i] = _rot6d_backward(pose.bone_rotations[i], d_rot[i])
        else:
            p = bone.parent
            d_pos[p] += d_pos[i]
            d_rot[p] += np.outer(d_pos[i], bone.rest_offset)
            d_rot[p] += d_rot[i] @ locals_[i].T
            d_local = rot[p].T @ d_rot[i]
            d_local6[i] = _rot6d_backward(pose.bone_rotations[i], d_local)
    return loss, d_root, d_local6


def _rot6d_backward(r6: np.ndarray, d_m: np.ndarray) -> np.ndarray:
    """Gradient of rot6d_to_matrix through the Gram-Schmidt construction."""
    a, b = r6[:3], r6[3:]
    na = np.linalg.norm(a)
    c1 = a / na
    u = b - (b @ c1) * c1
    nu = np.linalg.norm(u)
    c2 = u / nu

    d_c1 = d_m[:, 0].copy()
    d_c2 = d_m[:, 1].copy()
    d_c3 = d_m[:, 2]
    # c3 = c1 x c2
    d_c1 += np.cross(c2, d_c3)
    d_c2 += np.cross(d_c3, c1)
    # c2 = u / |u|
    d_u = (d_c2 - c2 * (c2 @ d_c2)) / nu
    # u = b - (b . c1) c1
    d_b = d_u - c1 * (c1 @ d_u)
    d_c1 += -(d_u @ c1) * b - (b @ c1) * d_u
    # c1 = a / |a|
    d_a = (d_c1 - c1 * (c1 @ d_c1)) / na
    return np.concatenate([d_a, d_b])


# ---------------------------------------------------------------------------
# pose estimation / fitting


def estimate_pose_from_positions(skeleton: Skeleton,
                                 positions: np.ndarray) -> Pose:
    """Closed-form pose whose FK best matches the given joint positions.

    Each bone's world rotation is aligned so its rest offsets to children map
    onto the observed directions (two-vector alignment for one child, Kabsch
    for several, parent's rotation for leaves). Exact for FK-consistent data;
    twist about single-child offsets is unobservable from positions and left
    at zero.
    """
    positions = np.asarray(positions, dtype=np.float64)
    j = skeleton.joint_count
    if positions.shape != (j, 3):
        raise ShapeMismatch(f"positions shape {positions.shape} != ({j}, 3)")
    kids = skeleton.children()
    world = np.zeros((j, 3, 3))
    rot6 = np.zeros((j, 6))
    for i in range(j):
        parent = skeleton.bones[i].parent
        pw = world[parent] if parent is not None else np.eye(3)
        if kids[i]:
            rest = np.stack([skeleton.bones[c].rest_offset for c in kids[i]])
            obs = np.stack([positions[c] - positions[i] for c in kids[i]])
            world[i] = _best_rotation(rest, obs)
        else:
            world[i] = pw
        rot6[i] = matrix_to_rot6d(pw.T @ world[i])
    return Pose(positions[PELVIS].copy(), rot6)


@dataclass
class FitResult:
    pose: Pose
    loss: float
    max_joint_error: float
    iterations: int


def fit_pose(skeleton: Skeleton, targets: np.ndarray, init: Pose,
             max_iters: int = 300, lr: float = 0.05, tol: float = 1e-4,
             alignment_candidate: bool = True) -> FitResult:
    """Adam descent on the squared FK position error, from ``init``.

    When ``alignment_candidate`` is set, the closed-form alignment pose is
    used instead of ``init`` if it starts with a lower loss (gradient descent
    alone stalls in local minima when ``init`` is far from the data). Raises
    OptimizationDiverged after 10 consecutive loss increases.
    """
    from .errors import OptimizationDiverged
    from .nn import Adam

    targets = np.asarray(targets, dtype=np.float64)

    def loss_of(p: Pose) -> float:
        return fk_loss_and_grad(skeleton, p, targets)[0]

    pose = init.copy()
    if alignment_candidate:
        cand = estimate_pose_from_positions(skeleton, targets)
        if loss_of(cand) < loss_of(pose):
            pose = cand

    opt = Adam([("root", pose.root_translation), ("rot", pose.bone_rotations)],
               lr=lr)
    best_pose, best_loss = pose.copy(), loss_of(pose)
    increases = 0
    prev = best_loss
    it = 0
    for it in range(1, max_iters + 1):
        loss, d_root, d_rot = fk_loss_and_grad(skeleton, pose, targets)
        if loss < best_loss:
            best_loss, best_pose = loss, pose.copy()
        increases = increases + 1 if loss > prev else 0
        if increases >= 10:
            raise OptimizationDiverged(
                f"fit loss rose for {increases} consecutive steps")
        prev = loss
        err = np.linalg.norm(
            forward_kinematics(skeleton, pose) - targets, axis=1).max()
        if err < tol:
            best_loss, best_pose = loss, pose.copy()
            break
        opt.lr = lr * (0.01 ** (it / max_iters))
        opt.step({"root": d_root, "rot": d_rot})
    final_err = np.linalg.norm(
        forward_kinematics(skeleton, best_pose) - targets, axis=1).max()
    return FitResult(best_pose, best_loss, float(final_err), it)


# ---------------------------------------------------------------------------
# CCD IK


@dataclass(frozen=True)
class RotationLimits:
    """Per-bone maximum rotation change per IK sweep, radians."""

    max_step: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "max_step",
                           np.asarray(self.max_step, dtype=np.float64))
        if np.any(self.max_step < 0):
            raise InvalidInput("rotation limits must be non-negative")

    @staticmethod
    def default(skeleton: Skeleton, near_root=0.05, at_tip=0.25) -> "RotationLimits":
        """Linear ramp with topological depth: root-adjacent bones move least."""
        d = skeleton.depths().astype(np.float64)
        span = max(d.max(), 1.0)
        return RotationLimits(near_root + (at_tip - near_root) * d / span)


@dataclass
class IKResult:
    pose: Pose
    residuals: dict[int, float]
    iterations: int
    converged: bool
    # per-sweep list of per-bone applied rotation angles (radians)
    sweep_angles: list[np.ndarray] = field(default_factory=list)


def _best_rotation(pairs_a: np.ndarray, pairs_b: np.ndarray) -> np.ndarray:
    """Rotation minimizing sum |R a_i - b_i|^2 (Kabsch; two-vector case exact)."""
    if len(pairs_a) == 1:
        a, b = pairs_a[0], pairs_b[0]
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na < _EPS or nb < _EPS:
            return np.eye(3)
        axis = np.cross(a, b)
        s = np.linalg.norm(axis)
        c = float(a @ b)
        if s < _EPS:
            return np.eye(3)  # aligned or anti-parallel; leave anti-parallel alone
        return rotvec_to_matrix(axis / s * np.arctan2(s, c))
    m = pairs_b.T @ pairs_a
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def ccd_ik_solve(skeleton: Skeleton, initial_pose: Pose,
                 targets: dict[int, np.ndarray], limits: RotationLimits,
                 max_iters: int = 50, tol: float = 1e-3,
                 reg_weight: float = 0.1, trace: bool = False) -> IKResult:
    """Cyclic coordinate descent with per-bone step clipping and damping.

    Bones are visited from the chain tips toward the root once per sweep.
    Each visit applies the error-minimizing rotation for all targets in the
    bone's subtree (Kabsch for several, two-vector alignment for one),
    damped by ``reg_weight`` and clipped to the bone's per-sweep limit.
    A target on the root joint is satisfied by translating the root.
    Unreachable targets yield a best-effort pose; residuals are always
    reported.
    """
    if tol <= 0:
        raise InvalidInput("tol must be positive")
    j = skeleton.joint_count
    for t in targets:
        if not 0 <= t < j:
            raise InvalidInput(f"target joint {t} out of range")
    tgt = {k: np.asarray(v, dtype=np.float64) for k, v in targets.items()}

    local = np.stack([rot6d_to_matrix(initial_pose.bone_rotations[i])
                      for i in range(j)])
    root_t = initial_pose.root_translation.copy()
    lam = float(reg_weight)

    # bones that can move some target: strict descendants intersect targets
    subtree_targets = [
        [t for t in tgt if t in set(skeleton.subtree(i))]
        for i in range(j)
    ]
    order = sorted(range(j), key=lambda i: -skeleton.depths()[i])
    active = [i for i in order if subtree_targets[i]]

    def fk_from(local_mats, root):
        pos = np.zeros((j, 3))
        rot = np.zeros((j, 3, 3))
        for i, bone in enumerate(skeleton.bones):
            if bone.parent is None:
                pos[i] = root
                rot[i] = local_mats[i]
            else:
                p = bone.parent
                pos[i] = pos[p] + rot[p] @ bone.rest_offset
                rot[i] = rot[p] @ local_mats[i]
        return pos, rot

    def residuals(pos):
        return {t: float(np.linalg.norm(pos[t] - v)) for t, v in tgt.items()}

    pos, rot = fk_from(local, root_t)
    res = residuals(pos)
    sweeps: list[np.ndarray] = []
    iters = 0
    converged = all(r < tol for r in res.values())

    while not converged and iters < max_iters:
        angles = np.zeros(j)
        for i in active:
            joints = subtree_targets[i]
            pivot = pos[i]
            a = np.stack([pos[t] - pivot for t in joints])
            b = np.stack([tgt[t] - pivot for t in joints])
            q = _best_rotation(a, b)
            parent = skeleton.bones[i].parent
            pr = rot[parent] if parent is not None else np.eye(3)
            delta = matrix_to_rotvec(pr.T @ q @ pr)
            # damped update: shrink each step so the solution stays close to
            # the warm start; a standing pull toward the initial pose would
            # leave a steady-state residual and never reach tol
            delta = delta / (1.0 + lam)
            ang = np.linalg.norm(delta)
            lim = limits.max_step[i]
            if ang > lim:
                delta = delta * (lim / ang)
                ang = lim
            if ang > 0.0:
                local[i] = rotvec_to_matrix(delta) @ local[i]
                pos, rot = fk_from(local, root_t)
            angles[i] = ang
        if PELVIS in tgt:
            root_t = root_t + (tgt[PELVIS] - pos[PELVIS]) / (1.0 + lam)
            pos, rot = fk_from(local, root_t)
        iters += 1
        if trace:
            sweeps.append(angles)
        res = residuals(pos)
        converged = all(r < tol for r in res.values())

    rotations = np.stack([matrix_to_rot6d(local[i]) for i in range(j)])
    return IKResult(Pose(root_t, rotations), res, iters, converged, sweeps)
