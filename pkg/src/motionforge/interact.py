"""Dynamic-object pose refinement, contact annotation, and penetration
statistics over a capsule proxy body surface.

The proxy surface replaces the full-body mesh: one capsule per bone (a
sphere at the root), 32 vertices each with outward radial normals. A vertex
is in contact when it sits inside the object mesh, or within a distance
threshold while its normal points at the closest mesh point within 60
degrees. Penetration depth of an interior vertex is its distance to the
mesh surface.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass

import numpy as np

from . import kinematics as kin
from .errors import InvalidInput, ShapeMismatch
from .mesh import (TriangleMesh, closest_point_on_mesh, points_inside,
                   surface_distances)


@dataclass
class ObjectTrack:
    points: np.ndarray        # (N, 3) canonical point set
    rotations: np.ndarray     # (L, 3, 3)
    translations: np.ndarray  # (L, 3)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.rotations = np.asarray(self.rotations, dtype=np.float64)
        self.translations = np.asarray(self.translations, dtype=np.float64)
        if self.rotations.shape[1:] != (3, 3) \
                or self.translations.shape != (len(self.rotations), 3):
            raise ShapeMismatch("track needs (L,3,3) rotations, (L,3) translations")
        eye = np.eye(3)
        for i, r in enumerate(self.rotations):
            if np.abs(r.T @ r - eye).max() > 1e-6 or np.linalg.det(r) < 0:
                raise InvalidInput(f"frame {i}: rotation is not orthonormal")

    def __len__(self) -> int:
        return len(self.rotations)

    def world_points(self, frame: int) -> np.ndarray:
        return self.points @ self.rotations[frame].T + self.translations[frame]

    def copy(self) -> "ObjectTrack":
        return ObjectTrack(self.points.copy(), self.rotations.copy(),
                           self.translations.copy())


def save_track(track: ObjectTrack, path: str) -> None:
    doc = {"frames": [
        {"R": [float(x) for x in track.rotations[i].reshape(9)],
         "T": [float(x) for x in track.translations[i]]}
        for i in range(len(track))
    ]}
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_track(path: str, points: np.ndarray) -> ObjectTrack:
    with open(path) as fh:
        doc = json.load(fh)
    rs = np.array([np.reshape(f["R"], (3, 3)) for f in doc["frames"]])
    ts = np.array([f["T"] for f in doc["frames"]], dtype=np.float64)
    return ObjectTrack(points, rs, ts)


# ---------------------------------------------------------------------------
# capsule proxy surface


@dataclass
class BodySurface:
    vertices: np.ndarray  # (V, 3)
    normals: np.ndarray   # (V, 3) unit

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.normals = np.asarray(self.normals, dtype=np.float64)
        if self.vertices.shape != self.normals.shape:
            raise ShapeMismatch("vertices and normals must align")


_CAPSULE_RINGS = 4
_CAPSULE_SIDES = 8  # 4 * 8 = 32 vertices per bone

DEFAULT_BONE_RADIUS = 0.05


def bone_radii(skeleton: kin.Skeleton) -> np.ndarray:
    """Thicker torso, thinner limbs."""
    r = np.full(skeleton.joint_count, DEFAULT_BONE_RADIUS)
    for i, b in enumerate(skeleton.bones):
        if "spine" in b.name or b.name == "pelvis":
            r[i] = 0.10
        elif "hip" in b.name or "knee" in b.name:
            r[i] = 0.07
        elif "hand" in b.name or "foot" in b.name:
            r[i] = 0.03
    return r


def capsule_surface(skeleton: kin.Skeleton, joints: np.ndarray,
                    radii: np.ndarray | None = None) -> BodySurface:
    """32 ring vertices per bone segment (parent to joint; a ball of rings
    at the root), radial outward normals."""
    joints = np.asarray(joints, dtype=np.float64)
    if joints.shape != (skeleton.joint_count, 3):
        raise ShapeMismatch("joints must be (J, 3)")
    radii = bone_radii(skeleton) if radii is None else radii
    verts, norms = [], []
    for i, bone in enumerate(skeleton.bones):
        p1 = joints[i]
        p0 = joints[bone.parent] if bone.parent is not None else p1
        axis = p1 - p0
        n = np.linalg.norm(axis)
        if n < 1e-9:
            axis = np.array([0.0, 0.0, 1.0])
            n = 1.0
        axis = axis / n
        ref = np.array([1.0, 0.0, 0.0])
        if abs(axis @ ref) > 0.9:
            ref = np.array([0.0, 1.0, 0.0])
        u = np.cross(axis, ref)
        u /= np.linalg.norm(u)
        v = np.cross(axis, u)
        for ring in range(_CAPSULE_RINGS):
            f = ring / (_CAPSULE_RINGS - 1)
            center = p0 + f * (p1 - p0)
            for s in range(_CAPSULE_SIDES):
                ang = 2.0 * np.pi * s / _CAPSULE_SIDES
                d = np.cos(ang) * u + np.sin(ang) * v
                verts.append(center + radii[i] * d)
                norms.append(d)
    return BodySurface(np.asarray(verts), np.asarray(norms))


# ---------------------------------------------------------------------------
# contact annotation


@dataclass
class ContactSet:
    """Per-frame boolean contact flags, shape (frames, vertices)."""

    flags: np.ndarray

    def __post_init__(self):
        self.flags = np.atleast_2d(np.asarray(self.flags, dtype=bool))


def annotate_contacts(surface: BodySurface, mesh: TriangleMesh,
                      dist_threshold: float = 0.02,
                      angle_threshold_deg: float = 60.0) -> np.ndarray:
    """Per-vertex contact flags against one object mesh.

    Contact holds when the vertex is inside the mesh, or within the distance
    threshold with its outward normal within the angle threshold of the
    direction to the closest mesh point.
    """
    tris = mesh.triangles
    v = surface.vertices
    out = points_inside(v, tris).copy()
    cos_limit = np.cos(np.deg2rad(angle_threshold_deg))
    for i in range(len(v)):
        if out[i]:
            continue
        closest, d = closest_point_on_mesh(v[i], tris)
        if d > dist_threshold or d == 0.0:
            continue
        toward = (closest - v[i]) / d
        if surface.normals[i] @ toward > cos_limit:
            out[i] = True
    return out


def save_contacts(contacts: ContactSet, path: str) -> None:
    doc = {"frames": [
        base64.b64encode(np.packbits(row).tobytes()).decode("ascii")
        for row in contacts.flags
    ], "vertices": int(contacts.flags.shape[1])}
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_contacts(path: str) -> ContactSet:
    with open(path) as fh:
        doc = json.load(fh)
    n = int(doc["vertices"])
    rows = [np.unpackbits(np.frombuffer(base64.b64decode(s), dtype=np.uint8),
                          count=n).astype(bool) for s in doc["frames"]]
    return ContactSet(np.stack(rows) if rows else np.zeros((0, n), dtype=bool))


# ---------------------------------------------------------------------------
# penetration statistics


@dataclass
class PenetrationStats:
    max: np.ndarray     # (frames,)
    mean: np.ndarray
    median: np.ndarray


def penetration_depths(vertices: np.ndarray, mesh: TriangleMesh) -> np.ndarray:
    """Distance to the surface for vertices inside the mesh, else 0."""
    tris = mesh.triangles
    inside = points_inside(vertices, tris)
    depths = np.zeros(len(vertices))
    if inside.any():
        depths[inside] = surface_distances(vertices[inside], tris)
    return depths


def penetration_stats(frame_vertices, mesh: TriangleMesh) -> PenetrationStats:
    """Per-frame max/mean/median penetration depth over all vertices."""
    mx, mn, md = [], [], []
    for verts in frame_vertices:
        d = penetration_depths(np.asarray(verts, dtype=np.float64), mesh)
        mx.append(d.max() if len(d) else 0.0)
        mn.append(d.mean() if len(d) else 0.0)
        md.append(float(np.median(d)) if len(d) else 0.0)
    return PenetrationStats(np.asarray(mx), np.asarray(mn), np.asarray(md))


def cumulative_fraction(values: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """Fraction of frames whose statistic falls below each threshold."""
    values = np.asarray(values, dtype=np.float64)
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if len(values) == 0:
        return np.ones_like(thresholds)
    return np.array([(values < th).mean() for th in thresholds])


# ---------------------------------------------------------------------------
# object-pose refinement


def _hand_distances(track: ObjectTrack, hands: np.ndarray,
                    frames: np.ndarray) -> np.ndarray:
    out = np.empty(len(frames))
    for j, f in enumerate(frames):
        w = track.world_points(int(f))
        out[j] = np.linalg.norm(w - hands[int(f)], axis=1).min()
    return out


def refine_object_track(hand_positions: np.ndarray, track: ObjectTrack,
                        grasp_frames, max_iters: int = 200,
                        step: float = 0.02) -> ObjectTrack:
    """Minimize the variance of the hand-to-object distance over grasp
    frames by adjusting per-frame translations.

    Rotations are carried over from the input track unchanged; only grasped
    frames move, and a step is applied only when it lowers the variance, so
    the objective never increases.
    """
    hands = np.asarray(hand_positions, dtype=np.float64)
    frames = np.asarray(sorted(set(int(f) for f in grasp_frames)))
    if len(frames) == 0:
        raise InvalidInput("empty grasp range")
    if frames[0] < 0 or frames[-1] >= len(track):
        raise InvalidInput("grasp frames outside the track")
    out = track.copy()

    def variance():
        d = _hand_distances(out, hands, frames)
        return float(d.var()), d

    var, d = variance()
    size = step
    for _ in range(max_iters):
        if var < 1e-14 or size < 1e-6:
            break
        mean = d.mean()
        grad = np.zeros((len(frames), 3))
        for j, f in enumerate(frames):
            w = out.world_points(int(f))
            dists = np.linalg.norm(w - hands[int(f)], axis=1)
            i = int(np.argmin(dists))
            if dists[i] < 1e-12:
                continue
            u = (w[i] - hands[int(f)]) / dists[i]
            grad[j] = 2.0 * (d[j] - mean) / len(frames) * u
        norm = np.linalg.norm(grad)
        if norm < 1e-14:
            break
        trial = out.copy()
        for j, f in enumerate(frames):
            trial.translations[int(f)] -= size * grad[j] / norm
        new_d = _hand_distances(trial, hands, frames)
        new_var = float(new_d.var())
        if new_var < var:
            out, var, d = trial, new_var, new_d
            size *= 1.2
        else:
            size *= 0.5
    return out
