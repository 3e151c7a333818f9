"""Triangle meshes: ASCII OBJ loading and the geometry kernels shared by
voxelization, contact annotation, and camera visibility."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput


@dataclass
class TriangleMesh:
    vertices: np.ndarray  # (V, 3) float64
    faces: np.ndarray     # (F, 3) int

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)

    @property
    def triangles(self) -> np.ndarray:
        """(F, 3, 3): per-face vertex coordinates."""
        return self.vertices[self.faces]

    def drop_degenerate(self, area_eps: float = 1e-12):
        """Mesh without zero-area faces, plus how many were removed."""
        tri = self.triangles
        n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        keep = np.linalg.norm(n, axis=1) > area_eps
        removed = int((~keep).sum())
        return TriangleMesh(self.vertices, self.faces[keep]), removed


def load_obj(path: str) -> TriangleMesh:
    """ASCII OBJ with triangular faces only."""
    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                vertices.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                if len(idx) != 3:
                    raise InvalidInput(
                        f"{path}:{ln}: only triangular faces are supported")
                faces.append([i - 1 if i > 0 else len(vertices) + i for i in idx])
    return TriangleMesh(np.array(vertices, dtype=np.float64).reshape(-1, 3),
                        np.array(faces, dtype=np.int64).reshape(-1, 3))


def save_obj(mesh: TriangleMesh, path: str) -> None:
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


# ---------------------------------------------------------------------------
# ray casting (Moller-Trumbore, vectorized over triangles)


def ray_hits(origin: np.ndarray, direction: np.ndarray, triangles: np.ndarray,
             eps: float = 1e-12) -> np.ndarray:
    """Ray parameters t >= 0 of intersections with each triangle (inf = miss)."""
    origin = np.asarray(origin, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    a = triangles[:, 0]
    e1 = triangles[:, 1] - a
    e2 = triangles[:, 2] - a
    p = np.cross(direction[None, :], e2)
    det = np.einsum("ij,ij->i", e1, p)
    ok = np.abs(det) > eps
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = origin[None, :] - a
    u = np.einsum("ij,ij->i", s, p) * inv
    q = np.cross(s, e1)
    v = np.einsum("j,ij->i", direction, q) * inv
    t = np.einsum("ij,ij->i", e2, q) * inv
    hit = ok & (u >= -eps) & (v >= -eps) & (u + v <= 1.0 + eps) & (t > eps)
    return np.where(hit, t, np.inf)


def first_hit(origin, direction, triangles):
    """(t, point) of the nearest intersection, or (inf, None)."""
    ts = ray_hits(origin, direction, triangles)
    i = int(np.argmin(ts))
    t = ts[i]
    if not np.isfinite(t):
        return np.inf, None
    return float(t), np.asarray(origin) + t * np.asarray(direction)


# ---------------------------------------------------------------------------
# point-in-mesh via winding number (Van Oosterom-Strackee solid angles)


def winding_numbers(points: np.ndarray, triangles: np.ndarray,
                    chunk: int = 512) -> np.ndarray:
    """Generalized winding number of each point; ~1 inside a watertight mesh."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    out = np.zeros(len(points))
    for lo in range(0, len(points), chunk):
        p = points[lo:lo + chunk]
        a = triangles[None, :, 0] - p[:, None]
        b = triangles[None, :, 1] - p[:, None]
        c = triangles[None, :, 2] - p[:, None]
        la = np.linalg.norm(a, axis=2)
        lb = np.linalg.norm(b, axis=2)
        lc = np.linalg.norm(c, axis=2)
        num = np.einsum("pij,pij->pi", a, np.cross(b, c))
        den = (la * lb * lc + np.einsum("pij,pij->pi", a, b) * lc
               + np.einsum("pij,pij->pi", b, c) * la
               + np.einsum("pij,pij->pi", c, a) * lb)
        out[lo:lo + chunk] = np.arctan2(num, den).sum(axis=1) / (2.0 * np.pi)
    return out


def points_inside(points: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    if len(triangles) == 0:
        return np.zeros(len(np.atleast_2d(points)), dtype=bool)
    return np.abs(winding_numbers(points, triangles)) > 0.5


# ---------------------------------------------------------------------------
# closest point on a triangle mesh (Ericson's region test, vectorized)


def closest_points_on_triangles(p: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Closest point to p on each triangle, shape (F, 3)."""
    p = np.asarray(p, dtype=np.float64)
    a, b, c = triangles[:, 0], triangles[:, 1], triangles[:, 2]
    ab = b - a
    ac = c - a
    ap = p[None, :] - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p[None, :] - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p[None, :] - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    out = np.empty_like(a)
    # vertex regions
    m = (d1 <= 0) & (d2 <= 0)
    out[m] = a[m]
    m2 = (d3 >= 0) & (d4 <= d3) & ~m
    out[m2] = b[m2]
    done = m | m2
    m3 = (d6 >= 0) & (d5 <= d6) & ~done
    out[m3] = c[m3]
    done |= m3
    # edge AB
    m4 = (vc <= 0) & (d1 >= 0) & (d3 <= 0) & ~done
    t = np.where(np.abs(d1 - d3) > 1e-300, d1 / np.where(m4, d1 - d3, 1.0), 0.0)
    out[m4] = a[m4] + t[m4, None] * ab[m4]
    done |= m4
    # edge AC
    m5 = (vb <= 0) & (d2 >= 0) & (d6 <= 0) & ~done
    t = np.where(np.abs(d2 - d6) > 1e-300, d2 / np.where(m5, d2 - d6, 1.0), 0.0)
    out[m5] = a[m5] + t[m5, None] * ac[m5]
    done |= m5
    # edge BC
    m6 = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0) & ~done
    denom = (d4 - d3) + (d5 - d6)
    t = np.where(np.abs(denom) > 1e-300, (d4 - d3) / np.where(m6, denom, 1.0), 0.0)
    out[m6] = b[m6] + t[m6, None] * (c[m6] - b[m6])
    done |= m6
    # interior
    mi = ~done
    denom = va + vb + vc
    safe = np.where(np.abs(denom) > 1e-300, denom, 1.0)
    v = vb / safe
    w = vc / safe
    out[mi] = a[mi] + v[mi, None] * ab[mi] + w[mi, None] * ac[mi]
    return out


def closest_point_on_mesh(p: np.ndarray, triangles: np.ndarray):
    """(closest point, distance) over all triangles."""
    cands = closest_points_on_triangles(p, triangles)
    d = np.linalg.norm(cands - np.asarray(p)[None, :], axis=1)
    i = int(np.argmin(d))
    return cands[i], float(d[i])


def surface_distances(points: np.ndarray, triangles: np.ndarray,
                      chunk: int = 256) -> np.ndarray:
    """Distance from each point to the mesh surface (unsigned)."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    out = np.empty(len(points))
    for i, p in enumerate(points):
        out[i] = closest_point_on_mesh(p, triangles)[1]
    return out


# ---------------------------------------------------------------------------
# triangle-box overlap (SAT), used by the voxelizer


def triangle_box_overlap(tri: np.ndarray, center: np.ndarray,
                         half: np.ndarray, eps: float = 1e-9) -> bool:
    """Strict positive-measure overlap: exact surface touches do not count."""
    v = tri - center[None, :]
    # box axes
    for i in range(3):
        if v[:, i].min() >= half[i] - eps or v[:, i].max() <= -half[i] + eps:
            return False
    e = np.array([v[1] - v[0], v[2] - v[1], v[0] - v[2]])
    n = np.cross(e[0], e[1])
    nn = np.linalg.norm(n)
    if nn < 1e-300:
        return False
    d = n @ v[0]
    r = np.abs(n) @ half
    if abs(d) >= r - eps * nn:
        return False
    # 9 cross-product axes
    for i in range(3):
        for ax in range(3):
            axis = np.zeros(3)
            axis[ax] = 1.0
            sep = np.cross(e[i], axis)
            ns = np.linalg.norm(sep)
            if ns < 1e-300:
                continue
            proj = v @ sep
            r = np.abs(sep) @ half
            if proj.min() >= r - eps * ns or proj.max() <= -r + eps * ns:
                return False
    return True


def make_box(lo, hi) -> TriangleMesh:
    """Axis-aligned box as 12 triangles with outward orientation."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    v = np.array([
        [x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
        [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1],
    ])
    f = np.array([
        [0, 2, 1], [0, 3, 2],  # bottom (z = z0), normal -z
        [4, 5, 6], [4, 6, 7],  # top
        [0, 1, 5], [0, 5, 4],  # y = y0
        [2, 3, 7], [2, 7, 6],  # y = y1
        [1, 2, 6], [1, 6, 5],  # x = x1
        [3, 0, 4], [3, 4, 7],  # x = x0
    ])
    return TriangleMesh(v, f)
