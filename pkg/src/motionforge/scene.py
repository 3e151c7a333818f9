"""Occupancy grids and the local scene perceiver.

The global grid marks reachable cells with 1. A local crop around a subgoal,
yaw-aligned with the character's pelvis and spanning 0 to 1.8 m vertically,
is tokenized into xy patches (z as channels) and encoded as the scene
condition for the diffusion model.

Grid file layout: 16-byte magic ("MFGRID01" zero-padded), little-endian
3 x u32 dims, 3 x f32 origin, f32 cell size, then one byte per cell in
((ix * N_y) + iy) * N_z + iz order. Origin and cell size are kept in f32 so
save/load round trips are bit-exact.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import InvalidInput, ShapeMismatch
from .mesh import TriangleMesh, points_inside, triangle_box_overlap

GRID_MAGIC = b"MFGRID01" + bytes(8)
VERTICAL_EXTENT = 1.8  # meters, local grids always span [0, 1.8]


@dataclass
class OccupancyGrid:
    dims: tuple[int, int, int]
    origin: np.ndarray
    cell_size: float
    data: np.ndarray  # bool, shape dims

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if any(d <= 0 for d in self.dims):
            raise InvalidInput(f"grid dims must be positive, got {self.dims}")
        # f32 storage keeps the binary format round trip exact
        self.origin = np.asarray(self.origin, dtype=np.float32)
        self.cell_size = float(np.float32(self.cell_size))
        if self.cell_size <= 0:
            raise InvalidInput("cell_size must be positive")
        self.data = np.asarray(self.data, dtype=bool).reshape(self.dims)

    def cell_centers(self) -> np.ndarray:
        """(Nx*Ny*Nz, 3) world coordinates in serialization order."""
        nx, ny, nz = self.dims
        ix, iy, iz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz),
                                 indexing="ij")
        idx = np.stack([ix, iy, iz], axis=-1).reshape(-1, 3)
        return self.origin.astype(np.float64) + (idx + 0.5) * self.cell_size

    def sample(self, points: np.ndarray) -> np.ndarray:
        """Reachability at world points; out-of-bounds reads as unreachable."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        rel = (points - self.origin.astype(np.float64)) / self.cell_size
        idx = np.floor(rel).astype(np.int64)
        ok = np.all((idx >= 0) & (idx < np.array(self.dims)), axis=1)
        out = np.zeros(len(points), dtype=bool)
        if ok.any():
            sel = idx[ok]
            out[ok] = self.data[sel[:, 0], sel[:, 1], sel[:, 2]]
        return out


def save_grid(grid: OccupancyGrid, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC)
        fh.write(struct.pack("<3I", *grid.dims))
        fh.write(struct.pack("<3f", *grid.origin.astype(np.float32)))
        fh.write(struct.pack("<f", np.float32(grid.cell_size)))
        fh.write(grid.data.astype(np.uint8).tobytes(order="C"))


def load_grid(path: str) -> OccupancyGrid:
    with open(path, "rb") as fh:
        magic = fh.read(16)
        if magic != GRID_MAGIC:
            raise InvalidInput(f"{path}: not a grid file")
        dims = struct.unpack("<3I", fh.read(12))
        origin = np.frombuffer(fh.read(12), dtype="<f4").astype(np.float32)
        (cell,) = struct.unpack("<f", fh.read(4))
        n = dims[0] * dims[1] * dims[2]
        raw = fh.read(n)
        if len(raw) != n:
            raise InvalidInput(f"{path}: truncated grid data")
    data = np.frombuffer(raw, dtype=np.uint8).astype(bool).reshape(dims)
    return OccupancyGrid(dims, origin, cell, data)


# ---------------------------------------------------------------------------
# voxelization


def voxelize(mesh: TriangleMesh, bounds, cell_size: float) -> OccupancyGrid:
    """Mark cells unreachable when their center is inside the mesh or a
    triangle passes through the cell's interior (exact face touches do not
    block the neighboring cell). Degenerate triangles are skipped with a
    warning; an empty mesh gives an all-reachable grid."""
    lo = np.asarray(bounds[0], dtype=np.float64)
    hi = np.asarray(bounds[1], dtype=np.float64)
    if np.any(hi <= lo):
        raise InvalidInput("bounds max must exceed min")
    dims = tuple(int(np.ceil((hi[i] - lo[i]) / cell_size - 1e-9))
                 for i in range(3))
    grid = OccupancyGrid(dims, lo, cell_size, np.ones(dims, dtype=bool))
    if len(mesh.faces) == 0:
        return grid

    clean, skipped = mesh.drop_degenerate()
    if skipped:
        warnings.warn(f"voxelize: skipped {skipped} degenerate triangles")
    tris = clean.triangles
    if len(tris) == 0:
        return grid
    cell = grid.cell_size
    origin = grid.origin.astype(np.float64)

    # interior: winding number of cell centers, restricted to the mesh AABB
    centers = grid.cell_centers().reshape(*grid.dims, 3)
    mesh_lo = tris.reshape(-1, 3).min(axis=0)
    mesh_hi = tris.reshape(-1, 3).max(axis=0)
    in_aabb = np.all((centers >= mesh_lo) & (centers <= mesh_hi), axis=-1)
    if in_aabb.any():
        inside = points_inside(centers[in_aabb], tris)
        blocked = np.zeros(grid.dims, dtype=bool)
        blocked[in_aabb] = inside
        grid.data &= ~blocked

    # surface: strict triangle/cell overlap around each triangle's AABB
    half = np.full(3, cell / 2.0)
    for tri in tris:
        t_lo = tri.min(axis=0)
        t_hi = tri.max(axis=0)
        i_lo = np.maximum(np.floor((t_lo - origin) / cell).astype(int), 0)
        i_hi = np.minimum(np.floor((t_hi - origin) / cell).astype(int),
                          np.array(grid.dims) - 1)
        for ix in range(i_lo[0], i_hi[0] + 1):
            for iy in range(i_lo[1], i_hi[1] + 1):
                for iz in range(i_lo[2], i_hi[2] + 1):
                    if not grid.data[ix, iy, iz]:
                        continue
                    center = origin + (np.array([ix, iy, iz]) + 0.5) * cell
                    if triangle_box_overlap(tri, center, half):
                        grid.data[ix, iy, iz] = False
    return grid


# ---------------------------------------------------------------------------
# local scene perceiver


@dataclass
class LocalGrid:
    dims: tuple[int, int, int]
    center_xy: np.ndarray
    yaw: float
    cell_size: float
    data: np.ndarray

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.center_xy = np.asarray(self.center_xy, dtype=np.float64)
        if abs(self.dims[2] * self.cell_size - VERTICAL_EXTENT) > 1e-6:
            raise InvalidInput(
                f"local grid must span {VERTICAL_EXTENT} m vertically; "
                f"{self.dims[2]} cells of {self.cell_size} m do not")
        self.data = np.asarray(self.data, dtype=bool).reshape(self.dims)


def query_local_grid(grid: OccupancyGrid, center_xy, yaw: float,
                     local_dims=(32, 32, 18), local_cell=0.1) -> LocalGrid:
    """Yaw-aligned local crop centered on ``center_xy``, vertical [0, 1.8] m.

    Each local cell samples the global grid at its rotated world-space
    center; points outside the global grid read as unreachable.
    """
    nx, ny, nz = (int(d) for d in local_dims)
    center_xy = np.asarray(center_xy, dtype=np.float64)
    u = (np.arange(nx) + 0.5 - nx / 2.0) * local_cell
    v = (np.arange(ny) + 0.5 - ny / 2.0) * local_cell
    z = (np.arange(nz) + 0.5) * local_cell
    uu, vv, zz = np.meshgrid(u, v, z, indexing="ij")
    c, s = np.cos(yaw), np.sin(yaw)
    wx = center_xy[0] + c * uu - s * vv
    wy = center_xy[1] + s * uu + c * vv
    pts = np.stack([wx, wy, zz], axis=-1).reshape(-1, 3)
    data = grid.sample(pts).reshape(nx, ny, nz)
    return LocalGrid((nx, ny, nz), center_xy, float(yaw), float(local_cell), data)


@dataclass
class SceneTokens:
    tokens: np.ndarray  # (n_tokens, p*p*n_z) float64

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.float64)


def patchify(local: LocalGrid, patch_side: int) -> SceneTokens:
    """Row-major xy patches, each flattened with z fastest."""
    nx, ny, nz = local.dims
    p = int(patch_side)
    if nx % p or ny % p:
        raise ShapeMismatch(f"patch side {p} does not divide dims {nx}x{ny}")
    blocks = local.data.reshape(nx // p, p, ny // p, p, nz)
    tokens = blocks.transpose(0, 2, 1, 3, 4).reshape(-1, p * p * nz)
    return SceneTokens(tokens.astype(np.float64))


def depatchify(tokens: SceneTokens, dims, patch_side: int) -> np.ndarray:
    """Inverse of patchify, back to a boolean (nx, ny, nz) array."""
    nx, ny, nz = (int(d) for d in dims)
    p = int(patch_side)
    blocks = tokens.tokens.reshape(nx // p, ny // p, p, p, nz)
    return blocks.transpose(0, 2, 1, 3, 4).reshape(nx, ny, nz).astype(bool)


# ---------------------------------------------------------------------------
# scene encoder


class SceneEncoder:
    """Frozen transformer over patch tokens; mean-pooled embedding."""

    def __init__(self, token_dim: int, width: int = 64, layers: int = 2,
                 heads: int = 4, ffn: int = 128, seed: int = 2024):
        rng = np.random.default_rng(seed)
        self.token_dim = token_dim
        self.width = width
        self.proj = nn.Dense("scene.proj", token_dim, width, rng)
        self.encoder = nn.TransformerEncoder("scene.enc", width, layers, heads,
                                             ffn, dropout=0.0, rng=rng)
        self.head = nn.Dense("scene.head", width, width, rng)
        self.posenc = nn.sinusoidal_positions(4096, width)

    def encode(self, tokens: SceneTokens) -> np.ndarray:
        t = tokens.tokens
        if t.ndim != 2 or t.shape[1] != self.token_dim:
            raise ShapeMismatch(
                f"encoder expects (*, {self.token_dim}) tokens, got {t.shape}")
        x = self.proj.forward(t) + self.posenc[:len(t)]
        h = self.encoder.forward(x)
        return self.head.forward(h.mean(axis=0))


def encode_scene(tokens: SceneTokens, encoder: SceneEncoder) -> np.ndarray:
    return encoder.encode(tokens)
