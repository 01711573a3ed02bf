"""Procedural test scenes: analytic TSDFs of planes, spheres and furnished box rooms."""

from __future__ import annotations

import numpy as np

from .geometry import TriangleMesh
from .scene import DEFAULT_CHUNK, GridMeta, Scene

_BOX_FACES = np.array([
    [0, 2, 1], [0, 3, 2],  # z- (bottom)
    [4, 5, 6], [4, 6, 7],  # z+ (top)
    [0, 1, 5], [0, 5, 4],  # y-
    [2, 3, 7], [2, 7, 6],  # y+
    [1, 2, 6], [1, 6, 5],  # x+
    [0, 4, 7], [0, 7, 3],  # x-
])


def box_mesh(lo, hi, color=(200, 200, 200)) -> TriangleMesh:
    """Closed, outward-oriented box."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    v = np.array([
        [lo[0], lo[1], lo[2]], [hi[0], lo[1], lo[2]], [hi[0], hi[1], lo[2]], [lo[0], hi[1], lo[2]],
        [lo[0], lo[1], hi[2]], [hi[0], lo[1], hi[2]], [hi[0], hi[1], hi[2]], [lo[0], hi[1], hi[2]],
    ])
    return TriangleMesh(v, _BOX_FACES.copy(), np.tile(np.asarray(color, np.uint8), (8, 1)))


def merge_meshes(meshes) -> TriangleMesh:
    verts, faces, colors, off = [], [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + off)
        colors.append(m.vertex_colors)
        off += len(m.vertices)
    return TriangleMesh(np.concatenate(verts), np.concatenate(faces), np.concatenate(colors))


def _grid_points(meta: GridMeta) -> np.ndarray:
    axes = [np.arange(n) for n in meta.dims]
    idx = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return meta.world(idx)


def scene_from_sdf(meta: GridMeta, sdf_m: np.ndarray, color: np.ndarray, trunc: float = 3.0) -> Scene:
    """Fully observed scene from a metric signed distance array."""
    tsdf = np.clip(sdf_m / meta.voxel_size, -trunc, trunc).astype(np.float32)
    color = np.where((np.abs(tsdf) < trunc)[..., None], color, 0).astype(np.uint8)
    return Scene(meta, tsdf, color, np.zeros(meta.dims, bool), np.ones(meta.dims, bool), trunc)


def plane_scene(dims=(16, 16, 16), height: float = 7.3, axis: int = 2, trunc: float = 3.0,
                voxel_size: float = 0.02) -> Scene:
    """Horizontal plane ``coord[axis] = height`` (voxel units), matter below."""
    meta = GridMeta(dims, voxel_size, (0.0, 0.0, 0.0))
    coord = np.indices(dims)[axis].astype(np.float64)
    sdf = (coord - height) * voxel_size
    color = np.zeros(tuple(dims) + (3,), np.uint8)
    color[..., 0] = 180
    color[..., 1] = (np.indices(dims)[0] * 8 % 256)
    color[..., 2] = 60
    return scene_from_sdf(meta, sdf, color, trunc)


def sphere_scene(radius_vox: float = 10.0, pad: int = 5, trunc: float = 3.0, voxel_size: float = 0.02,
                 center_offset=(0.3, 0.1, 0.2), color=(220, 120, 40)) -> Scene:
    n = int(np.ceil(2 * radius_vox)) + 2 * pad
    meta = GridMeta((n, n, n), voxel_size, (0.0, 0.0, 0.0))
    c = (np.array([n / 2.0] * 3) + np.asarray(center_offset)) * voxel_size
    sdf = np.linalg.norm(_grid_points(meta) - c, axis=-1) - radius_vox * voxel_size
    col = np.broadcast_to(np.asarray(color, np.uint8), (n, n, n, 3))
    return scene_from_sdf(meta, sdf, col, trunc)


def sphere_center(scene: Scene, center_offset=(0.3, 0.1, 0.2)) -> np.ndarray:
    n = scene.dims[0]
    return (np.array([n / 2.0] * 3) + np.asarray(center_offset)) * scene.meta.voxel_size + np.asarray(scene.meta.origin)


def _box_sdf(p: np.ndarray, lo, hi) -> np.ndarray:
    c = (np.asarray(lo) + np.asarray(hi)) / 2
    h = (np.asarray(hi) - np.asarray(lo)) / 2
    q = np.abs(p - c) - h
    outside = np.linalg.norm(np.maximum(q, 0), axis=-1)
    inside = np.minimum(q.max(axis=-1), 0)
    return outside + inside


def room_boxes(rng: np.random.Generator, extent) -> list[tuple[np.ndarray, np.ndarray, tuple[int, int, int]]]:
    """Floor, two walls and 2-5 furniture boxes inside a room of the given world extent (z up)."""
    ex, ey, ez = extent
    t = 0.08
    boxes = [
        (np.array([0, 0, 0]), np.array([ex, ey, t]), (150, 110, 70)),  # floor
        (np.array([0, 0, t]), np.array([t, ey, ez]), (210, 210, 200)),  # wall x-
        (np.array([t, 0, t]), np.array([ex, t, ez]), (190, 200, 215)),  # wall y-
    ]
    for _ in range(int(rng.integers(2, 6))):
        size = rng.uniform([0.12, 0.12, 0.06], [0.4, 0.4, 0.35]) * np.array([ex, ey, ez])
        lo_xy = rng.uniform([t, t], np.maximum([ex - size[0], ey - size[1]], t))
        lo = np.array([lo_xy[0], lo_xy[1], t])
        col = tuple(int(c) for c in rng.integers(30, 250, size=3))
        boxes.append((lo, lo + size, col))
    return boxes


def room_scene(rng: np.random.Generator, dims=(64, 64, 128), voxel_size: float = 0.02, trunc: float = 3.0,
               checker: float = 0.16) -> Scene:
    """Procedurally furnished box room filling the grid, z up.

    The floor carries a checker pattern so renders have color edges.
    """
    meta = GridMeta(dims, voxel_size, (0.0, 0.0, 0.0))
    p = _grid_points(meta)
    extent = np.asarray(dims) * voxel_size
    boxes = room_boxes(rng, extent)
    sdfs = np.stack([_box_sdf(p, lo, hi) for lo, hi, _ in boxes])
    nearest = np.argmin(sdfs, axis=0)
    sdf = np.take_along_axis(sdfs, nearest[None], axis=0)[0]
    palette = np.array([c for _, _, c in boxes], dtype=np.int32)
    color = palette[nearest]
    cell = (np.floor(p[..., 0] / checker) + np.floor(p[..., 1] / checker)).astype(int) % 2
    on_floor = (nearest == 0)
    color[on_floor] = np.where(cell[on_floor, None] == 1, color[on_floor], color[on_floor] // 2)
    return scene_from_sdf(meta, sdf, color, trunc)


def room_scenes(n: int, seed: int = 0, dims=DEFAULT_CHUNK, **kw) -> list[Scene]:
    rng = np.random.default_rng(seed)
    return [room_scene(rng, dims, **kw) for _ in range(n)]


def room_mesh(rng: np.random.Generator, extent=(1.28, 1.28, 1.6), gap: float = 0.01) -> TriangleMesh:
    """Watertight multi-box room mesh; pieces are separated by ``gap`` so none overlap."""
    ex, ey, ez = extent
    t = 0.08
    parts = [
        box_mesh([0, 0, 0], [ex, ey, t], (150, 110, 70)),
        box_mesh([0, 0, t + gap], [t, ey, ez], (210, 210, 200)),
        box_mesh([t + gap, 0, t + gap], [ex, t, ez], (190, 200, 215)),
    ]
    lo_min = t + gap + 0.05
    half = np.array([(ex - lo_min) / 2, (ey - lo_min) / 2])
    # one piece per floor quadrant keeps pieces disjoint
    quadrants = rng.permutation(4)[: int(rng.integers(2, 4))]
    for qd in quadrants:
        q0 = lo_min + half * np.array([qd % 2, qd // 2])
        size = np.append(rng.uniform(0.3, 0.8, size=2) * (half - 0.05), rng.uniform(0.15, 0.6))
        lo_xy = q0 + rng.uniform(0, 1, size=2) * (half - 0.05 - size[:2])
        lo = np.array([lo_xy[0], lo_xy[1], t + gap])
        col = tuple(int(c) for c in rng.integers(30, 250, size=3))
        parts.append(box_mesh(lo, lo + size, col))
    return merge_meshes(parts)
