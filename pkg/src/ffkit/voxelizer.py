"""Mesh to TSDF conversion.

Distances are exact within the truncation band: every triangle visits the
voxels of its bounding box grown by ``trunc`` voxels, so any voxel closer than
``trunc`` to the surface sees its nearest triangle. The inside/outside sign is
a majority vote of ray parity along +x, +y and +z.

Shared edges are counted once by evaluating each 2D edge function on the
lexicographically ordered endpoints, so both triangles of an edge compute the
same value bit for bit, and a point exactly on the edge belongs to the
triangle whose third vertex is on the positive side.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from .geometry import TriangleMesh, closest_point_on_triangle
from .scene import GridMeta, Scene

log = logging.getLogger(__name__)


def _canonical_edge_fn(p, q, x):
    """Edge function of segment pq at x, independent of the order of p and q."""
    swap = (p[..., 0] > q[..., 0]) | ((p[..., 0] == q[..., 0]) & (p[..., 1] > q[..., 1]))
    lo = np.where(swap[..., None], q, p)
    hi = np.where(swap[..., None], p, q)
    d = hi - lo
    r = x - lo
    return d[..., 0] * r[..., 1] - d[..., 1] * r[..., 0]


def _inside_2d(tri2, q):
    """Containment of q in projected triangles with a tie rule that counts shared edges once.

    ``tri2``: (..., 3, 2); ``q``: (..., 2), broadcast against each other.
    Returns ``(inside, bary)`` where ``bary`` holds barycentric weights (..., 3).
    """
    inside = None
    weights = []
    for k in range(3):
        i, j = (k + 1) % 3, (k + 2) % 3
        e_q = _canonical_edge_fn(tri2[..., i, :], tri2[..., j, :], q)
        e_k = _canonical_edge_fn(tri2[..., i, :], tri2[..., j, :], tri2[..., k, :])
        ok = (e_q * np.sign(e_k) > 0) | ((e_q == 0) & (e_k > 0))
        inside = ok if inside is None else inside & ok
        with np.errstate(divide="ignore", invalid="ignore"):
            weights.append(e_q / e_k)
    return inside, np.stack(weights, axis=-1)


def _projected_area2(tri2):
    a, b, c = tri2[..., 0, :], tri2[..., 1, :], tri2[..., 2, :]
    return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])


def _axis_votes_grid(tris: np.ndarray, dims: tuple[int, int, int], axis: int):
    """Inside votes for every voxel center from rays cast along +axis.

    ``tris`` are in continuous voxel coordinates. Returns (inside, leaky) where
    leaky flags columns with an odd total number of crossings.
    """
    perm = [a for a in range(3) if a != axis] + [axis]
    t = tris[:, :, perm]
    nu, nv, nw = (dims[a] for a in perm)
    diff = np.zeros((nu, nv, nw + 1), dtype=np.int32)
    total = np.zeros((nu, nv), dtype=np.int32)
    area = _projected_area2(t[:, :, :2])
    for tri in t[area != 0]:
        lo = np.maximum(np.ceil(tri[:, :2].min(axis=0)).astype(int), 0)
        hi = np.minimum(np.floor(tri[:, :2].max(axis=0)).astype(int), [nu - 1, nv - 1])
        if np.any(hi < lo):
            continue
        uu, vv = np.meshgrid(np.arange(lo[0], hi[0] + 1), np.arange(lo[1], hi[1] + 1), indexing="ij")
        q = np.stack([uu.ravel(), vv.ravel()], axis=1).astype(np.float64)
        inside, bary = _inside_2d(tri[None, :, :2], q)
        if not inside.any():
            continue
        u, v = uu.ravel()[inside], vv.ravel()[inside]
        w_hit = bary[inside] @ tri[:, 2]
        # voxels strictly below the hit along the ray see one more crossing
        first = np.clip(np.ceil(w_hit), 0, nw).astype(int)
        np.add.at(diff, (u, v, np.zeros_like(u)), 1)
        np.add.at(diff, (u, v, first), -1)
        np.add.at(total, (u, v), 1)
    counts = np.cumsum(diff, axis=2)[:, :, :nw]
    leaky = (total % 2) == 1
    inside = ((counts % 2) == 1) & ~leaky[:, :, None]
    inv = np.argsort(perm)
    return inside.transpose(inv), leaky


def _inside_votes_points(tris: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Majority-of-three parity vote for arbitrary points (same rule as the grid path)."""
    votes = np.zeros(len(points), dtype=np.int32)
    for axis in range(3):
        perm = [a for a in range(3) if a != axis] + [axis]
        t = tris[:, :, perm]
        keep = _projected_area2(t[:, :, :2]) != 0
        t = t[keep]
        for n, p in enumerate(points[:, perm]):
            inside, bary = _inside_2d(t[:, :, :2], p[None, :2])
            w_hit = np.einsum("ij,ij->i", bary, t[:, :, 2])
            hits = inside & (w_hit > p[2])
            total = inside.sum()
            if total % 2 == 0 and hits.sum() % 2 == 1:
                votes[n] += 1
    return votes >= 2


def signed_distance(mesh: TriangleMesh, point) -> float:
    """Exact distance to the mesh in meters, negative inside."""
    tris = mesh.triangles()
    p = np.asarray(point, dtype=np.float64).reshape(1, 3)
    d = float(np.min(np.linalg.norm(p - closest_point_on_triangle(p, tris[:, 0], tris[:, 1], tris[:, 2])[0], axis=1)))
    if d == 0.0:
        return 0.0
    return -d if _inside_votes_points(tris, p)[0] else d


def grid_for_mesh(mesh: TriangleMesh, voxel_size: float, trunc: float) -> GridMeta:
    margin = int(math.ceil(trunc))
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    dims = tuple(int(math.ceil((h - l) / voxel_size - 1e-9)) + 1 + 2 * margin for l, h in zip(lo, hi))
    origin = tuple(l - margin * voxel_size for l in lo)
    return GridMeta(dims, voxel_size, origin)


def voxelize(mesh: TriangleMesh, voxel_size: float = 0.02, trunc: float = 3.0,
             meta: GridMeta | None = None) -> Scene:
    """Fused-style TSDF of a colored mesh, fully observed.

    The grid covers the mesh bounding box plus ``ceil(trunc)`` voxels on every
    side unless an explicit ``meta`` is given.
    """
    if mesh.is_empty or len(mesh.vertices) == 0:
        raise ValueError("cannot voxelize an empty mesh")
    if voxel_size <= 0:
        raise ValueError("voxel_size must be > 0")
    if trunc < 1:
        raise ValueError("trunc must be >= 1")
    mesh = mesh.validated()
    if mesh.is_empty:
        raise ValueError("mesh has only degenerate faces")
    meta = meta or grid_for_mesh(mesh, voxel_size, trunc)
    dims = meta.dims
    vs = meta.voxel_size
    tris = (mesh.triangles() - np.asarray(meta.origin)) / vs  # voxel coordinates

    best = np.full(dims, np.inf)
    best_tri = np.full(dims, -1, dtype=np.int64)
    band = float(trunc)
    for f, tri in enumerate(tris):
        lo = np.maximum(np.ceil(tri.min(axis=0) - band).astype(int), 0)
        hi = np.minimum(np.floor(tri.max(axis=0) + band).astype(int), np.array(dims) - 1)
        if np.any(hi < lo):
            continue
        sl = tuple(slice(l, h + 1) for l, h in zip(lo, hi))
        g = np.stack(np.meshgrid(*(np.arange(l, h + 1) for l, h in zip(lo, hi)), indexing="ij"), axis=-1)
        q, _ = closest_point_on_triangle(g.astype(np.float64), tri[0], tri[1], tri[2])
        d = np.linalg.norm(g - q, axis=-1)
        sub = best[sl]
        closer = d < sub
        sub[closer] = d[closer]
        best_tri[sl][closer] = f

    votes = np.zeros(dims, dtype=np.int8)
    leaky_cols = 0
    for axis in range(3):
        inside, leaky = _axis_votes_grid(tris, dims, axis)
        votes += inside
        leaky_cols += int(leaky.sum())
    if leaky_cols:
        log.warning("mesh is not watertight: %d ray columns with odd crossings treated as outside", leaky_cols)
    inside = votes >= 2

    dist = np.minimum(best, trunc)
    tsdf = np.where(inside, -dist, dist).astype(np.float32)

    color = np.zeros(dims + (3,), dtype=np.uint8)
    near = (best <= trunc) & (best_tri >= 0)
    if near.any():
        idx = np.nonzero(near)
        f = best_tri[idx]
        g = np.stack(idx, axis=1).astype(np.float64)
        _, bary = closest_point_on_triangle(g, tris[f, 0], tris[f, 1], tris[f, 2])
        vc = mesh.vertex_colors[mesh.faces[f]].astype(np.float64)  # (n, 3 verts, 3 channels)
        rgb = np.einsum("nk,nkc->nc", bary, vc)
        color[idx] = np.clip(np.rint(rgb), 0, 255).astype(np.uint8)

    return Scene(meta, tsdf, color, np.zeros(dims, bool), np.ones(dims, bool), trunc)
