"""Zero level set extraction and uniform surface sampling."""

from __future__ import annotations

import numpy as np

from ._mc_tables import CORNER_OFFSETS, EDGE_CORNERS, TRI_TABLE
from .geometry import PointCloud, TriangleMesh
from .scene import Scene

_CORNERS = np.array(CORNER_OFFSETS)
_TRI = np.full((256, 16), -1, dtype=np.int64)
for _case, _row in enumerate(TRI_TABLE):
    _TRI[_case, : len(_row)] = _row

# each cell edge as (axis, offset of its lower corner)
_EDGE_AXIS = np.empty(12, dtype=np.int64)
_EDGE_BASE = np.empty((12, 3), dtype=np.int64)
for _e, (_a, _b) in enumerate(EDGE_CORNERS):
    _d = _CORNERS[_b] - _CORNERS[_a]
    _EDGE_AXIS[_e] = int(np.flatnonzero(_d)[0])
    _EDGE_BASE[_e] = np.minimum(_CORNERS[_a], _CORNERS[_b])


def marching_cubes(scene: Scene) -> TriangleMesh:
    """Colored triangle mesh of ``tsdf = 0`` in world meters.

    Cells with any unknown corner are skipped. Vertices are shared between
    cells (one per crossed grid edge), so closed surfaces come out watertight.
    """
    tsdf = scene.tsdf.astype(np.float64)
    dims = np.array(scene.dims)
    if np.any(dims < 2):
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), np.int64))
    cdims = tuple(dims - 1)
    case = np.zeros(cdims, dtype=np.int64)
    valid = np.ones(cdims, dtype=bool)
    for k, (ox, oy, oz) in enumerate(CORNER_OFFSETS):
        sl = (slice(ox, ox + cdims[0]), slice(oy, oy + cdims[1]), slice(oz, oz + cdims[2]))
        case |= (tsdf[sl] < 0).astype(np.int64) << k
        valid &= scene.known[sl]
    active = valid & (case != 0) & (case != 255)
    cells = np.argwhere(active)  # lexicographic, deterministic
    if len(cells) == 0:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), np.int64))
    cases = case[active]

    # global id of every cell edge: axis * N + linear index of its lower voxel
    n_vox = int(np.prod(dims))
    base = cells[:, None, :] + _EDGE_BASE[None]  # (n, 12, 3)
    lin = (base[..., 0] * dims[1] + base[..., 1]) * dims[2] + base[..., 2]
    edge_ids = _EDGE_AXIS[None] * n_vox + lin  # (n, 12)

    rows = _TRI[cases]  # (n, 16)
    used = rows >= 0
    cell_of = np.repeat(np.arange(len(cells)), used.sum(axis=1))
    tri_edges = edge_ids[cell_of, rows[used]].reshape(-1, 3)

    uniq, inverse = np.unique(tri_edges, return_inverse=True)
    # the table winds triangles clockwise seen from outside; flip for outward normals
    faces = inverse.reshape(-1, 3)[:, ::-1]

    axis = uniq // n_vox
    lo = np.stack(np.unravel_index(uniq % n_vox, tuple(dims)), axis=1)
    hi = lo.copy()
    hi[np.arange(len(hi)), axis] += 1
    v0 = tsdf[lo[:, 0], lo[:, 1], lo[:, 2]]
    v1 = tsdf[hi[:, 0], hi[:, 1], hi[:, 2]]
    t = v0 / (v0 - v1)
    pos = lo + t[:, None] * (hi - lo)
    c0 = scene.color[lo[:, 0], lo[:, 1], lo[:, 2]].astype(np.float64)
    c1 = scene.color[hi[:, 0], hi[:, 1], hi[:, 2]].astype(np.float64)
    colors = np.clip(np.rint(c0 + t[:, None] * (c1 - c0)), 0, 255).astype(np.uint8)

    verts = np.asarray(scene.meta.origin) + pos * scene.meta.voxel_size
    return TriangleMesh(verts, faces, colors)


def sample_points(mesh: TriangleMesh, n: int, rng: np.random.Generator) -> PointCloud:
    """``n`` points uniform over the surface area (square-root barycentric method)."""
    if mesh.is_empty:
        raise ValueError("cannot sample an empty mesh")
    if n < 1:
        raise ValueError("n must be >= 1")
    areas = mesh.areas()
    total = areas.sum()
    if total <= 0:
        raise ValueError("mesh has zero surface area")
    cdf = np.cumsum(areas) / total
    pick = np.searchsorted(cdf, rng.random(n), side="right")
    pick = np.minimum(pick, len(areas) - 1)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    w = np.stack([1 - r1, r1 * (1 - r2), r1 * r2], axis=1)
    tri = mesh.triangles()[pick]
    pts = np.einsum("nk,nkc->nc", w, tri)
    cols = np.einsum("nk,nkc->nc", w, mesh.vertex_colors[mesh.faces[pick]].astype(np.float64))
    return PointCloud(pts, np.clip(np.rint(cols), 0, 255).astype(np.uint8))
