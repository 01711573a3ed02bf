"""Reference inpainters that need no learned model."""

from __future__ import annotations

import logging

import numba
import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.linalg import cg

from .scene import Scene

log = logging.getLogger(__name__)

_NEIGHBORS = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]])


def _require_known(scene: Scene):
    if not scene.known.any():
        raise ValueError("scene has no known voxels to fill from")


def _channels(scene: Scene) -> np.ndarray:
    # tsdf plus colors scaled to [0, 1] so one tolerance fits every channel
    return np.concatenate([scene.tsdf[..., None].astype(np.float64),
                           scene.color.astype(np.float64) / 255.0], axis=-1)


def _write_back(scene: Scene, fill: np.ndarray, values: np.ndarray) -> Scene:
    tsdf = np.array(scene.tsdf)
    color = np.array(scene.color)
    tsdf[fill] = np.clip(values[:, 0], -scene.trunc, scene.trunc)
    color[fill] = np.clip(np.rint(values[:, 1:] * 255.0), 0, 255).astype(np.uint8)
    known = scene.known | fill
    mask = scene.mask & ~fill
    return scene.replace(tsdf=tsdf, color=color, known=known, mask=mask)


@numba.njit(cache=True, nogil=True)
def _jacobi_sweep(x, out, nb_slot, bsum, count):
    """One double-buffered Jacobi update; returns the largest absolute change."""
    worst = 0.0
    n, nch = x.shape
    for i in range(n):
        for c in range(nch):
            if count[i] == 0:
                out[i, c] = x[i, c]
                continue
            acc = bsum[i, c]
            for k in range(6):
                j = nb_slot[i, k]
                if j >= 0:
                    acc += x[j, c]
            v = acc / count[i]
            d = abs(v - x[i, c])
            if d > worst:
                worst = d
            out[i, c] = v
    return worst


def _warm_start(x0, nb_slot, bsum, count, boundary):
    """Conjugate-gradient solve of the same 6-neighbor system, clipped to the boundary range.

    Jacobi's per-sweep change shrinks much faster than its error on wide
    regions, so the sweeps start from this solution instead of from scratch.
    """
    n = len(x0)
    rows = np.repeat(np.arange(n), 6)
    cols = nb_slot.ravel()
    keep = cols >= 0
    diag = np.where(count > 0, count, 1.0)
    a = sparse.csr_matrix((np.full(int(keep.sum()), -1.0), (rows[keep], cols[keep])), shape=(n, n))
    a = (a + sparse.diags(diag)).tocsr()
    lo, hi = boundary.min(axis=0), boundary.max(axis=0)
    x = np.empty_like(x0)
    for c in range(x0.shape[1]):
        b = np.where(count > 0, bsum[:, c], x0[:, c])
        sol, _ = cg(a, b, x0=x0[:, c], rtol=1e-12, atol=0.0, maxiter=10 * n)
        x[:, c] = np.clip(sol, lo[c], hi[c])
    return x


def diffusion_fill(masked: Scene, tol: float = 1e-4, max_iters: int = 10_000, return_info: bool = False):
    """Harmonic fill of masked voxels by plain Jacobi iteration on the 6-neighborhood.

    Known voxels are fixed boundary values; neighbors that are neither known
    nor masked, or outside the grid, drop out of the stencil. Sweeps run until
    the largest update falls below ``tol``, starting from a conjugate-gradient
    solution of the same system that is clipped to the boundary range.
    Colors are solved in [0, 1] units against the same ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be > 0")
    _require_known(masked)
    info = {"iterations": 0, "converged": True, "max_update": 0.0}
    fill = masked.mask.copy()
    if not fill.any():
        return (masked, info) if return_info else masked

    dims = np.array(masked.dims)
    idx = np.argwhere(fill)
    n = len(idx)
    slot = np.full(masked.dims, -1, dtype=np.int64)
    slot[tuple(idx.T)] = np.arange(n)
    vals = _channels(masked)
    nch = vals.shape[-1]

    nb_slot = np.full((n, 6), -1, dtype=np.int64)
    bsum = np.zeros((n, nch))
    bcount = np.zeros(n)
    count = np.zeros(n)
    for k, off in enumerate(_NEIGHBORS):
        q = idx + off
        inb = np.all((q >= 0) & (q < dims), axis=1)
        qi = tuple(q[inb].T)
        is_known = np.zeros(n, bool)
        is_known[inb] = masked.known[qi]
        s = np.full(n, -1, dtype=np.int64)
        s[inb] = slot[qi]
        nb_slot[:, k] = s
        bsum[is_known] += vals[tuple(q[is_known].T)]
        bcount += is_known
        count += is_known | (s >= 0)

    ring = ndimage.binary_dilation(fill, structure=ndimage.generate_binary_structure(3, 1)) & masked.known
    fallback = vals[ring].mean(axis=0) if ring.any() else vals[masked.known].mean(axis=0)
    x = np.where(bcount[:, None] > 0, bsum / np.maximum(bcount, 1)[:, None], fallback)

    x = _warm_start(x, nb_slot, bsum, count, vals[masked.known])

    new = np.empty_like(x)
    upd = 0.0
    for it in range(1, max_iters + 1):
        upd = _jacobi_sweep(x, new, nb_slot, bsum, count)
        x, new = new, x
        info["iterations"], info["max_update"] = it, upd
        if upd < tol:
            break
    else:
        info["converged"] = False
        log.warning("diffusion fill did not converge in %d iterations (max update %.3g)", max_iters, upd)

    out = _write_back(masked, fill, x)
    return (out, info) if return_info else out


def nearest_fill(masked: Scene) -> Scene:
    """Copy TSDF and color from the Euclidean-nearest known voxel into every masked voxel."""
    _require_known(masked)
    fill = masked.mask.copy()
    if not fill.any():
        return masked
    _, inds = ndimage.distance_transform_edt(~masked.known, return_indices=True)
    src = tuple(i[fill] for i in inds)
    vals = _channels(masked)[src]
    return _write_back(masked, fill, vals)


def empty_fill(masked: Scene) -> Scene:
    """Degenerate prediction: masked voxels become observed free space."""
    fill = masked.mask
    tsdf = np.where(fill, masked.trunc, masked.tsdf)
    color = np.where(fill[..., None], 0, masked.color)
    return masked.replace(tsdf=tsdf, color=color, known=masked.known | fill, mask=np.zeros_like(fill))


METHODS = {"diffusion": diffusion_fill, "nearest": nearest_fill, "empty": empty_fill}
