"""Dense voxel scenes: TSDF, color, inpainting mask and observation flags.

Arrays are indexed ``[x, y, z]``. Whenever an ordering matters (file layout,
candidate lists, tie breaking) the x-fastest linear index
``x + nx * (y + ny * z)`` is used, i.e. Fortran order over ``[x, y, z]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DEFAULT_VOXEL_SIZE = 0.02
DEFAULT_TRUNC = 3.0
DEFAULT_CHUNK = (64, 64, 128)


def _f32(x) -> float:
    # metadata is stored as float32 on disk; normalising here keeps round trips exact
    return float(np.float32(x))


@dataclass(frozen=True)
class GridMeta:
    dims: tuple[int, int, int]
    voxel_size: float = DEFAULT_VOXEL_SIZE
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise ValueError(f"invalid dims {self.dims!r}: all three must be >= 1")
        if not np.isfinite(self.voxel_size) or self.voxel_size <= 0:
            raise ValueError(f"invalid voxel_size {self.voxel_size!r}: must be > 0")
        origin = tuple(_f32(o) for o in self.origin)
        if len(origin) != 3:
            raise ValueError(f"invalid origin {self.origin!r}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "voxel_size", _f32(self.voxel_size))
        object.__setattr__(self, "origin", origin)

    @property
    def num_voxels(self) -> int:
        return int(np.prod(self.dims))

    def world(self, idx) -> np.ndarray:
        """Voxel index (or ``(..., 3)`` array of indices) to world position in meters."""
        return np.asarray(self.origin) + np.asarray(idx, dtype=np.float64) * self.voxel_size

    def to_voxel(self, pos) -> np.ndarray:
        """World position to continuous voxel coordinates (voxel centers at integers)."""
        return (np.asarray(pos, dtype=np.float64) - np.asarray(self.origin)) / self.voxel_size


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Scene:
    """Co-located voxel channels sharing one grid.

    ``tsdf`` is in voxel units, negative inside matter. ``mask`` marks voxels
    to inpaint; masked voxels are never ``known``. Arrays are read-only; build
    a new scene with :meth:`replace` to change anything.
    """

    meta: GridMeta
    tsdf: np.ndarray
    color: np.ndarray
    mask: np.ndarray
    known: np.ndarray
    trunc: float = DEFAULT_TRUNC

    def __post_init__(self):
        shape = self.meta.dims
        if not np.isfinite(self.trunc) or self.trunc <= 0:
            raise ValueError(f"invalid trunc {self.trunc!r}: must be > 0")
        object.__setattr__(self, "trunc", _f32(self.trunc))
        tsdf = np.asarray(self.tsdf, dtype=np.float32)
        color = np.asarray(self.color, dtype=np.uint8)
        mask = np.asarray(self.mask, dtype=bool)
        known = np.asarray(self.known, dtype=bool)
        for name, arr, want in (("tsdf", tsdf, shape), ("color", color, shape + (3,)),
                                ("mask", mask, shape), ("known", known, shape)):
            if arr.shape != tuple(want):
                raise ValueError(f"{name} has shape {arr.shape}, expected {tuple(want)}")
        if np.any(mask & known):
            raise ValueError("masked voxels must not be marked known")
        object.__setattr__(self, "tsdf", _frozen(tsdf))
        object.__setattr__(self, "color", _frozen(color))
        object.__setattr__(self, "mask", _frozen(mask))
        object.__setattr__(self, "known", _frozen(known))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.meta.dims

    @property
    def num_voxels(self) -> int:
        return self.meta.num_voxels

    def replace(self, **changes) -> "Scene":
        fields = dict(meta=self.meta, tsdf=self.tsdf, color=self.color, mask=self.mask,
                      known=self.known, trunc=self.trunc)
        fields.update(changes)
        return Scene(**fields)

    def equals(self, other: "Scene") -> bool:
        """Bit-exact comparison of metadata and every channel."""
        return (
            self.meta == other.meta
            and self.trunc == other.trunc
            and np.array_equal(self.tsdf.view(np.uint32), other.tsdf.view(np.uint32))
            and np.array_equal(self.color, other.color)
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(self.known, other.known)
        )


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    meta: GridMeta
    occupied: np.ndarray
    known: np.ndarray = field(repr=False)

    @property
    def count(self) -> int:
        return int(self.occupied.sum())


def new_scene(meta: GridMeta, trunc: float = DEFAULT_TRUNC) -> Scene:
    """Empty scene: free space everywhere, nothing observed."""
    if trunc <= 0:
        raise ValueError(f"invalid trunc {trunc!r}: must be > 0")
    shape = meta.dims
    return Scene(
        meta=meta,
        tsdf=np.full(shape, trunc, dtype=np.float32),
        color=np.zeros(shape + (3,), dtype=np.uint8),
        mask=np.zeros(shape, dtype=bool),
        known=np.zeros(shape, dtype=bool),
        trunc=trunc,
    )


def log_transform(t):
    """``sign(t) * log(|t| + 1)``; accepts scalars or arrays."""
    t = np.asarray(t, dtype=np.float64)
    out = np.sign(t) * np.log1p(np.abs(t))
    return float(out) if out.ndim == 0 else out


def occupied_mask(tsdf: np.ndarray, known: np.ndarray, tau: float = 1.0) -> np.ndarray:
    return known & (np.abs(tsdf) <= tau)


def occupancy(scene: Scene, tau: float = 1.0) -> OccupancyGrid:
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    occ = occupied_mask(scene.tsdf, scene.known, tau)
    return OccupancyGrid(scene.meta, _frozen(occ), scene.known)


def crop(scene: Scene, start: Sequence[int], size: Sequence[int]) -> Scene:
    """Axis-aligned sub-block with the origin shifted so world positions are kept."""
    sl = tuple(slice(s, s + n) for s, n in zip(start, size))
    meta = GridMeta(
        dims=tuple(size),
        voxel_size=scene.meta.voxel_size,
        origin=tuple(o + s * scene.meta.voxel_size for o, s in zip(scene.meta.origin, start)),
    )
    return Scene(meta, scene.tsdf[sl], scene.color[sl], scene.mask[sl], scene.known[sl], scene.trunc)


def chunk_starts(dims: Sequence[int], size: Sequence[int], stride: Sequence[int]) -> list[tuple[int, int, int]]:
    """Lattice positions of every full window, x varying fastest."""
    axes = [range(0, d - s + 1, st) for d, s, st in zip(dims, size, stride)]
    return [(x, y, z) for z in axes[2] for y in axes[1] for x in axes[0]]


def chunk(scene: Scene, size: Sequence[int] = DEFAULT_CHUNK, stride: Sequence[int] | None = None,
          min_occ_frac: float = 0.0) -> list[Scene]:
    size = tuple(int(s) for s in size)
    stride = size if stride is None else tuple(int(s) for s in stride)
    if len(size) != 3 or any(s < 1 for s in size):
        raise ValueError(f"invalid chunk size {size}")
    if any(s > d for s, d in zip(size, scene.dims)):
        raise ValueError(f"chunk size {size} larger than scene dims {scene.dims}")
    if len(stride) != 3 or any(s < 1 for s in stride):
        raise ValueError(f"invalid chunk stride {stride}")
    occ = occupied_mask(scene.tsdf, scene.known)
    n = int(np.prod(size))
    out = []
    for start in chunk_starts(scene.dims, size, stride):
        sl = tuple(slice(s, s + k) for s, k in zip(start, size))
        if occ[sl].sum() / n >= min_occ_frac:
            out.append(crop(scene, start, size))
    return out
