"""Fixed-step TSDF ray marching for evaluation renders (no gradients).

Cameras follow the OpenCV convention: +z looks forward, +x right, +y down;
``pose`` maps camera coordinates to world coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy import ndimage

from .scene import Scene, occupied_mask

DEFAULT_WIDTH, DEFAULT_HEIGHT = 320, 256
DEFAULT_FX = DEFAULT_FY = 290.0
DEFAULT_CX, DEFAULT_CY = 160.0, 128.0
STEP = 0.5  # voxels


@dataclass
class Camera:
    fx: float = DEFAULT_FX
    fy: float = DEFAULT_FY
    cx: float = DEFAULT_CX
    cy: float = DEFAULT_CY
    width: int = DEFAULT_WIDTH
    height: int = DEFAULT_HEIGHT
    pose: np.ndarray | None = None

    def __post_init__(self):
        self.pose = np.eye(4) if self.pose is None else np.asarray(self.pose, dtype=np.float64).reshape(4, 4)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be > 0")
        if self.width < 1 or self.height < 1:
            raise ValueError("resolution must be positive")
        r = self.pose[:3, :3]
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6) or abs(np.linalg.det(r) - 1) > 1e-6:
            raise ValueError("pose rotation must be orthonormal with determinant +1")

    @property
    def position(self) -> np.ndarray:
        return self.pose[:3, 3]

    @property
    def forward(self) -> np.ndarray:
        return self.pose[:3, 2]

    def ray_directions(self) -> np.ndarray:
        """Unit world-space ray directions, shape (height, width, 3)."""
        v, u = np.mgrid[0:self.height, 0:self.width].astype(np.float64)
        d = np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)], axis=-1)
        d = d @ self.pose[:3, :3].T
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height,
                "pose": [float(x) for x in self.pose.ravel()]}

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]), np.asarray(d["pose"], dtype=np.float64).reshape(4, 4))


def look_at(position, target, up=(0.0, 0.0, 1.0), **intrinsics) -> Camera:
    position = np.asarray(position, dtype=np.float64)
    f = np.asarray(target, dtype=np.float64) - position
    f /= np.linalg.norm(f)
    up = np.asarray(up, dtype=np.float64)
    r = np.cross(f, up)
    if np.linalg.norm(r) < 1e-6:
        r = np.cross(f, [0.0, 1.0, 0.0])
    r /= np.linalg.norm(r)
    d = np.cross(f, r)
    pose = np.eye(4)
    pose[:3, :3] = np.stack([r, d, f], axis=1)
    pose[:3, 3] = position
    return Camera(pose=pose, **intrinsics)


@dataclass(eq=False)
class RenderedFrame:
    color: np.ndarray  # (H, W, 3) uint8
    depth: np.ndarray  # (H, W) meters along the ray, 0 where invalid
    normal: np.ndarray  # (H, W, 3) world-space unit normals, 0 where invalid
    valid: np.ndarray  # (H, W) bool

    @property
    def valid_fraction(self) -> float:
        return float(self.valid.mean())


class _Sampler:
    """Trilinear lookups over voxel centers; a sample is known when its whole cell is."""

    def __init__(self, scene: Scene):
        self.dims = np.array(scene.dims)
        self.tsdf = scene.tsdf.astype(np.float64)
        self.color = scene.color.astype(np.float64)
        k = scene.known
        cd = tuple(self.dims - 1)
        ck = np.ones(cd, dtype=bool)
        for ox in (0, 1):
            for oy in (0, 1):
                for oz in (0, 1):
                    ck &= k[ox:ox + cd[0], oy:oy + cd[1], oz:oz + cd[2]]
        self.cell_known = ck

    def _cell(self, p):
        i0 = np.clip(np.floor(p).astype(np.int64), 0, self.dims - 2)
        return i0, p - i0

    def known(self, p):
        i0, _ = self._cell(p)
        return self.cell_known[i0[:, 0], i0[:, 1], i0[:, 2]]

    def sample(self, field, p):
        i0, f = self._cell(p)
        x, y, z = i0[:, 0], i0[:, 1], i0[:, 2]
        fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
        if field.ndim == 4:
            fx, fy, fz = fx[:, None], fy[:, None], fz[:, None]
        c00 = field[x, y, z] * (1 - fx) + field[x + 1, y, z] * fx
        c10 = field[x, y + 1, z] * (1 - fx) + field[x + 1, y + 1, z] * fx
        c01 = field[x, y, z + 1] * (1 - fx) + field[x + 1, y, z + 1] * fx
        c11 = field[x, y + 1, z + 1] * (1 - fx) + field[x + 1, y + 1, z + 1] * fx
        c0 = c00 * (1 - fy) + c10 * fy
        c1 = c01 * (1 - fy) + c11 * fy
        return c0 * (1 - fz) + c1 * fz

    def tsdf_at(self, p):
        return self.sample(self.tsdf, p)


def _slab(o, d, lo, hi):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t0 = (lo - o) * inv
        t1 = (hi - o) * inv
    tmin = np.where(np.isnan(t0), -np.inf, np.minimum(t0, t1))
    tmax = np.where(np.isnan(t1), np.inf, np.maximum(t0, t1))
    # rays parallel to a slab and outside it never enter
    par = d == 0
    outside = par & ((o < lo) | (o > hi))
    tmin = np.where(par, -np.inf, tmin)
    tmax = np.where(par, np.inf, tmax)
    enter = tmin.max(axis=-1)
    leave = tmax.min(axis=-1)
    leave = np.where(outside.any(axis=-1), -np.inf, leave)
    return enter, leave


@numba.njit(cache=True, nogil=True)
def _march(o, dirs, enter, leave, tsdf, cell_known):
    """Distance (voxels) to the first observed +/- crossing per ray, NaN if none.

    A ray ends unseen when it reaches matter through unknown cells or before
    passing through any observed free space.
    """
    n = dirs.shape[0]
    nx, ny, nz = tsdf.shape
    out = np.full(n, np.nan)
    for r in range(n):
        s = enter[r]
        seen_free = False
        gap = False
        prev_v = 0.0
        prev_s = 0.0
        while s <= leave[r]:
            px = o[0] + s * dirs[r, 0]
            py = o[1] + s * dirs[r, 1]
            pz = o[2] + s * dirs[r, 2]
            x = min(max(int(np.floor(px)), 0), nx - 2)
            y = min(max(int(np.floor(py)), 0), ny - 2)
            z = min(max(int(np.floor(pz)), 0), nz - 2)
            if not cell_known[x, y, z]:
                if seen_free:
                    gap = True
                s += STEP
                continue
            fx, fy, fz = px - x, py - y, pz - z
            c00 = tsdf[x, y, z] * (1 - fx) + tsdf[x + 1, y, z] * fx
            c10 = tsdf[x, y + 1, z] * (1 - fx) + tsdf[x + 1, y + 1, z] * fx
            c01 = tsdf[x, y, z + 1] * (1 - fx) + tsdf[x + 1, y, z + 1] * fx
            c11 = tsdf[x, y + 1, z + 1] * (1 - fx) + tsdf[x + 1, y + 1, z + 1] * fx
            v = (c00 * (1 - fy) + c10 * fy) * (1 - fz) + (c01 * (1 - fy) + c11 * fy) * fz
            if v <= 0:
                if seen_free and not gap:
                    out[r] = prev_s + (s - prev_s) * prev_v / (prev_v - v)
                break
            seen_free = True
            gap = False
            prev_v = v
            prev_s = s
            s += STEP
    return out


def render(scene: Scene, camera: Camera) -> RenderedFrame:
    h, w = camera.height, camera.width
    color = np.zeros((h, w, 3), np.uint8)
    depth = np.zeros((h, w))
    normal = np.zeros((h, w, 3))
    valid = np.zeros((h, w), bool)
    if np.any(np.array(scene.dims) < 2) or not scene.known.any():
        return RenderedFrame(color, depth, normal, valid)

    vs = scene.meta.voxel_size
    samp = _Sampler(scene)
    o = scene.meta.to_voxel(camera.position)
    dirs = camera.ray_directions().reshape(-1, 3)
    enter, leave = _slab(o[None], dirs, 0.0, samp.dims - 1.0)
    enter = np.maximum(enter, 0.0)

    hit_s = _march(o, dirs, enter, leave, samp.tsdf, samp.cell_known)
    hr = np.flatnonzero(~np.isnan(hit_s))
    hs = hit_s[hr]
    if len(hr) == 0:
        return RenderedFrame(color, depth, normal, valid)
    p = o + hs[:, None] * dirs[hr]
    g = np.zeros((len(hr), 3))
    for a in range(3):
        e = np.zeros(3)
        e[a] = 0.5
        hi_p = np.minimum(p + e, samp.dims - 1.0)
        lo_p = np.maximum(p - e, 0.0)
        g[:, a] = (samp.tsdf_at(hi_p) - samp.tsdf_at(lo_p)) / (hi_p[:, a] - lo_p[:, a])
    gn = np.linalg.norm(g, axis=1)
    ok = gn > 0
    hr, hs, p, g, gn = hr[ok], hs[ok], p[ok], g[ok], gn[ok]
    yy, xx = np.unravel_index(hr, (h, w))
    valid[yy, xx] = True
    depth[yy, xx] = hs * vs
    normal[yy, xx] = g / gn[:, None]
    color[yy, xx] = np.clip(np.rint(samp.sample(samp.color, p)), 0, 255).astype(np.uint8)
    return RenderedFrame(color, depth, normal, valid)


def reproject(frame: RenderedFrame, camera: Camera) -> np.ndarray:
    """World positions of valid pixels, shape (n, 3)."""
    dirs = camera.ray_directions()[frame.valid]
    return camera.position + frame.depth[frame.valid][:, None] * dirs


def sample_cameras(scene: Scene, n: int, rng: np.random.Generator, min_clearance: float = 0.5,
                   min_valid_frac: float = 0.05, max_tries: int = 100, **intrinsics) -> list[Camera]:
    """Random evaluation views from observed free space, each aimed at an occupied voxel."""
    if n < 1:
        raise ValueError("n must be >= 1")
    occ = occupied_mask(scene.tsdf, scene.known)
    occ_idx = np.argwhere(occ)
    if len(occ_idx) == 0:
        raise ValueError("scene has no occupied voxels to look at")
    clearance = ndimage.distance_transform_edt(~occ) * scene.meta.voxel_size
    free = scene.known & (scene.tsdf > 0) & (clearance >= min_clearance)
    free_idx = np.argwhere(free)
    if len(free_idx) == 0:
        raise ValueError(f"no free-space voxel with clearance >= {min_clearance} m")
    cams = []
    for _ in range(n):
        for _try in range(max_tries):
            pos = scene.meta.world(free_idx[int(rng.integers(len(free_idx)))])
            tgt = scene.meta.world(occ_idx[int(rng.integers(len(occ_idx)))])
            cam = look_at(pos, tgt, **intrinsics)
            if render(scene, cam).valid_fraction >= min_valid_frac:
                cams.append(cam)
                break
        else:
            raise ValueError(f"could not place camera {len(cams)} with >= {min_valid_frac:.0%} valid pixels "
                             f"after {max_tries} tries")
    return cams
