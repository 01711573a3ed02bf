"""Free-form 3D mask generation.

Strokes of overlapping balls walk over object surfaces: each step masks a
ball, then moves a small step to a nearby near-surface voxel, or a big step
with a looser surface threshold, and restarts at a fresh random occupied
voxel once the stroke length budget is spent or no move is possible.

The walker evaluates candidate steps against the unmasked input geometry.
Both step balls lie inside the ball that was just masked, so a walker that
only accepted unmasked voxels could never move. Restarts draw from the voxels
that are still occupied and unmasked.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from .scene import Scene, occupied_mask

log = logging.getLogger(__name__)

MAX_CALIBRATION_ATTEMPTS = 10
BIG_STEP_THRESHOLD = 5.0


@dataclass
class MaskGenParams:
    diameter: int = 12
    max_stroke_step: int = 20
    total_step: int = 200
    seed: int = 0
    target_ratio: tuple[float, float] | None = None

    def __post_init__(self):
        if self.diameter < 2:
            raise ValueError("diameter must be >= 2")
        if self.max_stroke_step < 1:
            raise ValueError("max_stroke_step must be >= 1")
        if self.total_step < 1:
            raise ValueError("total_step must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.target_ratio is not None:
            lo, hi = (float(v) for v in self.target_ratio)
            if not 0 < lo <= hi < 1:
                raise ValueError(f"target_ratio must satisfy 0 < lo <= hi < 1, got {self.target_ratio}")
            self.target_ratio = (lo, hi)


@dataclass
class MaskGenStats:
    strokes_started: int = 0
    steps_taken: int = 0
    dead_ends: int = 0
    mask_ratio: float = 0.0
    attempts: int = 1
    # alternative denominators for the mask ratio
    near_surface_ratio: float = 0.0
    volume_ratio: float = 0.0
    exhausted: bool = False
    total_step: int = 0
    target_reached: bool | None = None
    history: list = field(default_factory=list)
    # (stroke number, x, y, z) per masked ball, filled only when tracing
    trace: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def random_max_stroke(s: int, rng: np.random.Generator) -> int:
    """Stroke length drawn uniformly from ``s .. s+10`` inclusive."""
    if s < 1:
        raise ValueError("s must be >= 1")
    return int(rng.integers(s, s + 10, endpoint=True))


@lru_cache(maxsize=64)
def ball_offsets(d: float) -> np.ndarray:
    """Integer offsets within Euclidean radius d/2, in x-fastest order."""
    r = d / 2.0
    k = int(math.floor(r))
    rng_ = np.arange(-k, k + 1)
    z, y, x = np.meshgrid(rng_, rng_, rng_, indexing="ij")  # z slowest, x fastest
    off = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)
    off = off[(off ** 2).sum(axis=1) <= r * r]
    off.flags.writeable = False
    return off


def _ball_indices(center, d: float, dims) -> np.ndarray:
    idx = ball_offsets(float(d)) + np.asarray(center, dtype=np.int64)
    inb = np.all((idx >= 0) & (idx < np.asarray(dims)), axis=1)
    return idx[inb]


def _valid_in_ball(tsdf, known, mask, center, d, t) -> np.ndarray:
    idx = _ball_indices(center, d, tsdf.shape)
    ii = (idx[:, 0], idx[:, 1], idx[:, 2])
    ok = known[ii] & ~mask[ii] & (np.abs(tsdf[ii]) <= t)
    return idx[ok]


def find_valid_ball(scene: Scene, center, d: float, t: float) -> np.ndarray:
    """Voxels within distance d/2 of ``center`` that are known, unmasked and have ``|tsdf| <= t``.

    Returned as an (n, 3) index array in x-fastest scan order.
    """
    return _valid_in_ball(scene.tsdf, scene.known, scene.mask, center, d, t)


def _choice(rng: np.random.Generator, candidates: np.ndarray) -> np.ndarray:
    return candidates[int(rng.integers(len(candidates)))]


def _run(scene: Scene, params: MaskGenParams, total_step: int, rng: np.random.Generator, trace: bool = False):
    dims = scene.dims
    tsdf = np.array(scene.tsdf)
    color = np.array(scene.color)
    mask = np.array(scene.mask)
    known = np.array(scene.known)
    occ_live = occupied_mask(tsdf, known)
    trunc = scene.trunc
    big_t = min(BIG_STEP_THRESHOLD, trunc)
    d = params.diameter
    stats = MaskGenStats(total_step=total_step)

    def restart():
        flat = np.flatnonzero(occ_live.ravel(order="F"))
        if len(flat) == 0:
            return None
        pick = flat[int(rng.integers(len(flat)))]
        return np.array(np.unravel_index(pick, dims, order="F"))

    center = restart()
    if center is None:
        raise ValueError("nothing to mask: scene has no occupied voxels")
    stroke_len = random_max_stroke(params.max_stroke_step, rng)
    stats.strokes_started = 1
    step = stroke_step = 0
    while step <= total_step:
        if trace:
            stats.trace.append((stats.strokes_started, *(int(c) for c in center)))
        ball = _ball_indices(center, d, dims)
        ii = (ball[:, 0], ball[:, 1], ball[:, 2])
        mask[ii] = True
        known[ii] = False
        occ_live[ii] = False
        tsdf[ii] = trunc
        color[ii] = 0
        step += 1
        stroke_step += 1

        if stroke_step >= stroke_len:
            nxt = restart()
        else:
            cand = find_valid_ball(scene, center, d // 2, 1.0)
            if len(cand) == 0:
                cand = find_valid_ball(scene, center, d, big_t)
            if len(cand):
                center = _choice(rng, cand)
                continue
            stats.dead_ends += 1
            nxt = restart()
        if nxt is None:
            stats.exhausted = True
            break
        center = nxt
        stroke_len = random_max_stroke(params.max_stroke_step, rng)
        stroke_step = 0
        stats.strokes_started += 1

    stats.steps_taken = step
    out = scene.replace(tsdf=tsdf, color=color, mask=mask, known=known)
    _fill_ratios(scene, out, stats)
    return out, stats


def _fill_ratios(original: Scene, masked: Scene, stats: MaskGenStats) -> None:
    new = masked.mask & ~original.mask
    occ = occupied_mask(original.tsdf, original.known)
    near = original.known & (np.abs(original.tsdf) < original.trunc)
    stats.mask_ratio = float((new & occ).sum() / max(occ.sum(), 1))
    stats.near_surface_ratio = float((new & near).sum() / max(near.sum(), 1))
    stats.volume_ratio = float(new.sum() / original.num_voxels)


def generate_mask(scene: Scene, params: MaskGenParams, rng: np.random.Generator | None = None,
                  trace: bool = False):
    """Mask ``scene`` with a budget of ``params.total_step`` stroke steps. Returns ``(masked, stats)``.

    The loop runs while the step counter is ``<= total_step`` and the counter
    starts at zero, so up to ``total_step + 1`` balls are masked.
    """
    rng = np.random.default_rng(params.seed) if rng is None else rng
    return _run(scene, params, params.total_step, rng, trace)


def room_step_budget(num_voxels: int, chunk_volume: int, total_step: int) -> int:
    return total_step * max(1, math.ceil(num_voxels / chunk_volume))


def generate_mask_room(scene: Scene, params: MaskGenParams, chunk_volume: int = 64 * 64 * 128,
                       rng: np.random.Generator | None = None):
    """Room-scale masking: the step budget scales with scene volume, optionally calibrated.

    With ``params.target_ratio`` set, the budget is rescaled in proportion to
    the miss until the occupied-voxel mask ratio lands in the interval. Every
    attempt replays the same random stream, so the masked set only grows with
    the budget; the proportional guess is kept inside the bracket of budgets
    already known to undershoot or overshoot.
    """
    rng = np.random.default_rng(params.seed) if rng is None else rng
    base = room_step_budget(scene.num_voxels, chunk_volume, params.total_step)
    start = copy.deepcopy(rng)

    def attempt(total):
        r = copy.deepcopy(start)
        out, st = _run(scene, params, total, r)
        return out, st, r

    if params.target_ratio is None:
        out, stats, r = attempt(base)
        rng.bit_generator.state = r.bit_generator.state
        return out, stats

    lo, hi = params.target_ratio
    mid = 0.5 * (lo + hi)
    cap = 100 * base
    under, over = 0, cap + 1  # budgets known to be too small / too large
    total = base
    best = None
    history = []
    for n in range(1, MAX_CALIBRATION_ATTEMPTS + 1):
        out, stats, r = attempt(total)
        ratio = stats.mask_ratio
        history.append({"total_step": total, "mask_ratio": ratio})
        miss = 0.0 if lo <= ratio <= hi else min(abs(ratio - lo), abs(ratio - hi))
        if best is None or miss < best[0]:
            best = (miss, out, stats, r)
        if miss == 0.0:
            break
        if ratio < lo:
            under = max(under, total)
        else:
            over = min(over, total)
        guess = total * 10 if ratio == 0 else total * mid / ratio
        guess = int(round(min(max(guess, 1), cap)))
        if not under < guess < over:
            guess = (under + min(over, cap + 1)) // 2
        if guess <= under or guess >= over:
            break  # bracket collapsed; no integer budget in between
        total = guess
    _, out, stats, r = best
    stats.attempts = len(history)
    stats.history = history
    stats.target_reached = best[0] == 0.0
    if not stats.target_reached:
        log.warning("mask ratio target %s not reached after %d attempts (best %.4f)",
                    params.target_ratio, stats.attempts, stats.mask_ratio)
    rng.bit_generator.state = r.bit_generator.state
    return out, stats
