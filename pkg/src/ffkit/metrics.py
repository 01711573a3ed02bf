"""Geometry and color scores for a predicted scene against its target."""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .edges import DEFAULT_HIGH, DEFAULT_LOW, EdgeMap, canny
from .geometry import PointCloud
from .meshing import marching_cubes, sample_points
from .renderer import Camera, RenderedFrame, render
from .scene import Scene, log_transform, occupied_mask

log = logging.getLogger(__name__)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = (0.01 * 255) ** 2
SSIM_C2 = (0.03 * 255) ** 2


def _check_same_grid(pred: Scene, target: Scene):
    if pred.meta != target.meta:
        raise ValueError(f"grid mismatch: pred {pred.meta} vs target {target.meta}")


def geometry_iou_recall(pred: Scene, target: Scene, tau: float = 1.0) -> tuple[float, float]:
    """Occupancy IoU and recall over the voxels observed in the target."""
    _check_same_grid(pred, target)
    if tau <= 0:
        raise ValueError("tau must be > 0")
    domain = target.known
    p = occupied_mask(pred.tsdf, pred.known, tau) & domain
    t = occupied_mask(target.tsdf, target.known, tau)
    n_t = int(t.sum())
    if n_t == 0:
        return 1.0, 1.0
    inter = int((p & t).sum())
    union = int((p | t).sum())
    return inter / union, inter / n_t


def nearest_distances(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact nearest neighbor in ``dst`` for every point of ``src``: (distance, index)."""
    return cKDTree(dst).query(src, k=1)


def nearest_distances_brute(src: np.ndarray, dst: np.ndarray, block: int = 512):
    dist = np.empty(len(src))
    idx = np.empty(len(src), dtype=np.int64)
    for s in range(0, len(src), block):
        d = np.linalg.norm(src[s:s + block, None, :] - dst[None, :, :], axis=-1)
        idx[s:s + block] = d.argmin(axis=1)
        dist[s:s + block] = d[np.arange(len(d)), idx[s:s + block]]
    return dist, idx


def chamfer(a: PointCloud, b: PointCloud) -> float:
    """Symmetric mean nearest-neighbor distance in centimeters (unsquared)."""
    pa, pb = np.asarray(getattr(a, "points", a)), np.asarray(getattr(b, "points", b))
    if len(pa) == 0 or len(pb) == 0:
        raise ValueError("chamfer needs two non-empty point clouds")
    d_ab, _ = nearest_distances(pa, pb)
    d_ba, _ = nearest_distances(pb, pa)
    return 0.5 * (float(np.mean(d_ab)) + float(np.mean(d_ba))) * 100.0


def _gaussian_1d(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-ax ** 2 / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(x: np.ndarray) -> np.ndarray:
    """Separable Gaussian window over every fully contained 11x11 patch."""
    g = _gaussian_1d()
    r = SSIM_WINDOW // 2
    y = ndimage.correlate1d(x, g, axis=0, mode="constant")
    y = ndimage.correlate1d(y, g, axis=1, mode="constant")
    return y[r:-r, r:-r]


def ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-channel SSIM map (H-10, W-10, C) for 8-bit images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    out = []
    for c in range(a.shape[2]):
        x, y = a[..., c], b[..., c]
        mx, my = _filter_valid(x), _filter_valid(y)
        sxx = _filter_valid(x * x) - mx * mx
        syy = _filter_valid(y * y) - my * my
        sxy = _filter_valid(x * y) - mx * my
        num = (2 * mx * my + SSIM_C1) * (2 * sxy + SSIM_C2)
        den = (mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2)
        out.append(num / den)
    return np.stack(out, axis=-1)


def ssim(a: np.ndarray, b: np.ndarray, valid_a: np.ndarray | None = None,
         valid_b: np.ndarray | None = None) -> float:
    """Mean SSIM over window centers, then over channels.

    With validity masks only window centers valid in both images count; with
    no such center the score is 1 (nothing to compare).
    """
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"image size mismatch: {a.shape} vs {b.shape}")
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    m = ssim_map(a, b)
    if valid_a is None and valid_b is None:
        return float(m.mean(axis=(0, 1)).mean())
    va = np.ones(a.shape[:2], bool) if valid_a is None else np.asarray(valid_a, bool)
    vb = np.ones(a.shape[:2], bool) if valid_b is None else np.asarray(valid_b, bool)
    r = SSIM_WINDOW // 2
    both = (va & vb)[r:-r, r:-r]
    if not both.any():
        return 1.0
    return float(m[both].mean(axis=0).mean())


def edge_f1(pred: EdgeMap, target: EdgeMap, tol: int = 1) -> float:
    """F1 of edge pixels matched within Chebyshev distance ``tol``."""
    p = getattr(pred, "edges", pred)
    t = getattr(target, "edges", target)
    if p.shape != t.shape:
        raise ValueError(f"edge map size mismatch: {p.shape} vs {t.shape}")
    if tol < 0:
        raise ValueError("tol must be >= 0")
    np_, nt = int(p.sum()), int(t.sum())
    if np_ == 0 and nt == 0:
        return 1.0
    if np_ == 0 or nt == 0:
        return 0.0
    box = np.ones((2 * tol + 1, 2 * tol + 1), dtype=bool)
    near_t = ndimage.binary_dilation(t, box) if tol else t
    near_p = ndimage.binary_dilation(p, box) if tol else p
    precision = (p & near_t).sum() / np_
    recall = (t & near_p).sum() / nt
    if precision + recall == 0:
        return 0.0
    return float(2 * precision * recall / (precision + recall))


def l_geo(pred: Scene, target: Scene) -> float:
    """Mean absolute difference of log-transformed TSDF over mutually known voxels."""
    _check_same_grid(pred, target)
    dom = pred.known & target.known
    if not dom.any():
        raise ValueError("no voxel is known in both scenes")
    a = log_transform(pred.tsdf[dom].astype(np.float64))
    b = log_transform(target.tsdf[dom].astype(np.float64))
    return float(np.mean(np.abs(a - b)))


def l_color_depth(pred: RenderedFrame, target: RenderedFrame) -> tuple[float, float]:
    """Mean L1 color (RGB in [0, 1], averaged over channels) and depth (m) over pixels valid in both."""
    if pred.color.shape != target.color.shape:
        raise ValueError(f"frame size mismatch: {pred.color.shape} vs {target.color.shape}")
    v = pred.valid & target.valid
    if not v.any():
        return 0.0, 0.0
    dc = np.abs(pred.color[v].astype(np.float64) - target.color[v].astype(np.float64)) / 255.0
    dd = np.abs(pred.depth[v] - target.depth[v])
    return float(dc.mean()), float(dd.mean())


@dataclass
class MetricsReport:
    iou: float
    recall: float
    chamfer: float
    ssim: float
    edge_f1: float
    l_geo: float
    l_color: float
    l_depth: float
    per_view: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    # need pretrained feature networks; never approximated
    feature_l1: None = None
    fid: None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**d)

    @classmethod
    def from_json(cls, s: str) -> "MetricsReport":
        return cls.from_dict(json.loads(s))


@dataclass
class EvalParams:
    tau: float = 1.0
    chamfer_points: int = 30000
    seed: int = 0
    canny_low: float = DEFAULT_LOW
    canny_high: float = DEFAULT_HIGH
    edge_tol: int = 1
    camera_file: str | None = None


def worker_count() -> int:
    n = int(os.environ.get("FFKIT_THREADS", "0") or 0)
    return n if n > 0 else (os.cpu_count() or 1)


def _view_scores(pred: Scene, target: Scene, cam: Camera, params: EvalParams) -> dict:
    fp, ft = render(pred, cam), render(target, cam)
    lc, ld = l_color_depth(fp, ft)
    ep = canny(fp.color, params.canny_low, params.canny_high)
    et = canny(ft.color, params.canny_low, params.canny_high)
    both = fp.valid & ft.valid
    return {
        "ssim": ssim(fp.color, ft.color, fp.valid, ft.valid),
        "edge_f1": edge_f1(ep, et, params.edge_tol),
        "l_color": lc,
        "l_depth": ld,
        "valid_pixels": int(both.sum()),
        "no_valid_pixels": not bool(both.any()),
    }


def evaluate(pred: Scene, target: Scene, cameras: list[Camera], params: EvalParams | None = None) -> MetricsReport:
    params = params or EvalParams()
    _check_same_grid(pred, target)
    if not cameras:
        raise ValueError("evaluate needs at least one camera")
    try:
        iou, recall = geometry_iou_recall(pred, target, params.tau)
        geo = l_geo(pred, target)
    except ValueError as e:
        raise ValueError(f"grid metrics failed: {e}") from e

    mesh_p, mesh_t = marching_cubes(pred), marching_cubes(target)
    if mesh_p.is_empty or mesh_t.is_empty:
        raise ValueError("chamfer failed: " + ("prediction" if mesh_p.is_empty else "target") + " mesh is empty")
    pts_p = sample_points(mesh_p, params.chamfer_points, np.random.default_rng(params.seed))
    pts_t = sample_points(mesh_t, params.chamfer_points, np.random.default_rng(params.seed))
    cd = chamfer(pts_p, pts_t)

    with ThreadPoolExecutor(max_workers=min(worker_count(), len(cameras))) as pool:
        per_view = list(pool.map(lambda c: _view_scores(pred, target, c, params), cameras))

    def avg(key):
        return float(np.mean([v[key] for v in per_view]))

    prov = asdict(params)
    prov.update({
        "chamfer_units": "cm",
        "chamfer_squared": False,
        "num_cameras": len(cameras),
        "mesh_vertices": {"pred": int(len(mesh_p.vertices)), "target": int(len(mesh_t.vertices))},
    })
    return MetricsReport(
        iou=iou, recall=recall, chamfer=cd,
        ssim=avg("ssim"), edge_f1=avg("edge_f1"),
        l_geo=geo, l_color=avg("l_color"), l_depth=avg("l_depth"),
        per_view=per_view, provenance=prov,
    )
