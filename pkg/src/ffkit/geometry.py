"""Triangle meshes, point clouds and exact point-triangle queries."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


@dataclass(eq=False)
class TriangleMesh:
    vertices: np.ndarray  # (V, 3) float64, meters
    faces: np.ndarray  # (F, 3) int64
    vertex_colors: np.ndarray | None = None  # (V, 3) uint8

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.vertex_colors is None:
            self.vertex_colors = np.zeros((len(self.vertices), 3), dtype=np.uint8)
        self.vertex_colors = np.asarray(self.vertex_colors, dtype=np.uint8).reshape(-1, 3)
        if len(self.vertex_colors) != len(self.vertices):
            raise ValueError("vertex_colors length must equal vertices length")
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError("face index out of range")

    @property
    def is_empty(self) -> bool:
        return len(self.faces) == 0

    def triangles(self) -> np.ndarray:
        return self.vertices[self.faces]

    def areas(self) -> np.ndarray:
        t = self.triangles()
        return 0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)

    def validated(self) -> "TriangleMesh":
        """Copy without zero-area faces."""
        keep = self.areas() > 0
        if not keep.all():
            log.warning("dropping %d degenerate faces", int((~keep).sum()))
        return TriangleMesh(self.vertices, self.faces[keep], self.vertex_colors)

    def signed_volume(self) -> float:
        t = self.triangles()
        return float(np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2])).sum() / 6.0)

    def euler_characteristic(self) -> int:
        edges = np.sort(self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        n_edges = len(np.unique(edges, axis=0))
        n_verts = len(np.unique(self.faces))
        return n_verts - n_edges + len(self.faces)

    def is_closed(self) -> bool:
        """Every edge shared by exactly two faces."""
        edges = np.sort(self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        return bool(len(counts)) and bool(np.all(counts == 2))


@dataclass(eq=False)
class PointCloud:
    points: np.ndarray  # (N, 3)
    colors: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point cloud has non-finite coordinates")

    def __len__(self):
        return len(self.points)


def closest_point_on_triangle(p, a, b, c):
    """Closest points and barycentric weights for broadcast arrays of shape (..., 3).

    Region tests follow Ericson, Real-Time Collision Detection, 5.1.5.
    Returns ``(closest, bary)`` with ``bary`` of shape (..., 3).
    """
    p, a, b, c = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (p, a, b, c)))
    shape = p.shape[:-1]
    p, a, b, c = (v.reshape(-1, 3) for v in (p, a, b, c))
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    n = len(p)
    bary = np.zeros((n, 3))
    done = np.zeros(n, dtype=bool)

    def assign(cond, w):
        nonlocal done
        sel = cond & ~done
        bary[sel] = w[sel] if np.ndim(w) == 2 else w
        done |= sel

    with np.errstate(divide="ignore", invalid="ignore"):
        assign((d1 <= 0) & (d2 <= 0), np.array([1.0, 0.0, 0.0]))
        assign((d3 >= 0) & (d4 <= d3), np.array([0.0, 1.0, 0.0]))
        v = d1 / (d1 - d3)
        assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), np.stack([1 - v, v, np.zeros(n)], axis=1))
        assign((d6 >= 0) & (d5 <= d6), np.array([0.0, 0.0, 1.0]))
        w = d2 / (d2 - d6)
        assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), np.stack([1 - w, np.zeros(n), w], axis=1))
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        assign((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0), np.stack([np.zeros(n), 1 - w, w], axis=1))
        denom = 1.0 / (va + vb + vc)
        v, w = vb * denom, vc * denom
        assign(np.ones(n, dtype=bool), np.stack([1 - v - w, v, w], axis=1))

    closest = bary[:, :1] * a + bary[:, 1:2] * b + bary[:, 2:] * c
    return closest.reshape(shape + (3,)), bary.reshape(shape + (3,))


def point_triangle_distance(p, a, b, c) -> np.ndarray:
    q, _ = closest_point_on_triangle(p, a, b, c)
    return np.linalg.norm(np.asarray(p) - q, axis=-1)
