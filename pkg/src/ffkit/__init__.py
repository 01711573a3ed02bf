"""Toolkit for building, inpainting and scoring masked TSDF scenes."""

from .scene import GridMeta, OccupancyGrid, Scene, chunk, log_transform, new_scene, occupancy
from .geometry import PointCloud, TriangleMesh

__version__ = "0.1.0"

__all__ = [
    "GridMeta", "OccupancyGrid", "PointCloud", "Scene", "TriangleMesh",
    "chunk", "log_transform", "new_scene", "occupancy",
]
