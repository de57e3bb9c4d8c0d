# src/core/spatial_index.py
"""
Uniform voxel grid for exact radius queries.

A grid query returns exactly the ids a linear scan returns: both paths test
candidates with `_within_radius`, the grid only narrows the candidate set.
"""
from __future__ import annotations

import logging
import math
from typing import Dict, Optional, Tuple

import numpy as np

from src.core.geometry import PointCloud
from src.exceptions import EmptyCloud, NonPositiveRadius

logger = logging.getLogger(__name__)

Cell = Tuple[int, int, int]


def _within_radius(points: np.ndarray, centre: np.ndarray, r: float) -> np.ndarray:
    dx = points[:, 0] - centre[0]
    dy = points[:, 1] - centre[1]
    dz = points[:, 2] - centre[2]
    return dx * dx + dy * dy + dz * dz <= r * r


def _default_cell_size(points: np.ndarray) -> float:
    extent = points.max(axis=0) - points.min(axis=0)
    diag = float(np.linalg.norm(extent))
    if diag == 0.0:
        return 1.0
    # roughly a handful of points per occupied cell
    return max(diag / max(len(points), 1) ** (1.0 / 3.0), 1e-9)


class VoxelGridIndex:
    def __init__(self, points: np.ndarray, cell_size: float):
        if cell_size <= 0:
            raise NonPositiveRadius("cell size must be positive")
        self.points = points
        self.cell_size = float(cell_size)
        keys = np.floor(points / self.cell_size).astype(np.int64)
        uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
        order = np.argsort(inverse.reshape(-1), kind="stable")
        bounds = np.searchsorted(inverse.reshape(-1)[order], np.arange(len(uniq) + 1))
        self.cells: Dict[Cell, np.ndarray] = {
            tuple(int(v) for v in uniq[i]): order[bounds[i]:bounds[i + 1]]
            for i in range(len(uniq))
        }
        logger.debug(f"Built voxel grid: {len(points)} points, {len(self.cells)} cells, size {cell_size:.4g}")

    def _cell_of(self, value: float) -> int:
        return int(math.floor(value / self.cell_size))

    def query(self, centre: np.ndarray, r: float) -> np.ndarray:
        lo = [self._cell_of(c - r) - 1 for c in centre]
        hi = [self._cell_of(c + r) + 1 for c in centre]
        box = (hi[0] - lo[0] + 1) * (hi[1] - lo[1] + 1) * (hi[2] - lo[2] + 1)

        if box > len(self.cells):
            candidates = [
                ids for key, ids in self.cells.items()
                if all(lo[a] <= key[a] <= hi[a] for a in range(3))
            ]
        else:
            candidates = []
            for x in range(lo[0], hi[0] + 1):
                for y in range(lo[1], hi[1] + 1):
                    for z in range(lo[2], hi[2] + 1):
                        ids = self.cells.get((x, y, z))
                        if ids is not None:
                            candidates.append(ids)

        if not candidates:
            return np.empty(0, dtype=np.int64)
        cand = np.concatenate(candidates)
        keep = cand[_within_radius(self.points[cand], centre, r)]
        return np.sort(keep)


def build_spatial_index(cloud: PointCloud, cell_size: Optional[float] = None) -> PointCloud:
    """Return a copy of `cloud` carrying a voxel grid; `cell_size` is the query radius hint."""
    if len(cloud) == 0:
        raise EmptyCloud("cannot index an empty point cloud")
    size = cell_size if cell_size is not None else _default_cell_size(cloud.points)
    return PointCloud(cloud.points, index=VoxelGridIndex(cloud.points, size))


def radius_neighbors(cloud: PointCloud, centre: np.ndarray, r: float) -> np.ndarray:
    """Ids of points with distance <= r from `centre`, ascending."""
    if r < 0 or not np.isfinite(r):
        raise NonPositiveRadius(f"radius must be a finite value >= 0, got {r}")
    centre = np.asarray(centre, dtype=np.float64).reshape(3)
    if cloud.index is not None:
        return cloud.index.query(centre, float(r))
    return brute_force_radius(cloud.points, centre, r)


def brute_force_radius(points: np.ndarray, centre: np.ndarray, r: float) -> np.ndarray:
    return np.flatnonzero(_within_radius(points, np.asarray(centre, dtype=np.float64), r)).astype(np.int64)
