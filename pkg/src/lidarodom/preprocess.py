"""Per-frame downsampling and plane-to-plane covariance estimation."""

from __future__ import annotations

import dataclasses

import numpy as np
from ._nn import KDTree

from . import _kernels
from .core import PointCloud

MIN_VOXEL = 0.05
MAX_VOXEL = 1.0


@dataclasses.dataclass
class PreprocessConfig:
    voxel_size: float = 0.25
    target_count: int = 10000
    count_tolerance: float = 0.3
    knn: int = 20
    epsilon: float = 0.001
    voxel_adjust_gain: float = 0.1

    def __post_init__(self):
        if not self.voxel_size > 0:
            raise ValueError("voxel_size must be positive")
        if self.knn < 3:
            raise ValueError("knn must be at least 3")
        if self.target_count < self.knn + 1:
            raise ValueError("target_count must be at least knn + 1")
        if not 0 < self.count_tolerance < 1:
            raise ValueError("count_tolerance must lie in (0, 1)")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if not 0 < self.voxel_adjust_gain < 1:
            raise ValueError("voxel_adjust_gain must lie in (0, 1)")


@dataclasses.dataclass
class VoxelState:
    """Voxel edge length carried from one frame to the next."""

    voxel_size: float


def voxel_keys(points, size):
    """Integer voxel coordinates packed into one int64 per point."""
    ijk = np.floor(points / size).astype(np.int64)
    lo = ijk.min(axis=0)
    span = ijk.max(axis=0) - lo + 1
    if np.any(span >= 2**21):
        # fall back to lexicographic row ranks
        _, inv = np.unique(ijk, axis=0, return_inverse=True)
        return inv.reshape(-1).astype(np.int64)
    ijk -= lo
    return (ijk[:, 0] << 42) | (ijk[:, 1] << 21) | ijk[:, 2]


def voxel_downsample(points, size) -> np.ndarray:
    """Centroid of each occupied voxel, ordered by voxel key."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        return points.copy()
    _, inv, counts = np.unique(voxel_keys(points, size), return_inverse=True, return_counts=True)
    out = np.empty((len(counts), 3))
    for a in range(3):
        out[:, a] = np.bincount(inv, weights=points[:, a], minlength=len(counts)) / counts
    return out


def adaptive_voxel_downsample(c: PointCloud, cfg: PreprocessConfig, state: VoxelState) -> PointCloud:
    """Voxel-filter ``c`` at ``state.voxel_size``; nudge the size for the next frame.

    The size changes only when the output count leaves the band
    ``target_count * (1 +- count_tolerance)``; the current frame is never
    re-filtered.
    """
    if c.empty:
        return PointCloud(np.empty((0, 3)), stamp=c.stamp, frame_id=c.frame_id)
    pts = voxel_downsample(c.points, state.voxel_size)
    n = len(pts)
    if n > cfg.target_count * (1 + cfg.count_tolerance):
        state.voxel_size = min(MAX_VOXEL, state.voxel_size * (1 + cfg.voxel_adjust_gain))
    elif n < cfg.target_count * (1 - cfg.count_tolerance):
        state.voxel_size = max(MIN_VOXEL, state.voxel_size * (1 - cfg.voxel_adjust_gain))
    return PointCloud(pts, stamp=c.stamp, frame_id=c.frame_id)


def neighbor_indices(points, k, tree=None) -> np.ndarray:
    """Indices of each query point's ``k + 1`` nearest points (itself included), ties by lower index.

    ``tree`` defaults to a tree over ``points``; pass a larger tree to query
    a subset of its points.
    """
    if tree is None:
        tree = KDTree(points)
    k = min(k + 1, tree.n)
    dist, idx = tree.query(points, k=k)
    if k == 1:
        return idx.reshape(-1, 1)
    # rows come back distance-sorted; only rows holding ties need the index tie-break
    tied = np.flatnonzero(np.any(dist[:, 1:] == dist[:, :-1], axis=1))
    if len(tied):
        order = np.lexsort((idx[tied], dist[tied]), axis=-1)
        idx[tied] = np.take_along_axis(idx[tied], order, axis=1)
    return idx


def estimate_covariances(c: PointCloud, cfg: PreprocessConfig, origin=(0.0, 0.0, 0.0), tree=None) -> PointCloud:
    """Attach regularized covariances, normals and planarity flags.

    Each point's neighborhood is itself plus its ``cfg.knn`` nearest points.
    """
    if len(c) < cfg.knn + 1:
        raise ValueError(f"need at least {cfg.knn + 1} points for covariance estimation, got {len(c)}")
    nbr = neighbor_indices(c.points, cfg.knn, tree)
    covs, normals, planar = _kernels.regularized_covariances(
        c.points, nbr, float(cfg.epsilon), np.asarray(origin, dtype=np.float64)
    )
    return c.replace(covariances=covs, normals=normals, planar=planar)


def preprocess(c: PointCloud, cfg: PreprocessConfig, state: VoxelState) -> PointCloud:
    """Downsample then estimate covariances; clouds too small for kNN come back bare."""
    down = adaptive_voxel_downsample(c, cfg, state)
    if len(down) < cfg.knn + 1:
        return down
    return estimate_covariances(down, cfg)
