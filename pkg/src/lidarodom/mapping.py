"""Global map and the adaptive update policy.

The map keeps at most one point per leaf voxel, addressed by the voxel's
Morton code (the octree leaf order). Exact neighbor queries go through a
k-d tree rebuilt lazily after insertions; insertions happen only between
frames, so every query inside a frame sees one consistent snapshot.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from ._nn import KDTree

from . import _kernels
from .core import PointCloud, RigidTransform, rotation_angle_deg
from .errors import EmptyIndexError
from .preprocess import neighbor_indices

_MORTON_OFFSET = 1 << 20
_MORTON_LIMIT = 1 << 21


def _spread_bits(v):
    v = v.astype(np.uint64) & np.uint64(0x1FFFFF)
    v = (v | (v << np.uint64(32))) & np.uint64(0x1F00000000FFFF)
    v = (v | (v << np.uint64(16))) & np.uint64(0x1F0000FF0000FF)
    v = (v | (v << np.uint64(8))) & np.uint64(0x100F00F00F00F00F)
    v = (v | (v << np.uint64(4))) & np.uint64(0x10C30C30C30C30C3)
    v = (v | (v << np.uint64(2))) & np.uint64(0x1249249249249249)
    return v


def morton_codes(points, resolution) -> np.ndarray:
    """63-bit Morton code of the leaf voxel holding each point."""
    ijk = np.floor(np.asarray(points, dtype=np.float64) / resolution).astype(np.int64) + _MORTON_OFFSET
    if len(ijk) and (ijk.min() < 0 or ijk.max() >= _MORTON_LIMIT):
        raise ValueError("point outside the addressable map extent")
    return _spread_bits(ijk[:, 0]) | (_spread_bits(ijk[:, 1]) << np.uint64(1)) | (_spread_bits(ijk[:, 2]) << np.uint64(2))


@dataclasses.dataclass(frozen=True)
class InsertReport:
    inserted: int
    deduped: int


class OctreeMap:
    """Accumulated map points with leaf-voxel dedup and exact spatial queries.

    With ``knn`` set, each map point also carries a plane-to-plane covariance
    estimated from its map neighborhood, refreshed for every point whose
    neighborhood an insertion changes.
    """

    def __init__(self, leaf_resolution=0.1, knn=None, epsilon=0.001):
        if not leaf_resolution > 0:
            raise ValueError("leaf_resolution must be positive")
        self.leaf_resolution = float(leaf_resolution)
        self.knn_covariance = knn
        self.epsilon = epsilon
        self._points = np.empty((0, 3))
        self._keys = np.empty(0, dtype=np.uint64)
        self._covs = np.empty((0, 3, 3))
        self._kdist = np.empty(0)
        self._tree = None
        self._cloud = None

    def __len__(self):
        return len(self._points)

    @property
    def points(self) -> np.ndarray:
        p = self._points.view()
        p.setflags(write=False)
        return p

    @property
    def covariances(self) -> np.ndarray | None:
        return self._covs if self.knn_covariance else None

    @property
    def bounding_box(self):
        if len(self) == 0:
            return None
        return self._points.min(axis=0), self._points.max(axis=0)

    @property
    def tree(self) -> KDTree:
        if len(self) == 0:
            raise EmptyIndexError("empty map")
        if self._tree is None:
            self._tree = KDTree(self._points)
        return self._tree

    def as_cloud(self) -> PointCloud:
        """Immutable snapshot of the map (points and, if kept, covariances)."""
        if self._cloud is None:
            self._cloud = PointCloud(self._points, self.covariances)
        return self._cloud

    def insert(self, points) -> InsertReport:
        """Insert map-frame points; a point whose leaf voxel is taken is dropped."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(points) == 0:
            return InsertReport(0, 0)
        keys = morton_codes(points, self.leaf_resolution)
        _, first = np.unique(keys, return_index=True)
        first.sort()
        if len(self._keys):
            pos = np.searchsorted(self._keys, keys[first])
            pos = np.minimum(pos, len(self._keys) - 1)
            first = first[self._keys[pos] != keys[first]]
        n0 = len(self._points)
        self._points = np.concatenate([self._points, points[first]])
        self._keys = np.sort(np.concatenate([self._keys, keys[first]]))
        self._tree = None
        self._cloud = None
        if self.knn_covariance and len(first):
            self._refresh_covariances(n0)
        return InsertReport(len(first), len(points) - len(first))

    def _refresh_covariances(self, n0):
        k = self.knn_covariance
        n = len(self._points)
        self._covs = np.concatenate([self._covs, np.tile(np.eye(3), (n - n0, 1, 1))])
        self._kdist = np.concatenate([self._kdist, np.full(n - n0, np.inf)])
        if n < k + 1:
            return
        new = self._points[n0:]
        stale = np.arange(n0, n)
        if n0 > 0:
            # an old point's neighborhood changes iff a new point falls inside its k-th neighbor radius
            reach = float(np.max(self._kdist[:n0], initial=0.0))
            lo, hi = new.min(axis=0), new.max(axis=0)
            if np.isinf(reach):
                cand = np.arange(n0)
            else:
                old = self._points[:n0]
                inside = np.all((old >= lo - reach) & (old <= hi + reach), axis=1)
                cand = np.flatnonzero(inside)
            if len(cand):
                dist, _ = KDTree(new).query(self._points[cand], k=1)
                stale = np.concatenate([cand[dist < self._kdist[cand]], stale])
        nbr = neighbor_indices(self._points[stale], k, self.tree)
        # normals (and their orientation) are discarded; covariances do not depend on sign
        covs, _, _ = _kernels.regularized_covariances(self._points, nbr, float(self.epsilon), np.zeros(3))
        self._covs[stale] = covs
        last = nbr[:, -1]
        self._kdist[stale] = np.linalg.norm(self._points[last] - self._points[stale], axis=1)

    def knn(self, center, k=1):
        """The ``k`` nearest map points to ``center``: (points, distances), ascending."""
        if len(self) == 0:
            raise EmptyIndexError("empty map")
        k = min(k, len(self))
        dist, idx = self.tree.query(np.asarray(center, dtype=np.float64), k=k)
        idx = np.atleast_1d(idx)
        return self._points[idx], np.atleast_1d(dist)

    def radius(self, center, r):
        """All map points within ``r`` of ``center`` (unordered)."""
        if len(self) == 0:
            return np.empty((0, 3))
        idx = self.tree.query_ball_point(np.asarray(center, dtype=np.float64), r)
        return self._points[np.asarray(idx, dtype=np.int64)]


def query(m: OctreeMap, center, knn: int | None = None, radius: float | None = None):
    """Exact k-NN (distance-sorted) or radius query against the map."""
    if (knn is None) == (radius is None):
        raise ValueError("give exactly one of knn or radius")
    if knn is not None:
        return m.knn(center, knn)[0]
    return m.radius(center, radius)


def insert_keyframe(m: OctreeMap, filtered: PointCloud, pose: RigidTransform) -> InsertReport:
    """Insert a sensor-frame cloud observed at map-frame ``pose``."""
    if filtered.empty:
        return InsertReport(0, 0)
    return m.insert(pose.apply(filtered.points))


@dataclasses.dataclass
class MapUpdatePolicy:
    """When and what to add to the map.

    ``min_travel`` (m) and ``max_rotation`` (deg) gate keyframe selection,
    ``consistency_threshold`` (m) drives the point filter. The two boolean
    switches exist for ablation runs.
    """

    min_travel: float = 1.0
    max_rotation: float = 2.0
    consistency_threshold: float = 0.05
    max_translation_jump: float | None = None
    stability_filter: bool = True
    consistency_filter: bool = True

    def __post_init__(self):
        if not self.min_travel > 0:
            raise ValueError("min_travel must be positive")
        if not 0 < self.max_rotation < 180:
            raise ValueError("max_rotation must lie in (0, 180)")
        if not self.consistency_threshold > 0:
            raise ValueError("consistency_threshold must be positive")
        if self.max_translation_jump is not None and not self.max_translation_jump > 0:
            raise ValueError("max_translation_jump must be positive")


def motion_stable(incremental: RigidTransform, max_rotation_deg: float, max_translation: float | None = None) -> bool:
    """True iff the scan-to-scan rotation is at most ``max_rotation_deg``.

    ``max_translation`` optionally also rejects abrupt displacements.
    """
    if rotation_angle_deg(incremental) > max_rotation_deg:
        return False
    if max_translation is not None and float(np.linalg.norm(incremental.translation)) > max_translation:
        return False
    return True


def map_update_due(state, current_pose: RigidTransform, current_stable: bool, policy: MapUpdatePolicy) -> bool:
    """Travel gate plus the both-frames-stable gate.

    ``state`` needs ``last_map_update_pose`` and ``last_stable``.
    """
    travel = float(np.linalg.norm(current_pose.translation - state.last_map_update_pose.translation))
    if travel < policy.min_travel:
        return False
    if not policy.stability_filter:
        return True
    return bool(current_stable and state.last_stable)


def consistency_filter(
    p_k: PointCloud,
    p_km1: PointCloud,
    p_km2: PointCloud | None,
    t_km2_km1: RigidTransform | None,
    t_km1_k: RigidTransform,
    d: float,
    trees=(None, None),
) -> PointCloud:
    """Keep the points of the middle frame re-observed within ``d`` in a neighbor frame.

    A point of frame k-1 survives when its nearest neighbor in frame k, or
    in frame k-2, is strictly closer than ``d`` after mapping it into that
    frame. ``t_a_b`` maps frame-b coordinates into frame a. Input order is
    preserved. Pass ``p_km2=None`` when frame k-2 does not exist.
    ``trees`` optionally supplies prebuilt k-d trees over ``p_k`` and ``p_km2``.
    """
    tree_k, tree_km2 = trees
    if p_km1.empty:
        return p_km1
    keep = np.zeros(len(p_km1), dtype=bool)
    if not p_k.empty:
        to_k = t_km1_k.inverse().apply(p_km1.points)
        dist, _ = (KDTree(p_k.points) if tree_k is None else tree_k).query(to_k, k=1)
        keep |= dist < d
    if p_km2 is not None and not p_km2.empty and t_km2_km1 is not None:
        todo = np.flatnonzero(~keep)
        if len(todo):
            to_km2 = t_km2_km1.apply(p_km1.points[todo])
            dist, _ = (KDTree(p_km2.points) if tree_km2 is None else tree_km2).query(to_km2, k=1)
            keep[todo[dist < d]] = True
    return p_km1.select(np.flatnonzero(keep))

