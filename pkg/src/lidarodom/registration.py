"""Plane-to-plane GICP: nearest-neighbor correspondences and Gauss-Newton on SE(3).

Residuals follow ``d_i = p_i - T q_i`` with ``p`` in the target and ``q`` in
the source, so the returned transform maps source coordinates into the
target frame.
"""

from __future__ import annotations

import dataclasses
import logging
import math

import numpy as np
from ._nn import KDTree

from . import _kernels
from .core import PointCloud, RigidTransform, twist_exp
from .errors import EmptyIndexError

log = logging.getLogger(__name__)


class NeighborIndex:
    """Immutable k-d tree over a cloud, keeping the cloud's covariances.

    ``members`` restricts every query to a subset of the cloud while reusing
    a tree built over all of it: a global nearest neighbor that is a member
    is also the nearest member, and the rare remaining queries go to a tree
    over the members built on first use.
    """

    def __init__(self, cloud: PointCloud, tree: KDTree | None = None, members=None):
        if cloud.empty:
            raise EmptyIndexError("empty index")
        self.cloud = cloud
        self.tree = tree if tree is not None else KDTree(cloud.points)
        if members is not None:
            members = np.asarray(members, dtype=bool)
            if not members.any():
                raise EmptyIndexError("empty index")
            if members.all():
                members = None
        self.members = members
        self._member_idx = None
        self._member_tree = None

    @property
    def points(self):
        return self.cloud.points

    @property
    def covariances(self):
        return self.cloud.covariances

    def __len__(self):
        return len(self.cloud) if self.members is None else int(self.members.sum())

    def _restricted(self):
        if self._member_tree is None:
            self._member_idx = np.flatnonzero(self.members)
            self._member_tree = KDTree(self.cloud.points[self._member_idx])
        return self._member_idx, self._member_tree

    def nearest(self, queries, max_distance=np.inf):
        """Nearest (member) point of each query: distances and cloud indices.

        Queries with nothing within ``max_distance`` get inf / len(cloud).
        """
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        dist, idx = self.tree.query(q, k=1, distance_upper_bound=max_distance)
        if self.members is not None:
            found = dist <= max_distance
            redo = np.flatnonzero(found & ~self.members[np.minimum(idx, len(self.members) - 1)])
            if len(redo):
                sub, tree = self._restricted()
                d2, i2 = tree.query(q[redo], k=1, distance_upper_bound=max_distance)
                ok = d2 <= max_distance
                dist[redo] = d2
                idx[redo] = np.where(ok, sub[np.minimum(i2, len(sub) - 1)], len(self.cloud))
        return dist, idx

    def knn(self, queries, k=1, max_distance=np.inf):
        """Distances and indices of the ``k`` nearest points, ascending.

        Missing neighbors (beyond ``max_distance``) come back as inf / len(self.cloud).
        """
        q = np.asarray(queries, dtype=np.float64)
        single = q.ndim == 1
        q = q.reshape(-1, 3)
        if self.members is None:
            dist, idx = self.tree.query(q, k=k, distance_upper_bound=max_distance)
        else:
            sub, tree = self._restricted()
            dist, idx = tree.query(q, k=k, distance_upper_bound=max_distance)
            idx = np.where(np.isfinite(dist), sub[np.minimum(idx, len(sub) - 1)], len(self.cloud))
        dist = np.asarray(dist).reshape(len(q), k)
        idx = np.asarray(idx).reshape(len(q), k)
        if single:
            return dist[0], idx[0]
        return dist, idx

    def radius(self, center, r):
        """Indices of all (member) points within distance ``r`` of ``center`` (inclusive)."""
        idx = np.asarray(self.tree.query_ball_point(np.asarray(center, dtype=np.float64), r), dtype=np.int64)
        if self.members is not None:
            idx = idx[self.members[idx]]
        return idx


@dataclasses.dataclass(frozen=True)
class CorrespondenceSet:
    """Matched pairs stored column-wise: target ``p`` and source ``q`` arrays."""

    target_points: np.ndarray
    target_covs: np.ndarray
    source_points: np.ndarray
    source_covs: np.ndarray
    target_idx: np.ndarray
    source_idx: np.ndarray

    def __len__(self):
        return len(self.target_idx)

    @classmethod
    def from_pairs(cls, target: PointCloud, source: PointCloud, target_idx, source_idx):
        return cls(
            target.points,
            target.covariances,
            source.points,
            source.covariances,
            np.ascontiguousarray(target_idx, dtype=np.int64),
            np.ascontiguousarray(source_idx, dtype=np.int64),
        )

    def residuals(self, t: RigidTransform) -> np.ndarray:
        return self.target_points[self.target_idx] - t.apply(self.source_points[self.source_idx])


def find_correspondences(source: PointCloud, target: NeighborIndex, t: RigidTransform, max_distance: float):
    """Nearest target point for every transformed source point within ``max_distance``."""
    dist, idx = target.nearest(t.apply(source.points), max_distance)
    ok = dist <= max_distance
    src_idx = np.flatnonzero(ok)
    return CorrespondenceSet.from_pairs(target.cloud, source, idx[ok], src_idx)


def _args(corrs: CorrespondenceSet):
    return (
        corrs.target_points,
        corrs.target_covs,
        corrs.source_points,
        corrs.source_covs,
        corrs.target_idx,
        corrs.source_idx,
    )


def evaluate_objective(corrs: CorrespondenceSet, t: RigidTransform) -> float:
    """GICP cost: sum of d^T (Cp + R Cq R^T)^-1 d over the pairs."""
    if len(corrs) == 0:
        return 0.0
    return float(_kernels.gicp_cost(*_args(corrs), np.ascontiguousarray(t.rotation), t.translation))


def objective_gradient(corrs: CorrespondenceSet, t: RigidTransform) -> np.ndarray:
    """Gradient of :func:`evaluate_objective` w.r.t. a left twist ``exp(delta) * t`` at 0."""
    _, g, _ = _kernels.gicp_linearize(*_args(corrs), np.ascontiguousarray(t.rotation), t.translation, 1.0)
    return 2.0 * g


@dataclasses.dataclass
class GicpParams:
    max_iterations: int = 64
    translation_epsilon: float = 1e-4
    rotation_epsilon: float = 1e-3
    max_correspondence_distance: float = 1.0
    min_correspondences: int = 50

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"{f.name} must be positive")


@dataclasses.dataclass(frozen=True)
class AlignResult:
    transform: RigidTransform
    converged: bool
    iterations: int
    final_cost: float
    inlier_count: int
    failure: str | None = None


def _solve(H, g):
    """Solve H x = -g, adding Levenberg damping when H is near-singular."""
    diag = np.diag(H)
    if np.linalg.cond(H) > 1e12:
        H = H + 1e-6 * np.diag(np.where(diag > 0, diag, 1.0))
    return -np.linalg.solve(H, g)


def gicp_align(
    source: PointCloud,
    target: NeighborIndex,
    init: RigidTransform,
    p: GicpParams,
    check_monotone: bool = False,
) -> AlignResult:
    """Estimate ``T`` with ``target ~ T * source``.

    Correspondences are re-established every iteration; the step is a
    Gauss-Newton update on the twist, halved while it would increase the
    cost over that iteration's fixed pairs. With ``check_monotone`` the
    non-increase is asserted.
    """
    if source.covariances is None or target.covariances is None:
        raise ValueError("source and target need covariances")
    T = init
    corrs = None
    cost = math.inf
    for it in range(1, p.max_iterations + 1):
        corrs = find_correspondences(source, target, T, p.max_correspondence_distance)
        if len(corrs) < p.min_correspondences:
            log.debug("registration failure: %d correspondences at iteration %d", len(corrs), it)
            return AlignResult(init, False, it, math.inf, len(corrs), failure="too few correspondences")
        args = _args(corrs)
        H, g, cost = _kernels.gicp_linearize(*args, np.ascontiguousarray(T.rotation), T.translation, 0.0)
        delta = _solve(H, g)
        new_T = twist_exp(delta) @ T
        new_cost = _kernels.gicp_cost(*args, np.ascontiguousarray(new_T.rotation), new_T.translation)
        halvings = 0
        while new_cost > cost and halvings < 30:
            delta = 0.5 * delta
            new_T = twist_exp(delta) @ T
            new_cost = _kernels.gicp_cost(*args, np.ascontiguousarray(new_T.rotation), new_T.translation)
            halvings += 1
        if new_cost > cost:
            # no descent along the step: reject it, T is stationary for these pairs
            return AlignResult(T, True, it, float(cost), len(corrs))
        if check_monotone:
            assert new_cost <= cost, (cost, new_cost)
        T = new_T
        cost = new_cost
        rot_deg = math.degrees(float(np.linalg.norm(delta[:3])))
        if float(np.linalg.norm(delta[3:])) < p.translation_epsilon and rot_deg < p.rotation_epsilon:
            return AlignResult(T, True, it, float(cost), len(corrs))
    return AlignResult(T, False, p.max_iterations, float(cost), 0 if corrs is None else len(corrs))
