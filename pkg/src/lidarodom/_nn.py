"""k-d tree adapter: pykdtree for k-NN queries, scipy for radius queries.

pykdtree builds and answers k-NN queries faster than scipy's cKDTree but
has no ball query, so a cKDTree is built on first radius query.
"""

import numpy as np
from pykdtree.kdtree import KDTree as _PyKDTree
from scipy.spatial import cKDTree


class KDTree:
    def __init__(self, points):
        self.data = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
        self.n = len(self.data)
        self._tree = _PyKDTree(self.data) if self.n else None
        self._ball = None

    def query(self, x, k=1, distance_upper_bound=np.inf):
        """Like ``cKDTree.query``: (distances, int64 indices); misses are inf / n."""
        x = np.ascontiguousarray(x, dtype=np.float64)
        single = x.ndim == 1
        q = x.reshape(-1, 3)
        if self.n == 0 or len(q) == 0:
            shape = (len(q),) if k == 1 else (len(q), k)
            dist, idx = np.full(shape, np.inf), np.full(shape, self.n, dtype=np.int64)
        else:
            ub = None if not np.isfinite(distance_upper_bound) else float(distance_upper_bound)
            dist, idx = self._tree.query(q, k=k, distance_upper_bound=ub)
            idx = idx.astype(np.int64)
            miss = idx >= self.n
            if miss.any():
                dist = np.where(miss, np.inf, dist)
                idx[miss] = self.n
        if single:
            return dist[0], idx[0]
        return dist, idx

    def query_ball_point(self, x, r):
        if self._ball is None:
            self._ball = cKDTree(self.data)
        return self._ball.query_ball_point(x, r)
