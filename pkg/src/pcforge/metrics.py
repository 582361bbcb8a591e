"""Chamfer Distance and F-Score with exact nearest-neighbor search.

The k-d tree is a median-split tree (leaf size 16) over an immutable point
list; queries are exact and break distance ties toward the lowest point
index, so results are bit-reproducible and match the O(N^2) brute-force scan
that lives alongside it as the test oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import as_cloud

DEFAULT_TAU = 0.001
LEAF_SIZE = 16


@dataclass
class MetricReport:
    """Reconstruction-vs-ground-truth scores for one cloud pair."""

    chamfer: float          # unsquared distances
    chamfer_squared: float
    fscore: float
    precision: float
    recall: float
    tau: float

    def to_dict(self) -> dict:
        return {"chamfer": self.chamfer,
                "chamfer_squared": self.chamfer_squared,
                "fscore": self.fscore, "precision": self.precision,
                "recall": self.recall, "tau": self.tau}


class KdTree3:
    """Exact 3D nearest-neighbor index.

    Nodes split at the median along the axis of largest extent; subtrees of
    <= LEAF_SIZE points become leaves scanned with numpy. Equal nearest
    distances resolve to the lowest point index, and pruning is non-strict so
    tied candidates in sibling subtrees are still visited.
    """

    def __init__(self, points: np.ndarray, leaf_size: int = LEAF_SIZE):
        self.points = as_cloud(points)
        self.leaf_size = max(int(leaf_size), 1)
        # Flat node arrays: axis < 0 marks a leaf covering perm[start:end].
        self._axis: list[int] = []
        self._split: list[float] = []
        self._left: list[int] = []
        self._right: list[int] = []
        self._start: list[int] = []
        self._end: list[int] = []
        self._perm = np.arange(len(self.points))
        self._build(0, len(self.points))

    def _new_node(self) -> int:
        self._axis.append(-1)
        self._split.append(0.0)
        self._left.append(-1)
        self._right.append(-1)
        self._start.append(0)
        self._end.append(0)
        return len(self._axis) - 1

    def _build(self, start: int, end: int) -> int:
        node = self._new_node()
        if end - start <= self.leaf_size:
            self._start[node] = start
            self._end[node] = end
            return node
        idx = self._perm[start:end]
        pts = self.points[idx]
        spread = pts.max(axis=0) - pts.min(axis=0)
        axis = int(np.argmax(spread))
        order = np.argsort(pts[:, axis], kind="stable")
        self._perm[start:end] = idx[order]
        mid = start + (end - start) // 2
        self._axis[node] = axis
        self._split[node] = float(self.points[self._perm[mid], axis])
        self._left[node] = self._build(start, mid)
        self._right[node] = self._build(mid, end)
        return node

    def query(self, q) -> tuple[int, float]:
        """Index and Euclidean distance of the nearest stored point."""
        q = np.asarray(q, dtype=np.float64).reshape(3)
        best_d2 = np.inf
        best_i = -1
        stack = [(0, 0.0)]
        while stack:
            node, gap2 = stack.pop()
            if gap2 > best_d2:
                continue
            axis = self._axis[node]
            if axis < 0:
                idx = self._perm[self._start[node]:self._end[node]]
                if len(idx) == 0:
                    continue
                diff = self.points[idx] - q
                d2 = (diff * diff).sum(axis=1)
                jmin = d2.min()
                cand = int(idx[d2 == jmin].min())
                if jmin < best_d2 or (jmin == best_d2 and cand < best_i):
                    best_d2 = jmin
                    best_i = cand
                continue
            delta = q[axis] - self._split[node]
            near, far = ((self._left[node], self._right[node]) if delta < 0
                         else (self._right[node], self._left[node]))
            stack.append((far, delta * delta))
            stack.append((near, gap2))
        return best_i, float(np.sqrt(best_d2))

    def query_many(self, queries: np.ndarray):
        """Vectorized-ish batch query: (indices, distances) arrays."""
        queries = as_cloud(queries)
        n = len(queries)
        idx = np.empty(n, dtype=np.int64)
        dist = np.empty(n)
        for i in range(n):
            idx[i], dist[i] = self.query(queries[i])
        return idx, dist


def nearest_distance_all(query: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Exact distance from each query point to its nearest target point."""
    query = as_cloud(query)
    target = as_cloud(target)
    tree = KdTree3(target)
    _, dist = tree.query_many(query)
    return dist


def nearest_distance_brute(query: np.ndarray, target: np.ndarray):
    """O(N*M) oracle for :func:`nearest_distance_all`; returns (indices,
    distances) with ties resolved to the lowest target index."""
    query = as_cloud(query)
    target = as_cloud(target)
    # Blocked to keep the pairwise matrix small.
    n = len(query)
    idx = np.empty(n, dtype=np.int64)
    dist = np.empty(n)
    block = max(1, int(2e7) // max(len(target), 1))
    for s in range(0, n, block):
        q = query[s:s + block]
        d2 = ((q[:, None, :] - target[None, :, :]) ** 2).sum(axis=2)
        best = np.argmin(d2, axis=1)  # argmin returns the first (lowest) index
        idx[s:s + block] = best
        dist[s:s + block] = np.sqrt(d2[np.arange(len(q)), best])
    return idx, dist


def chamfer(p: np.ndarray, g: np.ndarray, squared: bool = False) -> float:
    """Symmetric Chamfer Distance: mean nearest distance p->g plus g->p.

    Distances are squared before averaging iff ``squared`` is set.
    """
    d_pg = nearest_distance_all(p, g)
    d_gp = nearest_distance_all(g, p)
    if squared:
        return float(np.mean(d_pg ** 2) + np.mean(d_gp ** 2))
    return float(np.mean(d_pg) + np.mean(d_gp))


def fscore(p: np.ndarray, g: np.ndarray, tau: float = DEFAULT_TAU) -> MetricReport:
    """Full metric report for a (prediction, ground truth) pair.

    Precision is the fraction of predicted points within ``tau`` of the
    ground truth, recall the converse; fscore is their harmonic mean with
    0/0 defined as 0. Chamfer values ride along since both distance sets are
    already in hand.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    d_pg = nearest_distance_all(p, g)
    d_gp = nearest_distance_all(g, p)
    precision = float(np.mean(d_pg <= tau))
    recall = float(np.mean(d_gp <= tau))
    f = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return MetricReport(
        chamfer=float(np.mean(d_pg) + np.mean(d_gp)),
        chamfer_squared=float(np.mean(d_pg ** 2) + np.mean(d_gp ** 2)),
        fscore=f, precision=precision, recall=recall, tau=float(tau))
