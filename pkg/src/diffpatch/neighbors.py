"""Exact nearest-neighbour search over 3D points.

The tree is built in numpy (median split on the widest axis, leaves of at
most ``leaf_size`` points) and queried by numba-compiled loops. Every node
stores its bounding box; a subtree is pruned only when the squared box
distance is strictly larger than the best squared distance found so far, so
equal-distance candidates are always inspected and ties resolve to the lowest
original point index.

Squared distances are evaluated as ``dx*dx + dy*dy + dz*dz`` in exactly that
order, matching :func:`brute_force_nearest`, so results agree bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

LEAF_SIZE = 16


@dataclass(frozen=True)
class KdIndex:
    points: np.ndarray  # (N, 3) in original order
    perm: np.ndarray  # tree order -> original index
    start: np.ndarray
    stop: np.ndarray
    left: np.ndarray  # -1 for leaves
    right: np.ndarray
    lo: np.ndarray  # (n_nodes, 3) bounding boxes
    hi: np.ndarray
    leaf_size: int

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def depth(self) -> int:
        def walk(i):
            if self.left[i] < 0:
                return 1
            return 1 + max(walk(self.left[i]), walk(self.right[i]))

        return walk(0)

    def nearest(self, q):
        """Nearest point to ``q``: ``(index, squared distance)``."""
        idx, d2 = self.nearest_batch(np.asarray(q, dtype=np.float64).reshape(1, 3))
        return int(idx[0]), float(d2[0])

    def nearest_batch(self, queries):
        queries = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
        return _nearest_batch(self.points, self.perm, self.start, self.stop, self.left,
                              self.right, self.lo, self.hi, queries)

    def count_within(self, q, t: float) -> int:
        """Number of indexed points with distance <= t from ``q``."""
        if t < 0:
            raise ValueError("radius must be non-negative")
        return len(self.query_radius(q, t))

    def query_radius(self, q, t: float) -> np.ndarray:
        """Sorted original indices of points with distance <= t from ``q``."""
        q = np.ascontiguousarray(q, dtype=np.float64).reshape(3)
        out = _radius(self.points, self.perm, self.start, self.stop, self.left, self.right,
                      self.lo, self.hi, q, float(t) * float(t))
        return np.sort(out)


def build(points, leaf_size: int = LEAF_SIZE) -> KdIndex:
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) point array, got shape {pts.shape}")
    n = pts.shape[0]
    if n == 0:
        raise ValueError("cannot index an empty point cloud")
    if leaf_size < 1:
        raise ValueError("leaf_size must be positive")

    perm = np.arange(n)
    start, stop, left, right, lo, hi = [], [], [], [], [], []

    def make(s, e):
        node = len(start)
        sub = pts[perm[s:e]]
        start.append(s)
        stop.append(e)
        left.append(-1)
        right.append(-1)
        lo.append(sub.min(axis=0))
        hi.append(sub.max(axis=0))
        if e - s <= leaf_size:
            return node
        axis = int(np.argmax(hi[node] - lo[node]))
        mid = (e - s) // 2
        order = np.argsort(sub[:, axis], kind="stable")
        perm[s:e] = perm[s:e][order]
        left[node] = make(s, s + mid)
        right[node] = make(s + mid, e)
        return node

    make(0, n)
    return KdIndex(
        points=pts,
        perm=perm,
        start=np.array(start, dtype=np.int64),
        stop=np.array(stop, dtype=np.int64),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        lo=np.array(lo),
        hi=np.array(hi),
        leaf_size=leaf_size,
    )


@numba.njit(cache=True)
def _box_d2(lo, hi, q):
    s = 0.0
    for a in range(3):
        if q[a] < lo[a]:
            d = lo[a] - q[a]
        elif q[a] > hi[a]:
            d = q[a] - hi[a]
        else:
            d = 0.0
        s += d * d
    return s


@numba.njit(cache=True)
def _nearest_one(points, perm, start, stop, left, right, lo, hi, q, stack):
    best = np.inf
    best_i = -1
    top = 0
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        if _box_d2(lo[node], hi[node], q) > best:
            continue
        if left[node] < 0:
            for j in range(start[node], stop[node]):
                i = perm[j]
                dx = points[i, 0] - q[0]
                dy = points[i, 1] - q[1]
                dz = points[i, 2] - q[2]
                d2 = dx * dx + dy * dy + dz * dz
                if d2 < best or (d2 == best and i < best_i):
                    best = d2
                    best_i = i
            continue
        a, b = left[node], right[node]
        da = _box_d2(lo[a], hi[a], q)
        db = _box_d2(lo[b], hi[b], q)
        # push the farther child first so the nearer one is popped next
        if da <= db:
            stack[top] = b
            stack[top + 1] = a
        else:
            stack[top] = a
            stack[top + 1] = b
        top += 2
    return best_i, best


@numba.njit(cache=True)
def _nearest_batch(points, perm, start, stop, left, right, lo, hi, queries):
    m = queries.shape[0]
    idx = np.empty(m, dtype=np.int64)
    d2 = np.empty(m)
    stack = np.empty(2 * start.shape[0] + 2, dtype=np.int64)
    for k in range(m):
        i, d = _nearest_one(points, perm, start, stop, left, right, lo, hi, queries[k], stack)
        idx[k] = i
        d2[k] = d
    return idx, d2


@numba.njit(cache=True)
def _radius(points, perm, start, stop, left, right, lo, hi, q, t2):
    out = []
    stack = np.empty(2 * start.shape[0] + 2, dtype=np.int64)
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        if _box_d2(lo[node], hi[node], q) > t2:
            continue
        if left[node] < 0:
            for j in range(start[node], stop[node]):
                i = perm[j]
                dx = points[i, 0] - q[0]
                dy = points[i, 1] - q[1]
                dz = points[i, 2] - q[2]
                if dx * dx + dy * dy + dz * dz <= t2:
                    out.append(i)
            continue
        stack[top] = left[node]
        stack[top + 1] = right[node]
        top += 2
    return np.array(out, dtype=np.int64)


def brute_force_nearest(points, queries):
    """O(NM) reference: lowest index among exact minimisers."""
    P = np.asarray(points, dtype=np.float64)
    Q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    idx = np.empty(len(Q), dtype=np.int64)
    d2 = np.empty(len(Q))
    for k, q in enumerate(Q):
        dx = P[:, 0] - q[0]
        dy = P[:, 1] - q[1]
        dz = P[:, 2] - q[2]
        dist = dx * dx + dy * dy + dz * dz
        i = int(np.argmin(dist))  # argmin returns the first minimiser
        idx[k] = i
        d2[k] = dist[i]
    return idx, d2


def brute_force_count(points, q, t: float) -> int:
    P = np.asarray(points, dtype=np.float64)
    dx = P[:, 0] - q[0]
    dy = P[:, 1] - q[1]
    dz = P[:, 2] - q[2]
    return int(np.count_nonzero(dx * dx + dy * dy + dz * dz <= t * t))
