"""Bagged regression trees and their representation as a weighting matrix.

Trees are grown on the A2 half of a split. The forest prediction on A1 is
then written as ``f_hat = Omega @ D[A1]`` where ``Omega[i, j]`` averages,
over trees, the indicator that A1 rows ``i`` and ``j`` share a leaf,
normalised by the number of A1 rows in that leaf. ``Omega`` never looks at
``D[A1]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numba
import numpy as np

from .errors import SizeError

KINDS = ("forest", "basis", "boosting", "full-sample-forest")


@dataclass(frozen=True)
class ForestParams:
    num_trees: int = 200
    mtry: int | None = None
    min_leaf: int = 5
    sample_fraction: float = 1.0
    replace: bool = True
    max_depth: int | None = None
    seed: int = 0

    def resolved_mtry(self, p: int) -> int:
        if self.mtry is None:
            return max(1, p // 3)
        return int(min(max(1, self.mtry), p))


@numba.njit(cache=True)
def _presorted(order, counts):
    """Bootstrap rows sorted by each feature, from the per-feature order of
    the distinct training rows and the bootstrap multiplicities."""
    p, n = order.shape
    m = counts.sum()
    out = np.empty((p, m), dtype=np.int64)
    for f in range(p):
        k = 0
        for t in range(n):
            r = order[f, t]
            for _ in range(counts[r]):
                out[f, k] = r
                k += 1
    return out


@numba.njit(cache=True)
def _grow_tree(x, y, srt, keys, mtry, min_leaf, max_depth):
    # srt[f, lo:hi] holds the node's bootstrap rows sorted by feature f.
    p, m = srt.shape
    cap = 2 * m + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    buf = np.empty(m, dtype=np.int64)
    st_node = np.empty(cap, dtype=np.int64)
    st_lo = np.empty(cap, dtype=np.int64)
    st_hi = np.empty(cap, dtype=np.int64)
    st_depth = np.empty(cap, dtype=np.int64)
    st_node[0] = 0
    st_lo[0] = 0
    st_hi[0] = m
    st_depth[0] = 0
    sp = 1
    n_nodes = 1
    while sp > 0:
        sp -= 1
        node = st_node[sp]
        lo = st_lo[sp]
        hi = st_hi[sp]
        depth = st_depth[sp]
        cnt = hi - lo
        if cnt < 2 * min_leaf:
            continue
        if max_depth >= 0 and depth >= max_depth:
            continue
        mean = 0.0
        ss = 0.0
        for t in range(lo, hi):
            v = y[srt[0, t]]
            mean += v
            ss += v * v
        mean /= cnt
        sse = 0.0
        for t in range(lo, hi):
            v = y[srt[0, t]] - mean
            sse += v * v
        if sse == 0.0 or sse <= 1e-20 * ss:
            continue
        cand = np.sort(np.argsort(keys[node])[:mtry])
        best = 1e-12 * sse
        best_f = -1
        best_thr = 0.0
        for ci in range(cand.shape[0]):
            f = cand[ci]
            s_left = 0.0
            for t in range(lo, hi - 1):
                r = srt[f, t]
                s_left += y[r] - mean
                n_left = t - lo + 1
                if n_left < min_leaf:
                    continue
                n_right = cnt - n_left
                if n_right < min_leaf:
                    break
                a = x[r, f]
                b = x[srt[f, t + 1], f]
                if a == b:
                    continue
                red = s_left * s_left * cnt / (n_left * n_right)
                if red > best + 1e-12 * best:
                    best = red
                    best_f = f
                    thr = a + (b - a) / 2.0
                    if thr >= b:
                        thr = a
                    best_thr = thr
        if best_f < 0:
            continue
        nl = 0
        for f in range(p):
            nl = 0
            nr = 0
            for t in range(lo, hi):
                r = srt[f, t]
                if x[r, best_f] <= best_thr:
                    srt[f, lo + nl] = r
                    nl += 1
                else:
                    buf[nr] = r
                    nr += 1
            for t in range(nr):
                srt[f, lo + nl + t] = buf[t]
        feature[node] = best_f
        threshold[node] = best_thr
        lch = n_nodes
        rch = n_nodes + 1
        n_nodes += 2
        left[node] = lch
        right[node] = rch
        st_node[sp] = rch
        st_lo[sp] = lo + nl
        st_hi[sp] = hi
        st_depth[sp] = depth + 1
        sp += 1
        st_node[sp] = lch
        st_lo[sp] = lo
        st_hi[sp] = lo + nl
        st_depth[sp] = depth + 1
        sp += 1
    return feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes]


@numba.njit(cache=True)
def _apply_tree(feature, threshold, left, right, x):
    n = x.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if x[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@numba.njit(cache=True)
def _leaf_weights(member_leaves, query_leaves, n_nodes):
    """Average over trees of leaf co-membership, normalised by member counts."""
    n_m = member_leaves.shape[0]
    n_q = query_leaves.shape[0]
    n_trees = member_leaves.shape[1]
    omega = np.zeros((n_q, n_m))
    empty = 0
    inv_s = 1.0 / n_trees
    for s in range(n_trees):
        nn = n_nodes[s]
        count = np.zeros(nn + 1, dtype=np.int64)
        for j in range(n_m):
            count[member_leaves[j, s] + 1] += 1
        start = np.cumsum(count)
        pos = start[:-1].copy()
        members = np.empty(n_m, dtype=np.int64)
        for j in range(n_m):
            leaf = member_leaves[j, s]
            members[pos[leaf]] = j
            pos[leaf] += 1
        for i in range(n_q):
            leaf = query_leaves[i, s]
            lo = start[leaf]
            hi = start[leaf + 1]
            c = hi - lo
            if c == 0:
                empty += 1
                for j in range(n_m):
                    omega[i, j] += inv_s / n_m
            else:
                w = inv_s / c
                for t in range(lo, hi):
                    omega[i, members[t]] += w
    return omega, empty


@dataclass(frozen=True)
class RegressionTree:
    """A fitted CART tree. Internal nodes have ``feature >= 0``; leaves have -1."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    boot: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def leaf_assign(self, c: np.ndarray) -> np.ndarray:
        c = np.ascontiguousarray(c, dtype=float)
        if c.ndim == 1:
            c = c.reshape(1, -1)
        return _apply_tree(self.feature, self.threshold, self.left, self.right, c)


@dataclass(frozen=True)
class Forest:
    trees: tuple
    params: ForestParams

    def apply(self, c: np.ndarray) -> np.ndarray:
        """Leaf ids, shape ``(n_rows, num_trees)``."""
        c = np.ascontiguousarray(c, dtype=float)
        out = np.empty((c.shape[0], len(self.trees)), dtype=np.int64)
        for s, tree in enumerate(self.trees):
            out[:, s] = tree.leaf_assign(c)
        return out


@dataclass(frozen=True)
class WeightMatrix:
    omega: np.ndarray
    kind: str
    empty_leaf_events: int = 0
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown weight-matrix kind {self.kind!r}")

    @property
    def n1(self) -> int:
        return self.omega.shape[0]

    @cached_property
    def symmetric(self) -> bool:
        om = self.omega
        return bool(np.array_equal(om, om.T))

    @cached_property
    def gram(self) -> np.ndarray:
        """``Omega^T Omega``, shared by every violation order of a split."""
        om = self.omega
        g = om @ om if self.symmetric else om.T @ om
        return (g + g.T) / 2.0

    def predict(self, d: np.ndarray) -> np.ndarray:
        return self.omega @ np.asarray(d, dtype=float)


def fit_forest(c: np.ndarray, d: np.ndarray, params: ForestParams = ForestParams()) -> Forest:
    """Grow ``params.num_trees`` CART trees of ``d`` on covariate rows ``c``."""
    c = np.ascontiguousarray(c, dtype=float)
    d = np.ascontiguousarray(d, dtype=float).reshape(-1)
    n, p = c.shape
    if params.num_trees < 1:
        raise ValueError("num_trees must be >= 1")
    if params.min_leaf < 1:
        raise ValueError("min_leaf must be >= 1")
    if n < params.min_leaf:
        raise SizeError(f"{n} training rows cannot support min_leaf={params.min_leaf}")
    mtry = params.resolved_mtry(p)
    m = max(1, int(round(params.sample_fraction * n)))
    max_depth = -1 if params.max_depth is None else int(params.max_depth)
    order = np.ascontiguousarray(np.argsort(c, axis=0, kind="stable").T)
    children = np.random.SeedSequence(params.seed).spawn(params.num_trees)
    trees = []
    for child in children:
        rng = np.random.default_rng(child)
        if params.replace:
            boot = rng.integers(0, n, size=m)
        else:
            boot = np.sort(rng.choice(n, size=min(m, n), replace=False))
        keys = rng.random((2 * len(boot) + 1, p))
        counts = np.bincount(boot, minlength=n).astype(np.int64)
        srt = _presorted(order, counts)
        f, t, lft, rgt = _grow_tree(c, d, srt, keys, mtry, params.min_leaf, max_depth)
        trees.append(RegressionTree(f, t, lft, rgt, boot))
    return Forest(trees=tuple(trees), params=params)


def forest_weights(forest: Forest, c_members: np.ndarray, c_query: np.ndarray | None = None,
                   kind: str = "forest") -> WeightMatrix:
    """Weighting matrix of ``forest`` over the member rows ``c_members``.

    ``c_query`` defaults to the members themselves, giving the square
    ``n1 x n1`` matrix. A query landing in a leaf with no members receives a
    uniform row from that tree; such events are counted.
    """
    members = forest.apply(c_members)
    queries = members if c_query is None else forest.apply(c_query)
    n_nodes = np.array([t.n_nodes for t in forest.trees], dtype=np.int64)
    omega, empty = _leaf_weights(members, queries, n_nodes)
    if c_query is None:
        omega = (omega + omega.T) / 2.0
    return WeightMatrix(omega=omega, kind=kind, empty_leaf_events=int(empty))


def full_sample_weights(c: np.ndarray, d: np.ndarray, params: ForestParams = ForestParams()) -> WeightMatrix:
    """Forest trained and evaluated on every row (no split)."""
    forest = fit_forest(c, d, params)
    return forest_weights(forest, c, kind="full-sample-forest")
