"""Union-find merge engine.

Edges are consumed in Kruskal order; each root carries the vertex count,
the number, sum and maximum of the edge weights it has accepted, so every
merge test and every union costs O(1) beyond the near-constant ``find``.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field

import numba
import numpy as np

from .imageio import LabelMap, relabel_dense
from .pixelgraph import EdgeList, neighbor_pairs
from .policies import MergePolicy, Variant, threshold_kernel
from .stats import chi2_lower_quantile_cached, chi2_table

DEFAULT_MIN_SIZE = 20


class UnsortedEdgesError(ValueError):
    pass


@dataclass(frozen=True)
class SegmentStats:
    n_v: int
    n_e: int
    sum_w: float
    max_w: float
    color_sum: tuple[float, ...] = ()

    @property
    def mean_color(self) -> np.ndarray:
        return np.asarray(self.color_sum) / self.n_v


@numba.njit(cache=True)
def _find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


@numba.njit(cache=True)
def _merge_kernel(u, v, w, parent, n_v, n_e, sum_w, max_w, accepted, num, stop_at,
                  code, K, k, c, log_inv_delta, m, chi2_tail, table):
    uses_chi2 = code == 7 or code == 8
    for q in range(w.shape[0]):
        if num <= stop_at:
            break
        a = _find(parent, u[q])
        b = _find(parent, v[q])
        if a == b:
            continue
        wq = w[q]
        ca = math.nan
        cb = math.nan
        if uses_chi2:
            if n_e[a] > 0:
                ca = chi2_lower_quantile_cached(table, n_e[a], chi2_tail)
            if n_e[b] > 0:
                cb = chi2_lower_quantile_cached(table, n_e[b], chi2_tail)
        ta = threshold_kernel(code, n_v[a], n_e[a], sum_w[a], max_w[a], K, k, c, log_inv_delta, m, ca)
        if wq > ta:
            continue
        tb = threshold_kernel(code, n_v[b], n_e[b], sum_w[b], max_w[b], K, k, c, log_inv_delta, m, cb)
        if wq > tb:
            continue
        if n_v[a] < n_v[b]:
            a, b = b, a
        parent[b] = a
        n_v[a] += n_v[b]
        n_e[a] += n_e[b] + 1
        sum_w[a] += sum_w[b] + wq
        max_w[a] = wq
        accepted[q] = True
        num -= 1
    return num


@numba.njit(cache=True)
def _roots(parent):
    out = np.empty(parent.shape[0], dtype=np.int64)
    for i in range(parent.shape[0]):
        out[i] = _find(parent, i)
    return out


class SegmentForest:
    """Disjoint sets over pixels with per-root segment statistics."""

    def __init__(self, n: int):
        if n < 1:
            raise ValueError("forest needs at least one element")
        self.parent = np.arange(n, dtype=np.int64)
        self.n_v = np.ones(n, dtype=np.int64)
        self.n_e = np.zeros(n, dtype=np.int64)
        self.sum_w = np.zeros(n, dtype=np.float64)
        self.max_w = np.zeros(n, dtype=np.float64)
        self.num_segments = n

    def __len__(self) -> int:
        return self.parent.shape[0]

    def find(self, x: int) -> int:
        return int(_find(self.parent, x))

    def roots(self) -> np.ndarray:
        return _roots(self.parent)

    def stats(self, x: int) -> SegmentStats:
        r = self.find(x)
        return SegmentStats(int(self.n_v[r]), int(self.n_e[r]), float(self.sum_w[r]), float(self.max_w[r]))

    def union(self, a: int, b: int, w: float) -> int:
        """Join the sets holding ``a`` and ``b`` through an edge of weight ``w``."""
        a, b = self.find(a), self.find(b)
        if a == b:
            raise ValueError("elements already share a root")
        if self.n_v[a] < self.n_v[b]:
            a, b = b, a
        self.parent[b] = a
        self.n_v[a] += self.n_v[b]
        self.n_e[a] += self.n_e[b] + 1
        self.sum_w[a] += self.sum_w[b] + w
        self.max_w[a] = max(self.max_w[a], self.max_w[b], w)
        self.num_segments -= 1
        return a

    def run(self, edges: EdgeList, policy: MergePolicy, stop_at: int = 0) -> np.ndarray:
        """Feed sorted edges through ``policy``; returns the accepted-edge mask."""
        accepted = np.zeros(len(edges), dtype=np.bool_)
        if policy.variant in (Variant.PLV_ML_CI, Variant.PLV_ML_CEN):
            table = chi2_table(policy.alpha, len(self))
        else:
            table = np.empty(0)
        self.num_segments = int(
            _merge_kernel(
                edges.u, edges.v, edges.w, self.parent, self.n_v, self.n_e, self.sum_w, self.max_w,
                accepted, self.num_segments, stop_at, int(policy.variant), float(policy.K),
                float(policy.k), float(policy.c), policy.log_inv_delta, float(policy.m),
                policy.chi2_tail, table,
            )
        )
        return accepted


@dataclass
class SegmentTable:
    """Final per-segment statistics, indexed by label id."""

    n_v: np.ndarray
    n_e: np.ndarray
    sum_w: np.ndarray
    max_w: np.ndarray

    def __len__(self) -> int:
        return self.n_v.shape[0]

    def __getitem__(self, i: int) -> SegmentStats:
        return SegmentStats(int(self.n_v[i]), int(self.n_e[i]), float(self.sum_w[i]), float(self.max_w[i]))


@dataclass
class SegmentationResult:
    labels: LabelMap
    num_segments: int
    stats: SegmentTable
    policy: MergePolicy
    runtime: float
    connectivity: int = 8
    min_size: int = 1
    forest: SegmentForest | None = field(default=None, repr=False)
    accepted: np.ndarray | None = field(default=None, repr=False)

    def lambda_hats(self) -> np.ndarray:
        return np.array([self.policy.lambda_hat(self.stats[i]) for i in range(len(self.stats))])

    def describe(self) -> dict:
        return {
            "policy": self.policy.describe(),
            "num_segments": self.num_segments,
            "connectivity": self.connectivity,
            "min_size": self.min_size,
            "runtime_s": self.runtime,
        }


def segment(edges: EdgeList, n_pixels: int, policy: MergePolicy, *, shape: tuple[int, int] | None = None,
            stop_at: int = 0, record: bool = False) -> SegmentationResult:
    """Run the merge loop over ``edges`` (must be sorted) without postprocessing.

    ``stop_at`` halts merging once that many segments remain; the count
    controller uses it for the greedy variant, whose threshold is infinite.
    With ``record`` the forest and accepted-edge mask are kept on the result.
    """
    if not edges.sorted and np.any(edges.w[1:] < edges.w[:-1]):
        raise UnsortedEdgesError("edges must be in non-decreasing weight order")
    if shape is None:
        shape = (1, n_pixels)
    if shape[0] * shape[1] != n_pixels:
        raise ValueError(f"shape {shape} does not hold {n_pixels} pixels")
    t0 = time.perf_counter()
    forest = SegmentForest(n_pixels)
    accepted = forest.run(edges, policy, stop_at)
    roots = forest.roots()
    labels = relabel_dense(roots)
    first = np.zeros(forest.num_segments, dtype=np.int64)
    first[labels[::-1]] = roots[::-1]
    table = SegmentTable(forest.n_v[first].copy(), forest.n_e[first].copy(),
                         forest.sum_w[first].copy(), forest.max_w[first].copy())
    runtime = time.perf_counter() - t0
    return SegmentationResult(
        LabelMap(labels.reshape(shape)), forest.num_segments, table, policy, runtime,
        connectivity=edges.connectivity,
        forest=forest if record else None,
        accepted=accepted if record else None,
    )


def spanning_forest(u: np.ndarray, v: np.ndarray, w: np.ndarray, n: int) -> np.ndarray:
    """Kruskal on pre-sorted edges; boolean mask of the minimum spanning forest."""
    forest = SegmentForest(n)
    edges = EdgeList(np.ascontiguousarray(u), np.ascontiguousarray(v), np.ascontiguousarray(w, dtype=np.float64),
                     connectivity=0, sorted=True)
    return forest.run(edges, MergePolicy(Variant.GREEDY))


def verify_stats(forest: SegmentForest, accepted: EdgeList) -> bool:
    """Check every root's statistics against a recount over the accepted edges."""
    roots = forest.roots()
    n = len(forest)
    n_v = np.bincount(roots, minlength=n)
    n_e = np.zeros(n, dtype=np.int64)
    sum_w = np.zeros(n)
    max_w = np.zeros(n)
    for e in accepted:
        ru, rv = roots[e.u], roots[e.v]
        if ru != rv:
            return False
        n_e[ru] += 1
        sum_w[ru] += e.w
        max_w[ru] = max(max_w[ru], e.w)
    is_root = roots == np.arange(n)
    if int(is_root.sum()) != forest.num_segments:
        return False
    r = np.flatnonzero(is_root)
    return bool(
        np.array_equal(forest.n_v[r], n_v[r])
        and np.array_equal(forest.n_e[r], n_e[r])
        and np.array_equal(n_e[r], n_v[r] - 1)
        and np.array_equal(forest.max_w[r], max_w[r])
        and np.allclose(forest.sum_w[r], sum_w[r], rtol=1e-9, atol=1e-12)
    )


def accepted_edges(edges: EdgeList, mask: np.ndarray) -> EdgeList:
    return EdgeList(edges.u[mask], edges.v[mask], edges.w[mask], edges.connectivity, sorted=True)


# ---------------------------------------------------------------------------
# Small-segment removal
# ---------------------------------------------------------------------------


def default_min_size(n_pixels: int, target_segments: int | None = None) -> int:
    """10% of the average expected segment size, or 20 without a target."""
    if not target_segments:
        return DEFAULT_MIN_SIZE
    return max(1, int(0.1 * n_pixels / target_segments))


@numba.njit(cache=True)
def _absorb_kernel(pa, pb, owner, sizes, colors, n_e, sum_w, max_w, min_size):
    # adjacency as linked lists of (possibly stale) segment ids; absorbing a
    # segment splices its list onto the absorber's in O(1) and stale ids are
    # resolved through ``owner`` when read
    S = sizes.shape[0]
    P = pa.shape[0]
    target = np.empty(2 * P, dtype=np.int64)
    nxt = np.full(2 * P, -1, dtype=np.int64)
    head = np.full(S, -1, dtype=np.int64)
    tail = np.full(S, -1, dtype=np.int64)
    for q in range(P):
        for side in range(2):
            e = 2 * q + side
            x = pa[q] if side == 0 else pb[q]
            target[e] = pb[q] if side == 0 else pa[q]
            if head[x] == -1:
                head[x] = e
            else:
                nxt[tail[x]] = e
            tail[x] = e

    # keys pack (size, id) as size * S + id so the order is smallest first, ties by id
    heap = [np.int64(0)]
    heap.pop()
    for i in range(S):
        if sizes[i] < min_size:
            heap.append(sizes[i] * S + i)
    heapq.heapify(heap)
    alive = S
    C = colors.shape[1]
    seen = np.zeros(S, dtype=np.int64)
    stamp = 0
    while len(heap) > 0 and alive > 1:
        key = heapq.heappop(heap)
        size = key // S
        s = key - size * S
        if owner[s] != s or sizes[s] != size or size >= min_size:
            continue
        best = -1
        best_d = np.inf
        stamp += 1
        # walk the list, compacting it to distinct live neighbors as we go
        e = head[s]
        head[s] = -1
        last = -1
        while e != -1:
            following = nxt[e]
            r = _find(owner, target[e])
            if r != s and seen[r] != stamp:
                seen[r] = stamp
                target[e] = r
                nxt[e] = -1
                if last == -1:
                    head[s] = e
                else:
                    nxt[last] = e
                last = e
                d = 0.0
                for ch in range(C):
                    diff = colors[r, ch] / sizes[r] - colors[s, ch] / sizes[s]
                    d += diff * diff
                if d < best_d or (d == best_d and r < best):
                    best_d = d
                    best = r
            e = following
        tail[s] = last
        if best < 0:
            continue
        t = best
        owner[s] = t
        sizes[t] += sizes[s]
        for ch in range(C):
            colors[t, ch] += colors[s, ch]
        n_e[t] += n_e[s]
        sum_w[t] += sum_w[s]
        if max_w[s] > max_w[t]:
            max_w[t] = max_w[s]
        if head[s] != -1:
            if head[t] == -1:
                head[t] = head[s]
            else:
                nxt[tail[t]] = head[s]
            tail[t] = tail[s]
        head[s] = -1
        alive -= 1
        if sizes[t] < min_size:
            heapq.heappush(heap, sizes[t] * S + t)
    return alive


def remove_small_segments(result: SegmentationResult, img, min_size: int) -> SegmentationResult:
    """Merge every segment under ``min_size`` pixels into its closest-colored neighbor.

    Candidates are handled smallest first (ties by id); a segment that is
    still too small after absorbing or being absorbed is revisited.
    """
    if min_size < 1:
        raise ValueError("min_size must be >= 1")
    labels = result.labels.labels
    S = result.num_segments
    sizes = result.stats.n_v.astype(np.int64).copy()
    if min_size == 1 or S == 1 or sizes.min() >= min_size:
        return _replace_min_size(result, min_size)

    t0 = time.perf_counter()
    h, w = labels.shape
    flat = labels.ravel()
    pix = img.data.reshape(-1, img.channels)
    colors = np.stack([np.bincount(flat, weights=pix[:, ch], minlength=S) for ch in range(img.channels)], axis=1)

    pu, pv = neighbor_pairs(h, w, result.connectivity)
    a, b = flat[pu], flat[pv]
    cross = a != b
    lo = np.minimum(a[cross], b[cross])
    hi = np.maximum(a[cross], b[cross])
    pairs = np.unique(lo * S + hi)

    n_e = result.stats.n_e.astype(np.int64).copy()
    sum_w = result.stats.sum_w.astype(np.float64).copy()
    max_w = result.stats.max_w.astype(np.float64).copy()
    owner = np.arange(S, dtype=np.int64)
    alive = _absorb_kernel(pairs // S, pairs % S, owner, sizes, colors, n_e, sum_w, max_w, min_size)
    merged = _roots(owner)[flat]
    new_labels = relabel_dense(merged)
    keep = np.zeros(alive, dtype=np.int64)
    keep[new_labels[::-1]] = merged[::-1]
    table = SegmentTable(sizes[keep], n_e[keep], sum_w[keep], max_w[keep])
    return SegmentationResult(
        LabelMap(new_labels.reshape(h, w)), alive, table, result.policy,
        result.runtime + time.perf_counter() - t0,
        connectivity=result.connectivity, min_size=min_size,
    )


def _replace_min_size(result: SegmentationResult, min_size: int) -> SegmentationResult:
    return SegmentationResult(result.labels, result.num_segments, result.stats, result.policy, result.runtime,
                              result.connectivity, min_size, result.forest, result.accepted)
