"""Pixel-adjacency graph and its Kruskal-ordered edge stream."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

GRAY_ABS = "GRAY_ABS"
EUCLID = "EUCLID"
WEIGHT_FNS = (GRAY_ABS, EUCLID)
DEFAULT_CONNECTIVITY = 8

# (dy, dx) offsets; each unordered neighbor pair appears exactly once
_OFFSETS = {
    4: ((0, 1), (1, 0)),
    8: ((0, 1), (1, 0), (1, 1), (1, -1)),
}


class WeightedEdge(NamedTuple):
    u: int
    v: int
    w: float


@dataclass(frozen=True)
class EdgeList:
    """Edges as parallel arrays ``u < v`` (flat pixel indices) and weights ``w``."""

    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    connectivity: int
    sorted: bool = False

    def __post_init__(self):
        for arr in (self.u, self.v, self.w):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return int(self.w.shape[0])

    def __iter__(self) -> Iterator[WeightedEdge]:
        for u, v, w in zip(self.u.tolist(), self.v.tolist(), self.w.tolist()):
            yield WeightedEdge(u, v, w)


def expected_edge_count(width: int, height: int, connectivity: int) -> int:
    if connectivity == 4:
        return 2 * width * height - width - height
    if connectivity == 8:
        return 4 * width * height - 3 * width - 3 * height + 2
    raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")


def neighbor_pairs(height: int, width: int, connectivity: int) -> tuple[np.ndarray, np.ndarray]:
    """Flat index arrays (u, v) of every neighboring pixel pair, u < v."""
    if connectivity not in _OFFSETS:
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    idx = np.arange(height * width, dtype=np.int64).reshape(height, width)
    us, vs = [], []
    for dy, dx in _OFFSETS[connectivity]:
        ys = slice(0, height - dy)
        yd = slice(dy, height)
        if dx >= 0:
            xs, xd = slice(0, width - dx), slice(dx, width)
        else:
            xs, xd = slice(-dx, width), slice(0, width + dx)
        us.append(idx[ys, xs].ravel())
        vs.append(idx[yd, xd].ravel())
    return np.concatenate(us), np.concatenate(vs)


def build_graph(img, connectivity: int = DEFAULT_CONNECTIVITY, weight_fn: str | None = None) -> EdgeList:
    """One edge per neighboring pixel pair, weighted by pixel dissimilarity.

    ``weight_fn`` defaults to GRAY_ABS for single-channel images and EUCLID
    otherwise.
    """
    if weight_fn is None:
        weight_fn = GRAY_ABS if img.channels == 1 else EUCLID
    weight_fn = weight_fn.upper()
    if weight_fn not in WEIGHT_FNS:
        raise ValueError(f"unknown weight function {weight_fn!r}")
    if weight_fn == GRAY_ABS and img.channels != 1:
        raise ValueError(f"GRAY_ABS needs a single-channel image, got {img.channels} channels")

    u, v = neighbor_pairs(img.height, img.width, connectivity)
    pix = img.data.reshape(-1, img.channels)
    diff = pix[u] - pix[v]
    if weight_fn == GRAY_ABS:
        w = np.abs(diff[:, 0])
    else:
        w = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return EdgeList(u, v, w.astype(np.float64), connectivity, sorted=False)


def sort_edges(edges: EdgeList) -> EdgeList:
    """Non-decreasing weight order, ties broken by (u, v)."""
    if edges.sorted:
        return edges
    order = np.lexsort((edges.v, edges.u, edges.w))
    return EdgeList(edges.u[order], edges.v[order], edges.w[order], edges.connectivity, sorted=True)


def is_sorted(w: np.ndarray) -> bool:
    return bool(np.all(w[1:] >= w[:-1])) if w.size > 1 else True
