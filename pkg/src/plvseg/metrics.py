"""Boundary recall and undersegmentation error."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

DEFAULT_TOL = 2
UE_OVERLAP = 0.05


def _grid(x) -> np.ndarray:
    return np.asarray(getattr(x, "labels", x))


def _check_shapes(pred: np.ndarray, gt: np.ndarray) -> None:
    if pred.shape != gt.shape:
        raise ValueError(f"label maps differ in size: {pred.shape} vs {gt.shape}")


def boundary_map(labels) -> np.ndarray:
    """Pixels whose right or lower neighbor carries a different label."""
    labels = _grid(labels)
    b = np.zeros(labels.shape, dtype=bool)
    b[:, :-1] |= labels[:, :-1] != labels[:, 1:]
    b[:-1, :] |= labels[:-1, :] != labels[1:, :]
    return b


def boundary_recall(pred, gt, tol: int = DEFAULT_TOL) -> float:
    """Fraction of ground-truth boundary pixels within Chebyshev distance ``tol`` of a predicted one."""
    pred, gt = _grid(pred), _grid(gt)
    _check_shapes(pred, gt)
    if tol < 0:
        raise ValueError("tolerance must be nonnegative")
    gb = boundary_map(gt)
    total = int(gb.sum())
    if total == 0:
        return 1.0
    pb = boundary_map(pred)
    if tol > 0:
        pb = ndimage.binary_dilation(pb, structure=np.ones((2 * tol + 1, 2 * tol + 1), dtype=bool))
    return float((gb & pb).sum()) / total


def undersegmentation_error(pred, gt, overlap: float = UE_OVERLAP) -> float:
    """Mean over GT segments of the relative excess area of the superpixels touching it.

    A superpixel counts toward a GT segment when more than ``overlap`` of its
    own area lies inside that segment.
    """
    pred, gt = _grid(pred), _grid(gt)
    _check_shapes(pred, gt)
    _, p = np.unique(pred.ravel(), return_inverse=True)
    _, g = np.unique(gt.ravel(), return_inverse=True)
    n_p = int(p.max()) + 1
    n_g = int(g.max()) + 1
    p_size = np.bincount(p, minlength=n_p)
    g_size = np.bincount(g, minlength=n_g)

    pair, inter = np.unique(g.astype(np.int64) * n_p + p, return_counts=True)
    gi = pair // n_p
    pj = pair % n_p
    counted = inter > overlap * p_size[pj]
    covered = np.bincount(gi[counted], weights=p_size[pj[counted]], minlength=n_g)
    return float(np.mean((covered - g_size) / g_size))
