"""Segment-count control, adaptive segmentation and the per-segment rate map."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .forest import (
    DEFAULT_MIN_SIZE,
    SegmentationResult,
    default_min_size,
    remove_small_segments,
    segment,
)
from .pixelgraph import DEFAULT_CONNECTIVITY, EdgeList, build_graph, sort_edges
from .policies import MergePolicy, Variant

MAX_ITER = 25


class TargetUnreachable(RuntimeError):
    """No parameter in the search bracket produced the requested count."""

    def __init__(self, message: str, best: SegmentationResult, trace: list[tuple[float, int]]):
        super().__init__(message)
        self.best = best
        self.trace = trace


@dataclass(frozen=True)
class Knob:
    """How a variant's segment count is steered.

    ``increasing`` says whether a larger parameter value yields more segments.
    The search runs on ``log(value)``.
    """

    name: str
    lo: float
    hi: float
    increasing: bool


def knob_for(policy: MergePolicy, n_pixels: int) -> Knob:
    v = policy.variant
    if v == Variant.LV:
        return Knob("K", 1.0, 1e6, increasing=False)
    if v == Variant.CONST_THRESH:
        # an additive constant on weights, so it must reach well below 1
        return Knob("K", 1e-6, 1e6, increasing=False)
    if v == Variant.AREA:
        return Knob("K", 1.0, float(n_pixels) + 1.0, increasing=False)
    if v == Variant.MAXEST_C:
        return Knob("k", 1e-3, 1e6, increasing=False)
    if v == Variant.GREEDY:
        return Knob("stop_at", 1.0, float(n_pixels), increasing=True)
    if v in (Variant.PLV_ML, Variant.PLV_ML_CI, Variant.PLV_ML_CEN):
        # the threshold scales with ln(1/delta): search on that, log-scaled,
        # over delta in [1e-300, 1 - 1e-6]
        return Knob("log_inv_delta", -math.log1p(-1e-6), 300.0 * math.log(10.0), increasing=False)
    raise ValueError(f"{policy.name} has no parameter controlling the segment count")


@dataclass
class CountRun:
    result: SegmentationResult
    target: int
    trace: list[tuple[float, int]] = field(default_factory=list)
    converged: bool = False

    @property
    def param(self) -> float:
        return self.trace[-1][0] if self.trace else math.nan


def _prepare(img, graph: EdgeList | None, connectivity: int) -> EdgeList:
    if graph is None:
        graph = build_graph(img, connectivity)
    return sort_edges(graph)


def run_once(img, graph: EdgeList, policy: MergePolicy, min_size: int, stop_at: int = 0) -> SegmentationResult:
    """Merge loop plus small-segment removal on a prebuilt sorted graph."""
    n = img.width * img.height
    res = segment(graph, n, policy, shape=(img.height, img.width), stop_at=stop_at)
    if min_size > 1:
        res = remove_small_segments(res, img, min_size)
    return res


def _apply(policy: MergePolicy, knob: Knob, value: float) -> tuple[MergePolicy, int]:
    if knob.name == "stop_at":
        return policy, int(round(value))
    if knob.name == "log_inv_delta":
        return policy.with_params(delta=math.exp(-value)), 0
    return policy.with_params(**{knob.name: value}), 0


def control_segment_count(img, policy: MergePolicy, target: int, *, graph: EdgeList | None = None,
                          connectivity: int = DEFAULT_CONNECTIVITY, min_size: int | None = None,
                          postprocess: bool = True, max_iter: int = MAX_ITER,
                          strict: bool = False) -> CountRun:
    """Search the policy's controlling parameter until the final count is near ``target``.

    Success means within ``max(2, 2% of target)`` segments. The closest run
    seen is returned either way; with ``strict`` a miss raises
    :class:`TargetUnreachable` carrying it.
    """
    n = img.width * img.height
    if not 1 <= target <= n:
        raise ValueError(f"target must lie in [1, {n}], got {target}")
    graph = _prepare(img, graph, connectivity)
    if not postprocess:
        min_size = 1
    elif min_size is None:
        min_size = default_min_size(n, target)
    knob = knob_for(policy, n)
    tol = max(2, int(0.02 * target))
    integer_knob = knob.name == "stop_at" or policy.variant == Variant.AREA

    trace: list[tuple[float, int]] = []
    best: SegmentationResult | None = None

    def evaluate(value: float) -> int:
        nonlocal best
        pol, stop_at = _apply(policy, knob, value)
        res = run_once(img, graph, pol, min_size, stop_at)
        trace.append((value, res.num_segments))
        if best is None or abs(res.num_segments - target) < abs(best.num_segments - target):
            best = res
        return res.num_segments

    def done() -> CountRun:
        ok = abs(best.num_segments - target) <= tol
        if strict and not ok:
            raise TargetUnreachable(
                f"reached {best.num_segments} segments, wanted {target} (+-{tol}); "
                f"counts seen: {sorted({c for _, c in trace})}",
                best, trace,
            )
        return CountRun(best, target, trace, ok)

    # orient so that "a" is the end with fewer segments
    a, b = (knob.lo, knob.hi) if knob.increasing else (knob.hi, knob.lo)
    la, lb = math.log(a), math.log(b)
    ca = evaluate(a)
    if abs(ca - target) <= tol or ca > target:
        return done()
    cb = evaluate(b)
    if abs(cb - target) <= tol or cb < target:
        return done()

    for _ in range(max_iter - 2):
        # interpolate log(count) against log(param), kept off the bracket ends
        t = (math.log(target) - math.log(ca)) / (math.log(cb) - math.log(ca))
        t = min(max(t, 0.1), 0.9)
        lm = la + t * (lb - la)
        if integer_knob and abs(math.ceil(math.exp(la)) - math.ceil(math.exp(lb))) <= 1:
            break
        cm = evaluate(math.exp(lm))
        if abs(cm - target) <= tol:
            break
        if cm < target:
            la, ca = lm, cm
        else:
            lb, cb = lm, cm
    return done()


def adaptive_segment(img, m: float = 350.0, delta: float = 0.05, *, policy: MergePolicy | None = None,
                     graph: EdgeList | None = None, connectivity: int = DEFAULT_CONNECTIVITY,
                     min_size: int = DEFAULT_MIN_SIZE) -> SegmentationResult:
    """Single pass at fixed parameters; the segment count is whatever the image yields."""
    if policy is None:
        policy = MergePolicy(Variant.PLV_ML_CEN, m=m, delta=delta)
    graph = _prepare(img, graph, connectivity)
    return run_once(img, graph, policy, min_size)


def lambda_map(result: SegmentationResult) -> np.ndarray:
    """Gray image of each segment's rate estimate, rescaled to [0, 255].

    Infinite (degenerate) rates are drawn at 255; a constant map is 128.
    """
    if not result.policy.probabilistic:
        raise ValueError(f"{result.policy.name} results carry no rate estimate")
    lam = result.lambda_hats()
    finite = np.isfinite(lam)
    values = np.full(lam.shape, 255.0)
    if finite.any():
        lo, hi = lam[finite].min(), lam[finite].max()
        if hi > lo:
            values[finite] = 255.0 * (lam[finite] - lo) / (hi - lo)
        elif finite.all():
            values[:] = 128.0
        else:
            values[finite] = 0.0
    return np.rint(values[result.labels.labels]).astype(np.uint8)


def overlay(rgb: np.ndarray, labels, color=(255, 0, 0)) -> np.ndarray:
    """Input image with segment boundaries painted in ``color``."""
    from .metrics import boundary_map

    rgb = np.asarray(rgb)
    if rgb.ndim == 2:
        rgb = np.repeat(rgb[:, :, None], 3, axis=2)
    out = np.clip(np.rint(rgb), 0, 255).astype(np.uint8).copy()
    out[boundary_map(labels)] = np.asarray(color, dtype=np.uint8)
    return out
