"""Dataset sweeps: every method at every target count on every image.

A dataset directory holds ``images/NAME.{png,ppm,pgm}`` and the matching
``gt/NAME.{pgm,png,csv}``. Counts are matched per image: each (image,
method, S) triple gets its own parameter search.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .control import control_segment_count
from .imageio import DEFAULT_SIGMA, LUV, load_image, load_labelmap
from .metrics import DEFAULT_TOL, boundary_recall, undersegmentation_error
from .pixelgraph import DEFAULT_CONNECTIVITY, build_graph, sort_edges
from .policies import MergePolicy, Variant
from .stats import EDGE_SETS, edge_histograms, fit_loglinear_r2

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".ppm", ".pgm")
GT_SUFFIXES = (".pgm", ".png", ".csv")
NOPOST = "-nopost"
DEFAULT_S_GRID = (200, 600, 1000)
ABLATION_METHODS = ("lv", "greedy", "const", "area", "lv-nopost")

SUMMARY_COLUMNS = ("method", "S_target", "S_achieved_mean", "recall_mean", "ue_mean", "runtime_mean_s")
PER_IMAGE_COLUMNS = ("method", "S_target", "image", "S_achieved_mean", "recall_mean", "ue_mean",
                     "runtime_mean_s", "converged", "size_cv")
ABLATION_COLUMNS = SUMMARY_COLUMNS + ("size_cv_mean",)


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Sample:
    name: str
    image: Path
    gt: Path


@dataclass
class EvalReport:
    image: str
    method: str
    S_target: int
    num_segments: int
    recall: float
    ue: float
    runtime: float
    converged: bool = True
    size_cv: float = 0.0
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class BenchConfig:
    colorspace: str = LUV
    sigma: float = DEFAULT_SIGMA
    connectivity: int = DEFAULT_CONNECTIVITY
    tol: int = DEFAULT_TOL
    min_size: int | None = None
    postprocess: bool = True
    overrides: tuple = ()  # (name, value) pairs applied to every policy


def find_dataset(root) -> list[Sample]:
    """Pair each image with its ground truth; images without one are skipped with a warning."""
    root = Path(root)
    img_dir, gt_dir = root / "images", root / "gt"
    if not img_dir.is_dir():
        raise DatasetError(f"{root}: no images/ directory")
    samples = []
    for path in sorted(p for p in img_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES):
        gt = next((gt_dir / (path.stem + s) for s in GT_SUFFIXES if (gt_dir / (path.stem + s)).is_file()), None)
        if gt is None:
            warnings.warn(f"no ground truth for {path.name}; skipped", stacklevel=2)
            continue
        samples.append(Sample(path.stem, path, gt))
    return samples


def parse_method(tag: str) -> tuple[str, bool]:
    """``"lv-nopost"`` -> ``("lv", False)``; plain tags keep postprocessing."""
    if tag.endswith(NOPOST):
        return tag[: -len(NOPOST)], False
    return tag, True


def make_policy(tag: str, n_pixels: int, target: int, overrides=()) -> tuple[MergePolicy, bool]:
    base, post = parse_method(tag)
    params = dict(overrides)
    policy = MergePolicy.from_name(base, **params)
    if policy.variant == Variant.PLV_ML_CEN and params.get("m") is None:
        # expected true-segment size for a requested count
        policy = policy.with_params(m=max(1.0, n_pixels / target))
    return policy, post


def size_cv(labels) -> float:
    sizes = np.bincount(np.asarray(labels).ravel())
    sizes = sizes[sizes > 0]
    return float(sizes.std() / sizes.mean())


def evaluate_image(img, gt, name: str, methods, s_grid, config: BenchConfig = BenchConfig()) -> list[EvalReport]:
    """All (method, S) runs on one decoded image, sharing its sorted graph."""
    if (img.width, img.height) != (gt.width, gt.height):
        raise DatasetError(f"{name}: image {img.width}x{img.height} vs ground truth {gt.width}x{gt.height}")
    graph = sort_edges(build_graph(img, config.connectivity))
    n = img.width * img.height
    out = []
    for tag in methods:
        for S in s_grid:
            policy, post = make_policy(tag, n, S, config.overrides)
            run = control_segment_count(img, policy, min(S, n), graph=graph, connectivity=config.connectivity,
                                        min_size=config.min_size, postprocess=post and config.postprocess)
            labels = run.result.labels
            out.append(EvalReport(
                image=name,
                method=tag,
                S_target=S,
                num_segments=run.result.num_segments,
                recall=boundary_recall(labels, gt, config.tol),
                ue=undersegmentation_error(labels, gt),
                runtime=run.result.runtime,
                converged=run.converged,
                size_cv=size_cv(labels.labels),
                params=run.result.policy.describe(),
            ))
            log.info("%s %s S=%d -> %d segments, recall %.4f", name, tag, S, out[-1].num_segments, out[-1].recall)
    return out


def _evaluate_sample(sample: Sample, methods, s_grid, config: BenchConfig) -> list[EvalReport]:
    img = load_image(sample.image, config.colorspace, config.sigma)
    gt = load_labelmap(sample.gt)
    return evaluate_image(img, gt, sample.name, methods, s_grid, config)


def sort_reports(reports: list[EvalReport]) -> list[EvalReport]:
    return sorted(reports, key=lambda r: (r.method, r.S_target, r.image))


def summarize(reports: list[EvalReport]) -> list[dict]:
    groups: dict[tuple[str, int], list[EvalReport]] = {}
    for r in sort_reports(reports):
        groups.setdefault((r.method, r.S_target), []).append(r)
    rows = []
    for (method, S), rs in groups.items():
        rows.append({
            "method": method,
            "S_target": S,
            "S_achieved_mean": float(np.mean([r.num_segments for r in rs])),
            "recall_mean": float(np.mean([r.recall for r in rs])),
            "ue_mean": float(np.mean([r.ue for r in rs])),
            "runtime_mean_s": float(np.mean([r.runtime for r in rs])),
            "size_cv_mean": float(np.mean([r.size_cv for r in rs])),
        })
    return rows


def per_image_rows(reports: list[EvalReport]) -> list[dict]:
    return [
        {
            "method": r.method,
            "S_target": r.S_target,
            "image": r.image,
            "S_achieved_mean": r.num_segments,
            "recall_mean": r.recall,
            "ue_mean": r.ue,
            "runtime_mean_s": r.runtime,
            "converged": int(r.converged),
            "size_cv": r.size_cv,
        }
        for r in sort_reports(reports)
    ]


def benchmark(dataset, methods, s_grid=DEFAULT_S_GRID, config: BenchConfig = BenchConfig(),
              workers: int = 1) -> tuple[list[EvalReport], list[dict]]:
    """Run the sweep; returns per-image reports and per-(method, S) summary rows, both sorted.

    ``dataset`` is a directory or a list of :class:`Sample`. With ``workers``
    above 1 images are spread over processes; the output does not depend on it.
    """
    samples = find_dataset(dataset) if isinstance(dataset, (str, Path)) else list(dataset)
    methods = list(methods)
    for tag in methods:
        MergePolicy.from_name(parse_method(tag)[0])  # fail fast on typos
    if not methods or not samples:
        return [], []
    reports: list[EvalReport] = []
    if workers > 1 and len(samples) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_evaluate_sample, s, methods, tuple(s_grid), config) for s in samples]
            for f in futures:
                reports.extend(f.result())
    else:
        for s in samples:
            reports.extend(_evaluate_sample(s, methods, tuple(s_grid), config))
    reports = sort_reports(reports)
    return reports, summarize(reports)


def ablation(dataset, s_grid=DEFAULT_S_GRID, config: BenchConfig = BenchConfig(), workers: int = 1):
    """LV against its reduced versions: greedy, constant threshold, area, and no small-segment removal."""
    return benchmark(dataset, ABLATION_METHODS, s_grid, config, workers)


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6f}"
    return str(v)


def write_csv(path, rows: list[dict], columns) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])
    return path


def histogram_report(img, gt, connectivity: int = DEFAULT_CONNECTIVITY):
    """Histogram rows and per-set ``(mean, R^2)`` of the log-linear fit."""
    hist = edge_histograms(img, gt, connectivity)
    fits = []
    for name in EDGE_SETS:
        try:
            r2 = fit_loglinear_r2(hist.centers, hist.counts[name])
        except ValueError:
            r2 = math.nan
        fits.append({"set": name, "edges": int(hist.weights[name].size), "mean": hist.mean(name), "r2": r2})
    rows = [dict(zip(("set", "bin_center", "count", "ln_count"), r)) for r in hist.rows()]
    return hist, rows, fits


HISTOGRAM_COLUMNS = ("set", "bin_center", "count", "ln_count")
FIT_COLUMNS = ("set", "edges", "mean", "r2")
