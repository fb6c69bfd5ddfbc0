"""Command-line interface: ``plvseg {segment,benchmark,ablation,histogram,make-corpus}``.

Exit codes: 0 success, 1 usage or invalid parameters, 2 I/O problems,
3 requested segment count not reached.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
import time
import warnings
from pathlib import Path

from . import __version__
from .benchmark import (
    ABLATION_COLUMNS,
    ABLATION_METHODS,
    DEFAULT_S_GRID,
    FIT_COLUMNS,
    HISTOGRAM_COLUMNS,
    PER_IMAGE_COLUMNS,
    SUMMARY_COLUMNS,
    BenchConfig,
    DatasetError,
    benchmark,
    find_dataset,
    histogram_report,
    parse_method,
    per_image_rows,
    write_csv,
)
from .control import TargetUnreachable, control_segment_count, lambda_map, overlay, run_once
from .forest import DEFAULT_MIN_SIZE
from .imageio import DEFAULT_SIGMA, GRAY, LUV, RGB, load_image, load_labelmap, read_image, save_image, save_labelmap
from .metrics import DEFAULT_TOL
from .pixelgraph import build_graph, sort_edges
from .policies import METHOD_NAMES, MergePolicy

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_UNREACHABLE = 0, 1, 2, 3
POLICY_FLAGS = ("K", "k", "c", "delta", "alpha", "m")

log = logging.getLogger("plvseg")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _int_list(text: str) -> list[int]:
    try:
        values = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError(f"expected positive integers, got {text!r}")
    return values


def _color(text: str) -> tuple[int, int, int]:
    parts = text.split(",")
    try:
        rgb = tuple(int(p) for p in parts)
    except ValueError:
        rgb = ()
    if len(rgb) != 3 or not all(0 <= x <= 255 for x in rgb):
        raise argparse.ArgumentTypeError(f"expected R,G,B with values in 0..255, got {text!r}")
    return rgb


def _add_image_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--colorspace", type=str.lower, choices=tuple(c.lower() for c in (GRAY, RGB, LUV)),
                   default=LUV.lower())
    p.add_argument("--sigma", type=float, default=DEFAULT_SIGMA, help="pre-smoothing Gaussian sigma (0 disables)")
    p.add_argument("--connectivity", type=int, choices=(4, 8), default=8)


def _add_policy_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--K", type=float, help="LV / const / area scale")
    p.add_argument("--k", type=float, help="maxest-c multiplier")
    p.add_argument("--c", type=float, help="additive threshold slack")
    p.add_argument("--delta", type=float, help="significance level of the merge test")
    p.add_argument("--alpha", type=float, help="confidence-interval level")
    p.add_argument("--m", type=float, help="expected true-segment size (plv-ml-cen)")
    p.add_argument("--min-size", type=_positive_int, help="small-segment removal threshold")
    p.add_argument("--no-postprocess", action="store_true", help="keep segments below the size threshold")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="plvseg", description="Graph-based superpixel segmentation and evaluation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("segment", help="segment one image")
    p.add_argument("image", type=Path)
    p.add_argument("--method", choices=tuple(METHOD_NAMES), default="lv")
    _add_policy_options(p)
    _add_image_options(p)
    p.add_argument("--segments", type=_positive_int, help="search the method's parameter for this many segments")
    p.add_argument("--out-dir", type=Path, default=Path("."))
    p.add_argument("--lambda-map", action="store_true", help="also write the per-segment rate image (plv-* only)")
    p.add_argument("--overlay-color", type=_color, default=(255, 0, 0), metavar="R,G,B")

    for name, helptext in (("benchmark", "evaluate methods over a dataset"),
                           ("ablation", "LV against its reduced versions")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("dataset", type=Path, help="directory with images/ and gt/")
        if name == "benchmark":
            p.add_argument("--method", dest="methods", action="append",
                           help="method tag, repeatable; a '-nopost' suffix disables small-segment removal")
        p.add_argument("--S", dest="s_grid", type=_int_list, default=list(DEFAULT_S_GRID),
                       help="comma-separated target counts")
        _add_policy_options(p)
        _add_image_options(p)
        p.add_argument("--tol", type=int, default=DEFAULT_TOL, help="boundary-recall tolerance in pixels")
        p.add_argument("--workers", type=_positive_int, default=1)
        p.add_argument("--out-dir", type=Path, default=Path("."))

    p = sub.add_parser("histogram", help="edge-weight histograms against a ground truth")
    p.add_argument("image", type=Path)
    p.add_argument("gt", type=Path)
    _add_image_options(p)
    p.add_argument("--out-dir", type=Path, default=Path("."))

    p = sub.add_parser("make-corpus", help="write the synthetic mosaic dataset")
    p.add_argument("out", type=Path)
    p.add_argument("--count", type=_positive_int, default=25)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _policy_params(args) -> dict:
    return {name: getattr(args, name) for name in POLICY_FLAGS if getattr(args, name, None) is not None}


def _write_atomically(outputs: dict[Path, callable]) -> list[Path]:
    """Write every output to a temporary sibling first; publish all or nothing."""
    staged = []
    try:
        for path, writer in outputs.items():
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(prefix=".tmp-", suffix=path.suffix, dir=path.parent)
            os.close(fd)
            staged.append((Path(tmp), path))
            writer(Path(tmp))
    except BaseException:
        for tmp, _ in staged:
            tmp.unlink(missing_ok=True)
            # csv label maps leave a json sidecar
            tmp.with_name(tmp.name + ".json").unlink(missing_ok=True)
        raise
    for tmp, path in staged:
        os.replace(tmp, path)
    return [p for _, p in staged]


def _write_text(text: str):
    return lambda p: p.write_text(text)


def cmd_segment(args) -> int:
    params = _policy_params(args)
    policy = MergePolicy.from_name(args.method, **params)
    if "m" in params and not policy.probabilistic:
        log.warning("--m only affects the plv-* methods; ignored for %s", policy.name)
    if args.lambda_map and not policy.probabilistic:
        raise UsageError(f"--lambda-map needs a plv-* method, not {policy.name}")

    img = load_image(args.image, args.colorspace, args.sigma)
    shown = read_image(args.image)
    n = img.width * img.height
    t0 = time.perf_counter()
    graph = sort_edges(build_graph(img, args.connectivity))
    trace = []
    if args.segments is not None:
        if args.segments > n:
            raise UsageError(f"--segments {args.segments} exceeds the {n} pixels of the image")
        run = control_segment_count(img, policy, args.segments, graph=graph, connectivity=args.connectivity,
                                    min_size=args.min_size, postprocess=not args.no_postprocess, strict=True)
        result, trace = run.result, run.trace
    else:
        min_size = 1 if args.no_postprocess else (args.min_size or DEFAULT_MIN_SIZE)
        result = run_once(img, graph, policy, min_size)
    elapsed = time.perf_counter() - t0

    stem = args.image.stem
    out = args.out_dir
    summary = {
        "config": {
            "command": "segment",
            "image": str(args.image),
            "method": result.policy.name,
            "policy": result.policy.describe(),
            "colorspace": args.colorspace,
            "sigma": args.sigma,
            "connectivity": args.connectivity,
            "segments_target": args.segments,
            "min_size": result.min_size,
            "postprocess": not args.no_postprocess,
            "weight_fn": "gray_abs" if img.channels == 1 else "euclid",
        },
        "result": {
            "num_segments": result.num_segments,
            "width": img.width,
            "height": img.height,
            "search_trace": [[float(v), int(c)] for v, c in trace],
        },
        "metadata": {
            "version": __version__,
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "runtime_s": elapsed,
        },
    }
    outputs = {
        out / f"{stem}_labels.pgm": lambda p: save_labelmap(result.labels, p),
        out / f"{stem}_overlay.png": lambda p: save_image(p, overlay(shown, result.labels, args.overlay_color)),
        out / f"{stem}_summary.json": _write_text(json.dumps(summary, indent=2) + "\n"),
    }
    if args.lambda_map:
        lam = lambda_map(result)
        outputs[out / f"{stem}_lambda.png"] = lambda p: save_image(p, lam)
    for path in _write_atomically(outputs):
        log.info("wrote %s", path)
    print(f"{stem}: {result.num_segments} segments ({result.policy.name}) in {elapsed:.3f}s")
    return EXIT_OK


def _bench_config(args) -> BenchConfig:
    params = _policy_params(args)
    return BenchConfig(colorspace=args.colorspace, sigma=args.sigma, connectivity=args.connectivity, tol=args.tol,
                       min_size=args.min_size, postprocess=not args.no_postprocess,
                       overrides=tuple(sorted(params.items())))


def _run_sweep(args, methods, prefix: str, summary_columns) -> int:
    with warnings.catch_warnings(record=True) as skipped:
        warnings.simplefilter("always")
        samples = find_dataset(args.dataset)
    for w in skipped:
        log.warning("%s", w.message)
    if not samples:
        raise DatasetError(f"{args.dataset}: no images with ground truth")
    for tag in methods:
        MergePolicy.from_name(parse_method(tag)[0])
    if "m" in _policy_params(args) and not any(parse_method(t)[0].startswith("plv-") for t in methods):
        log.warning("--m only affects the plv-* methods")
    reports, summary = benchmark(samples, methods, args.s_grid, _bench_config(args), workers=args.workers)
    out = args.out_dir
    _write_atomically({
        out / f"{prefix}_summary.csv": lambda p: write_csv(p, summary, summary_columns),
        out / f"{prefix}_per_image.csv": lambda p: write_csv(p, per_image_rows(reports), PER_IMAGE_COLUMNS),
    })
    for row in summary:
        print(f"{row['method']:>12s} S={row['S_target']:<5d} segments={row['S_achieved_mean']:8.1f} "
              f"recall={row['recall_mean']:.4f} ue={row['ue_mean']:.4f}")
    if skipped:
        print(f"{len(skipped)} image(s) without ground truth were skipped", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def cmd_benchmark(args) -> int:
    methods = args.methods or ["lv", "plv-ml-cen"]
    return _run_sweep(args, methods, "benchmark", SUMMARY_COLUMNS)


def cmd_ablation(args) -> int:
    return _run_sweep(args, list(ABLATION_METHODS), "ablation", ABLATION_COLUMNS)


def cmd_histogram(args) -> int:
    img = load_image(args.image, args.colorspace, args.sigma)
    gt = load_labelmap(args.gt)
    _, rows, fits = histogram_report(img, gt, args.connectivity)
    stem = args.image.stem
    _write_atomically({
        args.out_dir / f"{stem}_histogram.csv": lambda p: write_csv(p, rows, HISTOGRAM_COLUMNS),
        args.out_dir / f"{stem}_histogram_fit.csv": lambda p: write_csv(p, fits, FIT_COLUMNS),
    })
    for f in fits:
        print(f"{f['set']:>16s} edges={f['edges']:8d} mean={f['mean']:8.3f} r2={f['r2']:.4f}")
    return EXIT_OK


def cmd_make_corpus(args) -> int:
    from .corpus import make_corpus, write_corpus

    images = make_corpus(args.count, seed=args.seed)
    write_corpus(images, args.out)
    print(f"wrote {len(images)} images to {args.out}")
    return EXIT_OK


COMMANDS = {
    "segment": cmd_segment,
    "benchmark": cmd_benchmark,
    "ablation": cmd_ablation,
    "histogram": cmd_histogram,
    "make-corpus": cmd_make_corpus,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except TargetUnreachable as exc:
        print(f"plvseg: {exc}", file=sys.stderr)
        return EXIT_UNREACHABLE
    except (OSError, DatasetError) as exc:
        print(f"plvseg: {exc}", file=sys.stderr)
        return EXIT_IO
    except (UsageError, ValueError) as exc:
        # unsupported or corrupt inputs surface as ValueError subclasses from imageio
        from .imageio import CorruptHeaderError, UnsupportedFormatError

        code = EXIT_IO if isinstance(exc, (CorruptHeaderError, UnsupportedFormatError)) else EXIT_USAGE
        print(f"plvseg: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
