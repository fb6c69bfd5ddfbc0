"""Statistical kernel: maximum estimation, exponential fits, chi-square quantiles.

The incomplete gamma routines are compiled with numba so the merge kernel in
:mod:`plvseg.forest` can evaluate chi-square quantiles on demand without
leaving nopython mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

EPS = 1e-15
_MAX_ITER = 10_000_000
_TINY = 1e-300


class DegenerateFitError(ValueError):
    """Raised when an operation needs a finite rate but the fit has none."""


# ---------------------------------------------------------------------------
# Regularized incomplete gamma
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _log_prefactor(a, x):
    return a * math.log(x) - x - math.lgamma(a)


@numba.njit(cache=True)
def _gamma_series(a, x):
    # P(a, x) by power series, valid for x < a + 1
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * EPS:
            break
    return total * math.exp(_log_prefactor(a, x))


@numba.njit(cache=True)
def _gamma_cfrac(a, x):
    # Q(a, x) by modified Lentz continued fraction, valid for x >= a + 1
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < EPS:
            break
    return h * math.exp(_log_prefactor(a, x))


@numba.njit(cache=True)
def gammainc_lower(a, x):
    """Regularized lower incomplete gamma P(a, x)."""
    if x <= 0.0:
        return 0.0
    if x < a + 1.0:
        return _gamma_series(a, x)
    return 1.0 - _gamma_cfrac(a, x)


@numba.njit(cache=True)
def gammainc_upper(a, x):
    """Regularized upper incomplete gamma Q(a, x)."""
    if x <= 0.0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_cfrac(a, x)


@numba.njit(cache=True)
def chi2_sf(x, nu):
    """Upper-tail probability P(X > x) for X ~ chi2(nu)."""
    return gammainc_upper(0.5 * nu, 0.5 * x)


@numba.njit(cache=True)
def _chi2_logpdf(x, nu):
    a = 0.5 * nu
    return (a - 1.0) * math.log(x) - 0.5 * x - a * math.log(2.0) - math.lgamma(a)


@numba.njit(cache=True)
def _norm_ppf(p):
    # Acklam's rational approximation, relative error ~1e-9; only a seed
    a1, a2, a3 = -3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02
    a4, a5, a6 = 1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00
    b1, b2, b3 = -5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02
    b4, b5 = 6.680131188771972e01, -1.328068155288572e01
    c1, c2, c3 = -7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00
    c4, c5, c6 = -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00
    d1, d2, d3, d4 = 7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00, 3.754408661907416e00
    plow = 0.02425
    if p < plow:
        q = math.sqrt(-2.0 * math.log(p))
        return (((((c1 * q + c2) * q + c3) * q + c4) * q + c5) * q + c6) / (
            (((d1 * q + d2) * q + d3) * q + d4) * q + 1.0
        )
    if p > 1.0 - plow:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        return -(((((c1 * q + c2) * q + c3) * q + c4) * q + c5) * q + c6) / (
            (((d1 * q + d2) * q + d3) * q + d4) * q + 1.0
        )
    q = p - 0.5
    r = q * q
    return (((((a1 * r + a2) * r + a3) * r + a4) * r + a5) * r + a6) * q / (
        ((((b1 * r + b2) * r + b3) * r + b4) * r + b5) * r + 1.0
    )


@numba.njit(cache=True)
def _chi2_isf(p, nu):
    a = 0.5 * nu
    lower_target = 1.0 - p
    use_lower = p > 0.5

    # Wilson-Hilferty seed
    z = _norm_ppf(1.0 - p)
    h = 2.0 / (9.0 * nu)
    x = nu * (1.0 - h + z * math.sqrt(h)) ** 3
    if not (x > 0.0) or not math.isfinite(x):
        x = nu

    # bracket [lo, hi] with sf(lo) >= p >= sf(hi)
    lo = 0.0
    hi = x
    while chi2_sf(hi, nu) > p:
        lo = hi
        hi *= 2.0
    if lo == 0.0:
        probe = x
        while probe > 1e-300 and chi2_sf(probe, nu) < p:
            hi = probe
            probe *= 0.5
        if probe > 1e-300:
            lo = probe

    for _ in range(400):
        if use_lower:
            f = gammainc_lower(a, 0.5 * x) - lower_target
        else:
            f = p - gammainc_upper(a, 0.5 * x)
        # f is increasing in x in both branches
        if f > 0.0:
            hi = x
        else:
            lo = x
        dens = math.exp(_chi2_logpdf(x, nu)) if x > 0.0 else 0.0
        step_ok = False
        if dens > 0.0 and math.isfinite(dens):
            nx = x - f / dens
            if lo < nx < hi:
                step_ok = True
        if not step_ok:
            if lo > 0.0:
                nx = math.sqrt(lo * hi)
            else:
                nx = 0.5 * (lo + hi)
        if abs(nx - x) <= 1e-15 * abs(x):
            return nx
        x = nx
        if hi - lo <= 1e-15 * hi:
            break
    return x


def chi2_tail_quantile(p: float, nu: int) -> float:
    """Value x with P(X > x) = p for X ~ chi2(nu)."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"tail probability must lie in (0, 1), got {p}")
    if nu < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {nu}")
    return float(_chi2_isf(float(p), float(nu)))


# ---------------------------------------------------------------------------
# Chi-square factor table used by the merge kernel
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def chi2_lower_quantile_cached(table, n_e, p_upper):
    """chi2 value with upper tail ``p_upper`` and 2*n_e dof, memoized in ``table``.

    ``table`` holds NaN for entries not yet computed; index is n_e.
    """
    if n_e < table.shape[0]:
        v = table[n_e]
        if v == v:
            return v
        v = _chi2_isf(p_upper, 2.0 * n_e)
        table[n_e] = v
        return v
    return _chi2_isf(p_upper, 2.0 * n_e)


_TABLES: dict[float, np.ndarray] = {}


def chi2_table(alpha: float, size: int) -> np.ndarray:
    """Shared lazily-filled table of chi2_{1-alpha/2, 2n} for n < size."""
    table = _TABLES.get(alpha)
    if table is None or table.shape[0] < size:
        grown = np.full(max(size, 1), np.nan)
        if table is not None:
            grown[: table.shape[0]] = table
        table = grown
        _TABLES[alpha] = table
    return table


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------


def max_estimate(sample_max: float, n: int) -> float:
    """Minimum variance unbiased estimate of a uniform(0, M) upper bound."""
    if n < 1:
        raise ValueError("need at least one sample")
    if sample_max < 0:
        raise ValueError("sample maximum must be nonnegative")
    return sample_max + sample_max / n


@dataclass(frozen=True)
class ExpFit:
    """Fitted exponential rate.

    ``lambda_hat`` is ``inf`` when every sample is zero; ``degenerate`` flags it.
    """

    lambda_hat: float
    n: int
    method: str  # "ML", "ML_LOWER_CI" or "ML_CENSORED"

    @property
    def degenerate(self) -> bool:
        return math.isinf(self.lambda_hat)


def fit_exp_ml(sum_w: float, n: int) -> ExpFit:
    if n < 1:
        raise ValueError("need at least one sample")
    if sum_w < 0:
        raise ValueError("sum of samples must be nonnegative")
    lam = math.inf if sum_w == 0 else n / sum_w
    return ExpFit(lam, n, "ML")


def fit_exp_censored(sum_w: float, x_max: float, n: int, m: float) -> ExpFit:
    """Rate estimate when only the ``n`` smallest of ``m`` draws are observed.

    ``m < n`` is treated as ``m = n``, which gives back the plain ML estimate.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    m = max(m, n)
    denom = sum_w + (m - n) * x_max
    lam = math.inf if denom == 0 else n / denom
    return ExpFit(lam, n, "ML_CENSORED")


def exp_tail(lam: float, w: float) -> float:
    """P(x > w) under an exponential with rate ``lam``."""
    if w < 0:
        raise ValueError("weight must be nonnegative")
    if w == 0:
        return 1.0
    return math.exp(-lam * w)


def ci_bounds_lambda(fit: ExpFit, alpha: float) -> tuple[float, float]:
    """Symmetric 100(1-alpha)% confidence interval for the exponential rate."""
    if fit.degenerate:
        raise DegenerateFitError("confidence interval undefined for an infinite rate")
    nu = 2 * fit.n
    lo = fit.lambda_hat * chi2_tail_quantile(1 - alpha / 2, nu) / nu
    hi = fit.lambda_hat * chi2_tail_quantile(alpha / 2, nu) / nu
    return lo, hi


def ci_lower_lambda(fit: ExpFit, alpha: float) -> float:
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    return ci_bounds_lambda(fit, alpha)[0]


# ---------------------------------------------------------------------------
# Edge-weight histograms
# ---------------------------------------------------------------------------

EDGE_SETS = ("all_edges", "within_segments", "image_mst", "segment_msts")


@dataclass
class EdgeHistograms:
    edges: np.ndarray  # bin edges, shared by every set
    counts: dict[str, np.ndarray]
    weights: dict[str, np.ndarray]

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def mean(self, name: str) -> float:
        return float(np.mean(self.weights[name])) if self.weights[name].size else 0.0

    def rows(self):
        """Yield ``(set, bin_center, count, ln_count)`` rows for CSV output."""
        for name in EDGE_SETS:
            for c, k in zip(self.centers, self.counts[name]):
                yield name, float(c), int(k), math.log(k) if k > 0 else math.nan


def histogram_bins(weights: np.ndarray, nbins: int = 256) -> np.ndarray:
    wmax = float(weights.max()) if weights.size else 0.0
    if weights.size and np.all(weights == np.round(weights)):
        # integer-valued weights: unit-width bins centred on integers
        return np.arange(-0.5, wmax + 1.0, 1.0)
    if wmax == 0.0:
        return np.array([-0.5, 0.5])
    return np.linspace(0.0, wmax, nbins + 1)


def edge_histograms(img, gt, connectivity: int = 8, weight_fn: str | None = None) -> EdgeHistograms:
    """Histograms of the four edge sets: all edges, within-GT edges, image MST, per-GT-segment MSTs."""
    from .forest import spanning_forest
    from .pixelgraph import build_graph, sort_edges

    if (img.width, img.height) != (gt.width, gt.height):
        raise ValueError(
            f"image is {img.width}x{img.height} but ground truth is {gt.width}x{gt.height}"
        )
    graph = sort_edges(build_graph(img, connectivity, weight_fn))
    labels = gt.labels.ravel()
    inside = labels[graph.u] == labels[graph.v]
    n = img.width * img.height

    mst = spanning_forest(graph.u, graph.v, graph.w, n)
    seg_mst = spanning_forest(graph.u[inside], graph.v[inside], graph.w[inside], n)
    weights = {
        "all_edges": graph.w,
        "within_segments": graph.w[inside],
        "image_mst": graph.w[mst],
        "segment_msts": graph.w[inside][seg_mst],
    }
    bins = histogram_bins(graph.w)
    counts = {k: np.histogram(v, bins=bins)[0] for k, v in weights.items()}
    return EdgeHistograms(bins, counts, weights)


def fit_loglinear_r2(centers: np.ndarray, counts: np.ndarray) -> float:
    """R^2 of a least-squares line through (bin centre, ln count) over nonempty bins."""
    centers = np.asarray(centers, dtype=float)
    counts = np.asarray(counts, dtype=float)
    keep = counts > 0
    if keep.sum() < 5:
        raise ValueError(f"need at least 5 nonempty bins, got {int(keep.sum())}")
    x = centers[keep]
    y = np.log(counts[keep])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0
    return 1.0 - float(np.sum(resid**2)) / ss_tot
