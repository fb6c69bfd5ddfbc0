"""Merge-decision rules for the local-variation family.

Every rule reduces to a per-segment threshold; two segments joined by an
edge of weight ``w`` merge iff ``w <= min(threshold(a), threshold(b))``.
For the hypothesis-test variants that is exactly "the weight is not
rejected as an exponential sample of either segment".
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from enum import IntEnum

import numba

from .stats import chi2_tail_quantile, fit_exp_censored, fit_exp_ml


class Variant(IntEnum):
    LV = 0
    GREEDY = 1
    CONST_THRESH = 2
    AREA = 3
    MAXEST = 4
    MAXEST_C = 5
    PLV_ML = 6
    PLV_ML_CI = 7
    PLV_ML_CEN = 8


# CLI spelling of each variant
METHOD_NAMES = {
    "lv": Variant.LV,
    "greedy": Variant.GREEDY,
    "const": Variant.CONST_THRESH,
    "area": Variant.AREA,
    "maxest": Variant.MAXEST,
    "maxest-c": Variant.MAXEST_C,
    "plv-ml": Variant.PLV_ML,
    "plv-ml-ci": Variant.PLV_ML_CI,
    "plv-ml-cen": Variant.PLV_ML_CEN,
}
VARIANT_NAMES = {v: k for k, v in METHOD_NAMES.items()}

PROBABILISTIC = frozenset({Variant.PLV_ML, Variant.PLV_ML_CI, Variant.PLV_ML_CEN})
USES_CHI2 = frozenset({Variant.PLV_ML_CI, Variant.PLV_ML_CEN})


@numba.njit(cache=True)
def threshold_kernel(code, n_v, n_e, sum_w, max_w, K, k, c, log_inv_delta, m, chi2):
    """Per-segment merge threshold.

    ``chi2`` is chi2_{1-alpha/2, 2 n_e}; it is only read by the CI and
    censored variants and may be anything otherwise.
    """
    if code == 0:  # LV
        return max_w + K / n_v + c
    if code == 1:  # GREEDY
        return math.inf
    if code == 2:  # CONST_THRESH
        return max_w + K + c
    if code == 3:  # AREA
        return math.inf if n_v < K else -math.inf
    if code == 4:  # MAXEST
        return max_w + max_w / n_v + c
    if code == 5:  # MAXEST_C
        return max_w + k * max_w / n_v + c
    # hypothesis tests: no samples, nothing to reject with
    if n_e == 0:
        return math.inf
    if code == 6:  # PLV_ML
        return log_inv_delta * sum_w / n_e + c
    if code == 7:  # PLV_ML_CI
        return 2.0 * log_inv_delta * sum_w / chi2 + c
    # PLV_ML_CEN; at or beyond m the censored fit is the plain ML fit
    if n_e < m:
        return 2.0 * log_inv_delta * (sum_w + (m - n_e) * max_w) / chi2 + c
    return 2.0 * log_inv_delta * sum_w / chi2 + c


@dataclass(frozen=True)
class MergePolicy:
    """A merge rule plus its parameters.

    ``K`` drives LV, CONST_THRESH and AREA; ``k`` drives MAXEST_C; ``delta``,
    ``alpha`` and ``m`` drive the hypothesis tests; ``c`` is an additive slack
    on every finite threshold (defaults to 1 for the MAXEST family, else 0).
    """

    variant: Variant = Variant.LV
    K: float = 300.0
    k: float = 1.0
    c: float | None = None
    delta: float = 0.05
    alpha: float = 0.05
    m: float = 200.0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.c is None:
            slack = 1.0 if self.variant in (Variant.MAXEST, Variant.MAXEST_C) else 0.0
            object.__setattr__(self, "c", slack)
        if not self.K > 0:
            raise ValueError(f"K must be positive, got {self.K}")
        if not self.k > 0:
            raise ValueError(f"k must be positive, got {self.k}")
        if not self.c >= 0:
            raise ValueError(f"c must be nonnegative, got {self.c}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.m >= 1:
            raise ValueError(f"m must be >= 1, got {self.m}")

    @classmethod
    def from_name(cls, name: str, **params) -> "MergePolicy":
        try:
            variant = METHOD_NAMES[name.lower()]
        except KeyError:
            raise ValueError(f"unknown method {name!r}; choose from {', '.join(METHOD_NAMES)}") from None
        return cls(variant, **{k: v for k, v in params.items() if v is not None})

    @property
    def name(self) -> str:
        return VARIANT_NAMES[self.variant]

    @property
    def probabilistic(self) -> bool:
        return self.variant in PROBABILISTIC

    @property
    def log_inv_delta(self) -> float:
        return -math.log(self.delta)

    @property
    def chi2_tail(self) -> float:
        """Upper-tail mass whose chi2 quantile gives the lower CI endpoint."""
        return 1.0 - self.alpha / 2.0

    def with_params(self, **params) -> "MergePolicy":
        return replace(self, **params)

    def describe(self) -> dict:
        d = asdict(self)
        d["variant"] = self.name
        return d

    def chi2(self, n_e: int) -> float:
        if self.variant not in USES_CHI2 or n_e < 1:
            return math.nan
        return chi2_tail_quantile(self.chi2_tail, 2 * n_e)

    def lambda_hat(self, stats) -> float:
        """The rate estimate this policy tests against; ``inf`` when degenerate."""
        if not self.probabilistic:
            raise ValueError(f"{self.name} has no rate estimate")
        if stats.n_e == 0:
            return math.inf
        if self.variant == Variant.PLV_ML:
            return fit_exp_ml(stats.sum_w, stats.n_e).lambda_hat
        if self.variant == Variant.PLV_ML_CI:
            fit = fit_exp_ml(stats.sum_w, stats.n_e)
            if fit.degenerate:
                return math.inf
            return fit.lambda_hat * self.chi2(stats.n_e) / (2 * stats.n_e)
        fit = fit_exp_censored(stats.sum_w, stats.max_w, stats.n_e, self.m)
        if fit.degenerate:
            return math.inf
        return fit.lambda_hat * self.chi2(stats.n_e) / (2 * stats.n_e)


def threshold(policy: MergePolicy, stats) -> float:
    """Merge threshold of one segment; ``stats`` needs n_v, n_e, sum_w, max_w."""
    return threshold_kernel(
        int(policy.variant),
        float(stats.n_v),
        float(stats.n_e),
        float(stats.sum_w),
        float(stats.max_w),
        float(policy.K),
        float(policy.k),
        float(policy.c),
        policy.log_inv_delta,
        float(policy.m),
        policy.chi2(stats.n_e),
    )


def decide(policy: MergePolicy, stats_i, stats_j, w: float) -> bool:
    """True iff an edge of weight ``w`` may join the two segments."""
    return w <= min(threshold(policy, stats_i), threshold(policy, stats_j))


def bootstrap_threshold(policy: MergePolicy, global_lambda: float) -> float:
    """Threshold of a singleton segment (no accepted edges yet).

    A hypothesis test with no samples cannot reject, so the probabilistic
    variants return ``inf``; ``global_lambda`` is accepted for callers that
    fit it once per image but does not change that outcome.
    """
    if not global_lambda > 0:
        raise ValueError("global rate must be positive")
    if policy.probabilistic:
        return math.inf
    from .forest import SegmentStats

    return threshold(policy, SegmentStats(n_v=1, n_e=0, sum_w=0.0, max_w=0.0))
