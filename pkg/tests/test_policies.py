import itertools
import math

import numpy as np
import pytest

from oracles import naive_threshold
from plvseg.forest import SegmentStats
from plvseg.policies import (
    METHOD_NAMES,
    MergePolicy,
    Variant,
    bootstrap_threshold,
    decide,
    threshold,
    threshold_kernel,
)
from plvseg.stats import chi2_tail_quantile, max_estimate


def stats(n_v, n_e=None, sum_w=0.0, max_w=0.0):
    return SegmentStats(n_v, n_v - 1 if n_e is None else n_e, sum_w, max_w)


# 10 edge counts x 10 mean weights x 10 levels = 1000 grid points
GRID_LEVELS = [0.001, 0.01, 0.03, 0.05, 0.1, 0.2, 0.35, 0.5, 0.75, 0.95]


def grid():
    ns = (1, 2, 3, 5, 8, 13, 40, 150, 600, 2500)
    means = (0.05, 0.3, 1.0, 2.5, 4.0, 7.5, 12.0, 30.0, 55.0, 140.0)
    for n_e, mean, level in itertools.product(ns, means, GRID_LEVELS):
        yield SegmentStats(n_e + 1, n_e, mean * n_e, 1.7 * mean), level


class TestThresholdExamples:
    def test_lv_mint(self):
        pol = MergePolicy(Variant.LV, K=10)
        a, b = stats(2, max_w=3.0), stats(10, max_w=4.0)
        assert threshold(pol, a) == 8
        assert threshold(pol, b) == 5
        assert decide(pol, a, b, 5.0)
        assert not decide(pol, a, b, 5.0001)

    def test_maxest(self):
        assert threshold(MergePolicy(Variant.MAXEST), stats(5, max_w=10.0)) == 13

    def test_censored_with_pinned_chi2(self):
        # weights {1, 2}: n_e = 2, sum 3, heaviest 2; m = 4; ln(1/delta) = 1; chi2 pinned at 4
        val = threshold_kernel(int(Variant.PLV_ML_CEN), 3.0, 2.0, 3.0, 2.0, 300.0, 1.0, 0.0, 1.0, 4.0, 4.0)
        assert val == pytest.approx(3.5, abs=1e-15)

    def test_pinned_chi2_value_exists(self):
        # chi2 with 4 dof has upper tail 3 e^-2 at 4 (closed form for even dof)
        assert chi2_tail_quantile(3 * math.exp(-2), 4) == pytest.approx(4.0, rel=1e-10)

    def test_plv_ml_tail_decision(self):
        pol = MergePolicy(Variant.PLV_ML, delta=0.05)
        s = stats(5, 4, sum_w=8.0, max_w=3.0)  # rate estimate 0.5
        assert pol.lambda_hat(s) == 0.5
        assert math.exp(-0.5 * 5) >= 0.05 and decide(pol, s, s, 5.0)
        assert math.exp(-0.5 * 7) < 0.05 and not decide(pol, s, s, 7.0)

    @pytest.mark.parametrize("name", list(METHOD_NAMES))
    def test_zero_weight_merges(self, name):
        pol = MergePolicy.from_name(name, K=5)
        a, b = stats(3, max_w=0.0), stats(2, max_w=0.0)
        if name == "area":
            a, b = stats(1), stats(2)
        assert decide(pol, a, b, 0.0)

    @pytest.mark.parametrize("w", [0.0, 1.0, 1e9])
    def test_greedy_merges_anything(self, w):
        assert decide(MergePolicy(Variant.GREEDY), stats(400, max_w=1.0), stats(1), w)

    def test_area(self):
        pol = MergePolicy(Variant.AREA, K=10)
        assert threshold(pol, stats(9)) == math.inf
        assert threshold(pol, stats(10)) == -math.inf
        assert decide(pol, stats(9), stats(9), 1e6)
        assert not decide(pol, stats(9), stats(10), 0.0)

    def test_const(self):
        assert threshold(MergePolicy(Variant.CONST_THRESH, K=2.5), stats(40, max_w=1.0)) == 3.5

    def test_slack_added(self):
        pol = MergePolicy(Variant.LV, K=10, c=0.5)
        assert threshold(pol, stats(2, max_w=3.0)) == 8.5

    @pytest.mark.parametrize("name", ["plv-ml", "plv-ml-ci", "plv-ml-cen"])
    def test_degenerate_zero_weights_reject_positive(self, name):
        pol = MergePolicy.from_name(name)
        s = stats(4, 3, 0.0, 0.0)
        assert threshold(pol, s) == 0.0
        assert math.isinf(pol.lambda_hat(s))
        assert not decide(pol, s, s, 1e-9)

    @pytest.mark.parametrize("name", list(METHOD_NAMES))
    def test_matches_long_hand_formula(self, name):
        pol = MergePolicy.from_name(name, K=7.0, k=3.0, delta=0.02, alpha=0.1, m=30)
        for n_e in (0, 1, 4, 29, 30, 31, 200):
            tree = np.linspace(0.1, 2.0, n_e).tolist()
            s = SegmentStats(n_e + 1, n_e, sum(tree), max(tree, default=0.0))
            assert threshold(pol, s) == pytest.approx(naive_threshold(pol, s.n_v, tree), rel=1e-9, abs=1e-12)


class TestBootstrap:
    def test_censored_singleton_pair_merges(self):
        pol = MergePolicy(Variant.PLV_ML_CEN)
        assert bootstrap_threshold(pol, 0.1) == math.inf
        assert decide(pol, stats(1), stats(1), 1e6)

    def test_lv_singleton(self):
        assert bootstrap_threshold(MergePolicy(Variant.LV, K=300), 0.2) == 300

    def test_maxest_singleton(self):
        assert bootstrap_threshold(MergePolicy(Variant.MAXEST), 0.2) == 1

    def test_needs_positive_rate(self):
        with pytest.raises(ValueError):
            bootstrap_threshold(MergePolicy(), 0.0)


class TestIdentities:
    def test_censored_equals_ci_when_m_is_edge_count(self):
        worst = 0.0
        count = 0
        for s, level in grid():
            ci = MergePolicy(Variant.PLV_ML_CI, delta=level, alpha=level)
            cen = MergePolicy(Variant.PLV_ML_CEN, delta=level, alpha=level, m=s.n_e)
            a, b = threshold(ci, s), threshold(cen, s)
            worst = max(worst, abs(a - b) / abs(a))
            count += 1
        assert count == 1000
        assert worst <= 1e-12

    def test_censored_formula_reduces_at_m_equals_edge_count(self):
        # same identity through the censored branch itself: (m - n_e) * x_n vanishes
        for s, level in grid():
            L = -math.log(level)
            q = chi2_tail_quantile(1 - level / 2, 2 * s.n_e)
            cen_branch = 2 * L * (s.sum_w + (s.n_e - s.n_e) * s.max_w) / q
            ci = threshold(MergePolicy(Variant.PLV_ML_CI, delta=level, alpha=level), s)
            assert cen_branch == pytest.approx(ci, rel=1e-12)

    def test_maxest_is_max_estimate_plus_slack(self):
        for s, level in grid():
            c = level * 3
            pol = MergePolicy(Variant.MAXEST, c=c)
            assert threshold(pol, s) == pytest.approx(max_estimate(s.max_w, s.n_v) + c, rel=1e-12)

    def test_ci_at_least_ml(self):
        for s, level in grid():
            ml = threshold(MergePolicy(Variant.PLV_ML, delta=0.05, alpha=level), s)
            ci = threshold(MergePolicy(Variant.PLV_ML_CI, delta=0.05, alpha=level), s)
            assert ci >= ml

    @pytest.mark.parametrize("name", ["plv-ml", "plv-ml-ci", "plv-ml-cen"])
    def test_threshold_is_log_inv_delta_over_rate(self, name):
        pol = MergePolicy.from_name(name, delta=0.01, m=50)
        for n_e in (1, 7, 49, 50, 300):
            s = SegmentStats(n_e + 1, n_e, 1.3 * n_e, 4.0)
            assert threshold(pol, s) == pytest.approx(pol.log_inv_delta / pol.lambda_hat(s), rel=1e-12)


class TestMonotonicity:
    def test_lv_increasing_in_k(self):
        s = stats(12, max_w=3.0)
        vals = [threshold(MergePolicy(Variant.LV, K=K), s) for K in np.geomspace(0.01, 1e5, 40)]
        assert np.all(np.diff(vals) > 0)

    def test_maxest_c_increasing_in_k(self):
        s = stats(12, max_w=3.0)
        vals = [threshold(MergePolicy(Variant.MAXEST_C, k=k), s) for k in np.geomspace(0.01, 1e5, 40)]
        assert np.all(np.diff(vals) > 0)

    @pytest.mark.parametrize("name", ["plv-ml", "plv-ml-ci", "plv-ml-cen"])
    def test_plv_decreasing_in_delta(self, name):
        # the threshold scales with ln(1/delta): a larger significance level rejects sooner
        s = stats(20, 19, 25.0, 4.0)
        vals = [threshold(MergePolicy.from_name(name, delta=d), s) for d in np.linspace(0.001, 0.999, 60)]
        assert np.all(np.diff(vals) < 0)

    def test_censored_gives_small_segments_priority(self):
        for mean, top, m, level in itertools.product((0.5, 2.0, 9.0), (1.0, 1.5, 4.0), (20, 200), (0.01, 0.05, 0.3)):
            pol = MergePolicy(Variant.PLV_ML_CEN, delta=level, alpha=level, m=m)
            vals = [threshold(pol, SegmentStats(n + 1, n, mean * n, top * mean)) for n in range(1, m + 1)]
            assert np.all(np.diff(vals) <= 1e-12 * np.abs(vals[:-1]))


class TestDecide:
    @pytest.mark.parametrize("name", list(METHOD_NAMES))
    def test_symmetric(self, name):
        rng = np.random.default_rng(3)
        pol = MergePolicy.from_name(name, K=20)
        for _ in range(200):
            a = SegmentStats(int(rng.integers(1, 50)), 0, 0.0, 0.0)
            a = SegmentStats(a.n_v, a.n_v - 1, float(rng.uniform(0, 5)) * (a.n_v - 1), float(rng.uniform(0, 9)))
            b = SegmentStats(int(rng.integers(1, 50)), 0, 0.0, 0.0)
            b = SegmentStats(b.n_v, b.n_v - 1, float(rng.uniform(0, 5)) * (b.n_v - 1), float(rng.uniform(0, 9)))
            w = float(rng.uniform(0, 30))
            assert decide(pol, a, b, w) == decide(pol, b, a, w)


class TestValidation:
    @pytest.mark.parametrize("params", [dict(K=0), dict(K=-1), dict(k=0), dict(c=-0.1), dict(delta=0),
                                        dict(delta=1), dict(alpha=0), dict(alpha=1.0), dict(m=0.5)])
    def test_rejects(self, params):
        with pytest.raises(ValueError):
            MergePolicy(Variant.LV, **params)

    def test_unknown_name(self):
        with pytest.raises(ValueError, match="unknown method"):
            MergePolicy.from_name("watershed")

    def test_default_slack(self):
        assert MergePolicy(Variant.MAXEST).c == 1
        assert MergePolicy(Variant.MAXEST_C).c == 1
        assert MergePolicy(Variant.PLV_ML_CEN).c == 0

    def test_names_round_trip(self):
        for name, variant in METHOD_NAMES.items():
            assert MergePolicy.from_name(name).variant == variant
            assert MergePolicy(variant).name == name

    def test_lambda_hat_needs_probabilistic(self):
        with pytest.raises(ValueError):
            MergePolicy(Variant.LV).lambda_hat(stats(3, max_w=1.0))
