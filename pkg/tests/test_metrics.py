"""Metric definitions, hand-checked values, and structural invariants."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from transun.metrics import (
    MetricError,
    binned_stre,
    evaluate,
    kappa_stats,
    mre,
    nmae,
    nrmse,
    pgr,
    signed_tre,
    sre,
    tre,
    xauc,
)


class TestHandValues:
    def test_sre(self):
        assert sre(2.0, 2.0) == 0.0
        assert sre(3.0, 2.0) == 0.5
        assert sre(1.7183, 2.0) == pytest.approx(-0.14085, abs=1e-4)
        with pytest.raises(MetricError):
            sre(1.0, 0.0)

    def test_tre_hand_arithmetic(self):
        p, y = np.array([2.0, 4.0]), np.array([1.0, 3.0])
        assert tre(p, y) == pytest.approx(1.0 / 3.0, rel=1e-12)
        assert signed_tre(p, y) == pytest.approx(1.0 / 3.0, rel=1e-12)
        assert tre(y, y) == 0.0

    def test_mre_hand_arithmetic(self):
        p, y = np.array([2.0, 4.0]), np.array([1.0, 3.0])
        assert mre(p, y) == pytest.approx(0.375, rel=1e-12)
        assert mre(np.array([2.0]), np.array([1.0])) == 0.5
        assert mre(y, y) == 0.0

    def test_nrmse_nmae_hand_arithmetic(self):
        p, y = np.array([2.0, 4.0]), np.array([1.0, 3.0])
        assert nrmse(p, y) == pytest.approx(math.sqrt(2.0) / 4.0, rel=1e-12)
        assert nmae(p, y) == pytest.approx(0.5, rel=1e-12)
        assert nrmse(y, y) == 0.0 and nmae(y, y) == 0.0

    def test_pgr(self):
        y = np.array([1.0, 2.0, 3.0])
        assert pgr(y, y) == 1.0
        assert pgr(0.9 * y, y) == pytest.approx(0.9, rel=1e-12)

    def test_guards(self):
        with pytest.raises(MetricError):
            tre(np.array([1.0, -1.0]), np.array([1.0, 1.0]))  # sum zero
        with pytest.raises(MetricError, match="1 prediction"):
            mre(np.array([1e-13, 2.0]), np.array([1.0, 1.0]))
        with pytest.raises(MetricError):
            nrmse(np.array([1.0]), np.array([0.0]))


class TestStructural:
    def test_global_mean_constant_predictor_has_zero_tre(self):
        rng = np.random.default_rng(4)
        y = rng.gamma(2.0, 1.0, size=5000)
        p = np.full_like(y, float(np.mean(y)))
        assert tre(p, y) < 1e-12

    @given(st.lists(st.tuples(
        st.floats(0.1, 100.0), st.floats(0.1, 100.0)), min_size=2, max_size=50))
    def test_permutation_invariance(self, pairs):
        p = np.array([a for a, _ in pairs])
        y = np.array([b for _, b in pairs])
        perm = np.random.default_rng(0).permutation(len(p))
        assert tre(p, y) == pytest.approx(tre(p[perm], y[perm]), rel=1e-9)
        assert mre(p, y) == pytest.approx(mre(p[perm], y[perm]), rel=1e-9)

    def test_per_group_mean_predictor_zero_tre_on_grouped_data(self):
        # grouped data: per-x prediction equal to the per-x empirical mean
        rng = np.random.default_rng(5)
        groups = rng.integers(0, 7, size=4000)
        y = rng.gamma(2.0, 1.0, size=4000) * (1 + groups)
        means = np.array([y[groups == g].mean() for g in range(7)])
        p = means[groups]
        assert tre(p, y) < 1e-10
        assert mre(p, y) < 0.5  # nonzero in general; only TRE is exactly optimal here

    def test_nrmse_minimized_at_per_group_mean(self):
        rng = np.random.default_rng(6)
        groups = rng.integers(0, 5, size=2000)
        y = rng.gamma(2.0, 1.0, size=2000) * (1 + groups)
        means = np.array([y[groups == g].mean() for g in range(5)])
        base = nrmse(means[groups], y)
        for scale in (0.9, 0.95, 1.05, 1.1):
            assert nrmse(means[groups] * scale, y) > base
        bumped = means.copy()
        bumped[2] += 0.5
        assert nrmse(bumped[groups], y) > base


class TestXauc:
    def test_perfectly_monotone(self):
        y = np.arange(10.0)
        assert xauc(y * 3 + 1, y)[0] == 1.0

    def test_reversed(self):
        y = np.arange(10.0)
        assert xauc(-y, y)[0] == 0.0

    def test_small_enumeration(self):
        val, method = xauc(np.array([1.0, 2.0, 3.0]), np.array([1.0, 3.0, 2.0]))
        assert val == pytest.approx(2.0 / 3.0, rel=1e-12)
        assert method == "exact"

    def test_prediction_ties_count_half(self):
        val, _ = xauc(np.array([1.0, 1.0]), np.array([0.0, 5.0]))
        assert val == 0.5

    def test_all_targets_equal_is_undefined(self):
        with pytest.raises(MetricError):
            xauc(np.array([1.0, 2.0]), np.array([3.0, 3.0]))

    def test_invariant_under_increasing_transform(self):
        rng = np.random.default_rng(7)
        y = rng.gamma(2.0, 1.0, size=400)
        p = y + rng.normal(0, 0.5, size=400)
        base = xauc(p, y)[0]
        assert xauc(np.exp(p / 3), y)[0] == pytest.approx(base, abs=1e-12)
        assert xauc(3 * p + 10, y)[0] == pytest.approx(base, abs=1e-12)

    def test_exact_vs_sampled_within_2e3_at_1e4(self):
        rng = np.random.default_rng(8)
        y = rng.gamma(2.0, 1.0, size=10_000)
        p = y + rng.normal(0, 1.0, size=10_000)
        exact, _ = xauc(p, y, method="exact")
        sampled, tag = xauc(p, y, method="sampled", n_pairs=1_000_000, seed=3)
        assert tag.startswith("sampled")
        assert abs(exact - sampled) < 0.002

    def test_weighted_flag(self):
        # the big-gap pair is discordant: weighting must pull the score down
        p = np.array([1.0, 2.0, 0.0])
        y = np.array([1.0, 2.0, 50.0])
        unweighted = xauc(p, y)[0]
        weighted = xauc(p, y, weighted=True)[0]
        assert weighted < unweighted
        rng = np.random.default_rng(9)
        yy = rng.gamma(2.0, 1.0, 500)
        pp = yy + rng.normal(0, 1.0, 500)
        wexact = xauc(pp, yy, weighted=True)[0]
        wsample = xauc(pp, yy, method="sampled", weighted=True, n_pairs=500_000, seed=1)[0]
        assert abs(wexact - wsample) < 0.005


class TestBinned:
    def test_single_bin_equals_global(self):
        rng = np.random.default_rng(10)
        y = rng.gamma(2.0, 1.0, 1000)
        p = y * 0.9
        bins = binned_stre(p, y, 1)
        assert len(bins) == 1
        assert bins[0].signed_tre == pytest.approx(signed_tre(p, y), rel=1e-12)

    def test_perfect_predictions_zero_everywhere(self):
        y = np.linspace(1, 10, 100)
        for b in binned_stre(y, y, 5):
            assert abs(b.signed_tre) < 1e-12

    def test_tie_grouping_keeps_equal_targets_together(self):
        y = np.array([1.0] * 6 + [2.0, 3.0, 4.0, 5.0])
        p = y.copy()
        bins = binned_stre(p, y, 5)
        counts = {(b.lo, b.hi): b.count for b in bins}
        assert counts[(1.0, 1.0)] == 6  # the tie block stayed whole
        assert sum(b.count for b in bins) == len(y)

    def test_bins_validated_against_distinct_count(self):
        y = np.array([1.0, 1.0, 2.0])
        with pytest.raises(MetricError):
            binned_stre(y, y, 3)

    def test_mean_kappa_per_bin(self):
        y = np.linspace(1, 10, 10)
        k = 1.0 / (y + 1.0)
        bins = binned_stre(y, y, 2, kappa=k)
        assert bins[0].mean_kappa > bins[1].mean_kappa  # kappa falls as targets grow

    def test_log_model_bias_grows_with_target_bin(self):
        # a naive back-transformed log fit on Gamma data: the constant
        # prediction undershoots more in higher target bins
        rng = np.random.default_rng(12)
        y = rng.gamma(2.0, 1.0, 100_000)
        pred = np.full_like(y, np.expm1(np.mean(np.log1p(y))))
        stre = [b.signed_tre for b in binned_stre(pred, y, 10)]
        assert len(stre) == 10
        assert all(b < a for a, b in zip(stre, stre[1:]))
        assert stre[-1] < -0.5 < 0 < stre[0]


def test_kappa_stats():
    k = np.array([1.0, 0.5])
    y = np.array([2.0, 4.0])
    var, norm = kappa_stats(k, y)
    assert var == 0.0 and norm == 0.0


def test_evaluate_bundle():
    rng = np.random.default_rng(11)
    y = rng.gamma(2.0, 1.0, 2000)
    p = y * 1.05
    rep = evaluate(p, y, true_mean=2.0, bins=4, kappa=1.0 / (y + 1.0))
    d = rep.as_dict()
    assert set(d) >= {"tre", "mre", "signed_tre", "nrmse", "nmae", "xauc", "pgr", "sre",
                      "kappa_var", "kappa_var_normalized"}
    assert rep.pgr == pytest.approx(1.05, rel=1e-9)
    assert len(rep.bins) == 4
