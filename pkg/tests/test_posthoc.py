"""Post-hoc corrections: normal-theory, smearing, PAV/isotonic calibration."""

import itertools
import math

import numpy as np
import pytest

from transun.posthoc import (
    CorrectionStats,
    fit_correction_stats,
    nte_correct,
    pav_isotonic,
    sir_calibrate,
    smearing_correct,
)
from transun.synthdata import RngStream
from transun.transforms import TargetTransform

LOG = TargetTransform("log1p")


def _stats(residuals, sigma2=None, iso=None):
    r = np.asarray(residuals, dtype=np.float64)
    s2 = float(np.var(r, ddof=1)) if sigma2 is None and len(r) > 1 else (sigma2 or 0.0)
    return CorrectionStats(residuals=r, sigma2_hat=s2, isotonic_fit=iso)


class TestNte:
    def test_zero_variance_is_naive_back_transform(self):
        stats = _stats([0.0, 0.0], sigma2=0.0)
        f = np.array([0.3, 1.7])
        assert np.allclose(nte_correct(f, stats, LOG), LOG.invert_array(f))

    def test_closed_form(self):
        stats = _stats([0.0], sigma2=2.0)
        assert nte_correct(np.array([0.0]), stats, LOG)[0] == pytest.approx(math.e - 1.0, rel=1e-12)

    def test_requires_log1p(self):
        with pytest.raises(ValueError, match="log1p"):
            nte_correct(np.array([1.0]), _stats([0.0], sigma2=0.1), TargetTransform("sqrt"))

    def test_exact_on_truly_lognormal_data(self):
        # ln(1+y) ~ N(mu, sigma^2) exactly; analytic mean exp(mu+s^2/2)-1
        mu, sigma = 3.0, 0.8
        g = mu + sigma * RngStream(1001).normal(200_000)
        # clip the ~1e-4 mass below zero into the domain; shifts the mean by
        # orders of magnitude less than the 1% gate
        y = np.expm1(np.maximum(g, 0.0))
        f_hat = float(np.mean(np.log1p(y)))
        stats = fit_correction_stats(np.full_like(y, f_hat), y, LOG, with_isotonic=False)
        corrected = float(nte_correct(np.array([f_hat]), stats, LOG)[0])
        analytic = math.exp(mu + sigma**2 / 2) - 1.0
        assert abs(corrected - analytic) / analytic < 0.01


class TestSmearing:
    def test_zero_residuals(self):
        stats = _stats([0.0, 0.0, 0.0])
        assert smearing_correct(1.3, stats, LOG) == pytest.approx(LOG.invert(1.3), rel=1e-12)

    def test_identity_transform_adds_mean_residual(self):
        t = TargetTransform("identity")
        stats = _stats([-1.0, 0.5, 2.0])
        f = 4.0
        assert smearing_correct(f, stats, t) == pytest.approx(f + np.mean(stats.residuals), rel=1e-12)

    def test_symmetric_residuals_cosh_identity(self):
        a, f = 0.7, 1.2
        stats = _stats([-a, a])
        got = smearing_correct(f, stats, LOG)
        assert got == pytest.approx(math.exp(f) * math.cosh(a) - 1.0, rel=1e-12)
        assert got >= LOG.invert(f)  # corrects the underestimate upward

    def test_range_violation_counts(self):
        sq = TargetTransform("square")
        stats = _stats([-2.0, 0.0, 1.0])
        with pytest.raises(ValueError, match="1 shifted"):
            smearing_correct(np.array([1.0]), stats, sq)  # 1.0-2.0 < 0

    def test_vectorized_over_unique_predictions(self):
        stats = _stats([0.1, -0.1, 0.2])
        f = np.array([1.0, 2.0, 1.0, 2.0])
        out = smearing_correct(f, stats, LOG)
        assert out[0] == out[2] and out[1] == out[3]


def _brute_force_isotonic_sse(preds, targets):
    """Exhaustive least-squares over nondecreasing step functions: try every
    consecutive-block partition whose pooled means are nondecreasing."""
    n = len(preds)
    order = np.argsort(preds, kind="stable")
    y = targets[order]
    best = math.inf
    best_means = None
    for cuts in itertools.product([0, 1], repeat=n - 1):
        bounds = [0] + [i + 1 for i, c in enumerate(cuts) if c] + [n]
        means = [y[a:b].mean() for a, b in zip(bounds[:-1], bounds[1:])]
        if any(m2 < m1 for m1, m2 in zip(means, means[1:])):
            continue
        sse = sum(((y[a:b] - m) ** 2).sum() for (a, b), m in
                  zip(zip(bounds[:-1], bounds[1:]), means))
        if sse < best - 1e-12:
            best = sse
            best_means = np.concatenate([np.full(b - a, m) for (a, b), m in
                                         zip(zip(bounds[:-1], bounds[1:]), means)])
    return best, best_means


def _pav_sse(fit, preds, targets):
    """SSE of the PAV fit, reading each point's pooled block value."""
    order = np.argsort(preds, kind="stable")
    vals = np.empty(len(preds))
    for i, p in enumerate(preds[order]):
        for (lo, hi), v in zip(fit.block_bounds, fit.values):
            if lo <= p <= hi:
                vals[i] = v
                break
    return float(np.sum((vals - targets[order]) ** 2)), vals


class TestPav:
    def test_already_monotone_interpolates_targets(self):
        preds = np.array([1.0, 2.0, 3.0])
        targets = np.array([1.5, 2.5, 9.0])
        fit = pav_isotonic(preds, targets)
        assert np.allclose(fit(preds), targets)

    def test_two_point_pooling(self):
        fit = pav_isotonic(np.array([1.0, 2.0]), np.array([3.0, 1.0]))
        assert np.allclose(fit.values, [2.0])
        assert fit(1.0) == 2.0 and fit(2.0) == 2.0

    def test_output_nondecreasing_and_block_means_pooled(self):
        rng = np.random.default_rng(50)
        preds = rng.uniform(0, 10, 200)
        targets = rng.uniform(0, 10, 200)
        fit = pav_isotonic(preds, targets)
        assert np.all(np.diff(fit.values) >= -1e-12)
        grid = np.linspace(-1, 11, 500)
        out = fit(grid)
        assert np.all(np.diff(out) >= -1e-12)
        # beats (or ties) the best constant fit
        sse_fit, _ = _pav_sse(fit, preds, targets)
        sse_const = float(np.sum((targets - targets.mean()) ** 2))
        assert sse_fit <= sse_const + 1e-9

    def test_matches_exhaustive_search_up_to_8(self):
        rng = np.random.default_rng(51)
        for trial in range(60):
            n = int(rng.integers(1, 9))
            preds = np.sort(rng.uniform(0, 10, n)) + np.arange(n) * 1e-6  # distinct
            targets = rng.uniform(0, 5, n)
            fit = pav_isotonic(preds, targets)
            sse_fit, fitted_vals = _pav_sse(fit, preds, targets)
            if n == 1:
                assert fit.values[0] == targets[0]
                continue
            sse_best, means_best = _brute_force_isotonic_sse(preds, targets)
            assert sse_fit == pytest.approx(sse_best, abs=1e-9), (trial, n)
            assert np.allclose(fitted_vals, means_best, atol=1e-9)

    def test_flat_extrapolation(self):
        fit = pav_isotonic(np.array([1.0, 2.0, 3.0]), np.array([1.0, 2.0, 3.0]))
        assert fit(-100.0) == 1.0
        assert fit(100.0) == 3.0


class TestSir:
    def test_identity_monotone_round_trip(self):
        preds = np.array([1.0, 2.0, 4.0])
        stats = fit_correction_stats(LOG.apply_array(preds), preds, LOG)
        out = sir_calibrate(preds, stats)
        assert np.allclose(out, preds, rtol=1e-9)

    def test_constant_targets_give_constant_output(self):
        y = np.full(10, 3.0)
        f = np.linspace(0.1, 2.0, 10)
        stats = fit_correction_stats(f, y, LOG)
        assert np.allclose(sir_calibrate(np.linspace(-5, 5, 7), stats), 3.0)

    def test_missing_fit_raises(self):
        with pytest.raises(ValueError):
            sir_calibrate(1.0, _stats([0.0], sigma2=0.0))

    def test_calibrating_biased_model_on_gamma(self, gamma_sample):
        # fixed-x log-MSE underestimates ~14%; isotonic calibration on the
        # training rows recovers the mean within 2%
        y = gamma_sample
        f_hat = float(np.mean(np.log1p(y)))
        stats = fit_correction_stats(np.full_like(y, f_hat), y, LOG)
        calibrated = float(sir_calibrate(LOG.invert(f_hat), stats))
        assert abs(calibrated - 2.0) / 2.0 < 0.02


def test_corrections_never_touch_model_parameters(gamma_sample):
    from transun.regressors import Dataset, RegressorSpec, train

    ds = Dataset.fixed_x(gamma_sample[:20_000])
    model = train(ds, RegressorSpec(scheme="tmse", transform=LOG, seed=1, epochs=2))
    before = model.store.values.copy()
    f_out = model.point_branch_outputs(ds.features)
    stats = fit_correction_stats(f_out, ds.targets, LOG)
    nte_correct(f_out[:5], stats, LOG)
    smearing_correct(f_out[:5], stats, LOG)
    sir_calibrate(LOG.safe_invert_array(f_out[:5]), stats)
    assert np.array_equal(model.store.values, before)
