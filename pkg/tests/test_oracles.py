"""Oracle module: closed forms, quadrature anchors, grid-search agreement."""

import math

import numpy as np
import pytest

from transun.oracles import (
    OracleResult,
    adaptive_simpson,
    expectation,
    grid_search_minimum,
    mc_expectation,
    point_loss_optimum,
    point_loss_value,
    population_sre,
    s1_limit,
    scheme_prediction_optimum,
    tmse_optimum,
    transun_optimum,
)
from transun.transforms import TargetTransform

LOG = TargetTransform("log1p")
SQ = TargetTransform("square")


class TestSampleOptima:
    def test_tmse_optimum_examples(self):
        samples = np.array([1.0, math.e - 1.0])
        res = tmse_optimum(samples, LOG)
        assert res.value == pytest.approx((math.log(2.0) + 1.0) / 2.0, rel=1e-12)
        ident = TargetTransform("identity")
        assert tmse_optimum(samples, ident).value == pytest.approx(np.mean(samples), rel=1e-15)

    def test_transun_optimum_mean_identity_is_bit_exact(self):
        rng = np.random.default_rng(0)
        y = rng.gamma(2.0, 1.0, size=1000)
        opt = transun_optimum(y, LOG, eps=1.0)
        assert opt.y_hat == float(np.mean(y))  # identity, no numerics

    def test_transun_optimum_constant_sample(self):
        c, eps = 3.0, 1.0
        opt = transun_optimum(np.full(10, c), LOG, eps=eps)
        assert opt.f_star == pytest.approx(math.log1p(c), rel=1e-12)
        assert opt.z_star == pytest.approx(c / (c + eps), rel=1e-12)

    def test_s1_limit_examples(self):
        assert s1_limit(np.array([1.0, 1.0])).value == pytest.approx(1.0, rel=1e-7)
        assert s1_limit(np.array([1.0, 3.0])).value == pytest.approx(1.5, rel=1e-7)

    def test_scheme_optima_land_on_sample_mean(self):
        rng = np.random.default_rng(3)
        y = rng.gamma(2.0, 1.0, size=500)
        for scheme in ("s0", "s2", "transun"):
            assert scheme_prediction_optimum(y, LOG, scheme).value == float(np.mean(y))


class TestPointLossOptima:
    def test_mae_is_lower_median(self):
        assert point_loss_optimum(np.array([1.0, 2.0, 100.0]), "mae").value == 2.0
        assert point_loss_optimum(np.array([1.0, 2.0, 3.0, 100.0]), "mae").value == 2.0

    def test_mse_is_mean(self):
        assert point_loss_optimum(np.array([1.0, 2.0, 3.0]), "mse").value == pytest.approx(2.0)

    def test_mspe_two_point(self):
        got = point_loss_optimum(np.array([1.0, 2.0]), "mspe").value
        assert got == pytest.approx(1.2, abs=1e-6)
        grid = grid_search_minimum(np.array([1.0, 2.0]), "mspe", 0.5, 2.5, 1e-4)
        assert abs(got - grid.value) <= grid.error_bound

    @pytest.mark.parametrize("kind", ["mse", "mae", "mspe", "mape"])
    def test_grid_search_agrees_with_closed_form(self, kind):
        rng = np.random.default_rng(17)
        for _ in range(5):
            samples = rng.gamma(2.0, 1.0, size=rng.integers(3, 40)) + 0.05
            best = point_loss_optimum(samples, kind).value
            lo, hi = float(samples.min()) - 0.5, float(samples.max()) + 0.5
            step = (hi - lo) / 4000
            grid = grid_search_minimum(samples, kind, lo, hi, step)
            # the closed form can never lose to the grid by more than a step
            assert point_loss_value(samples, best, kind) <= (
                point_loss_value(samples, grid.value, kind) + 1e-12)
            assert abs(best - grid.value) <= 2 * step or (
                point_loss_value(samples, grid.value, kind)
                - point_loss_value(samples, best, kind)) < 1e-6

    def test_weighted_median_tie_breaks_low(self):
        # equal weight mass on both sides: pick the smaller value
        got = point_loss_optimum(np.array([1.0, 1.0, 2.0, 2.0]), "mape").value
        assert got == 1.0


class TestQuadrature:
    def test_adaptive_simpson_polynomial(self):
        assert adaptive_simpson(lambda x: x**3, 0, 2, tol=1e-12) == pytest.approx(4.0, abs=1e-10)

    def test_adaptive_simpson_exp(self):
        assert adaptive_simpson(math.exp, 0, 1, tol=1e-12) == pytest.approx(math.e - 1, abs=1e-10)

    def test_gamma_log_moment_is_exactly_one(self):
        res = expectation("RS-G", lambda y: math.log1p(y))
        assert res.value == pytest.approx(1.0, abs=1e-8)

    def test_population_means_match_analytic(self):
        for did in ("RS-G", "RS-BU", "RS-ZIG", "LS-B", "LS-BU", "SM-U", "SM-TN", "SM-BU"):
            res = expectation(did, lambda y: y)
            from transun.synthdata import true_mean

            assert res.value == pytest.approx(true_mean(did), abs=1e-6), did

    def test_population_sre_anchors(self):
        assert population_sre("RS-G", LOG, "tmse").value == pytest.approx((math.e - 3) / 2, abs=1e-6)
        assert population_sre("RS-BU", LOG, "tmse").value == pytest.approx(-0.51059, abs=1e-4)
        assert population_sre("RS-ZIG", LOG, "tmse").value == pytest.approx(
            (math.exp(0.2) - 1 - 0.4) / 0.4, abs=1e-6)
        assert population_sre("RS-G", SQ, "tmse").value == pytest.approx(
            (math.sqrt(6.0) - 2.0) / 2.0, abs=1e-6)

    def test_rs_bu_anchor_against_closed_form_integral(self):
        # piecewise: int ln(1+u) du = (1+u)ln(1+u) - (1+u)
        def block(a, b):
            F = lambda u: (1 + u) * math.log1p(u) - (1 + u)  # noqa: E731
            return (F(b) - F(a)) / 10.0

        e_t = 0.9 * block(1.0, 11.0) + 0.1 * block(90.0, 100.0)
        pred = math.exp(e_t) - 1.0
        sre_closed = (pred - 14.9) / 14.9
        assert population_sre("RS-BU", LOG, "tmse").value == pytest.approx(sre_closed, abs=1e-9)

    def test_joint_scheme_population_sre_is_exactly_zero(self):
        for did in ("RS-G", "LS-B", "SM-TN"):
            res = population_sre(did, LOG, "transun")
            assert res.value == 0.0 and res.method == "analytic"

    def test_s1_population_sre_on_gamma(self):
        # E[1/y] = 1 for Gamma(2,1), so the inverted-ratio limit is 1.0
        res = population_sre("RS-G", LOG, "s1")
        assert res.value == pytest.approx(-0.5, abs=1e-4)


class TestMonteCarlo:
    def test_two_seeds_agree_within_reported_bounds(self):
        a = mc_expectation("RS-G", lambda y: np.log1p(y), n=200_000, seed=1)
        b = mc_expectation("RS-G", lambda y: np.log1p(y), n=200_000, seed=2)
        assert abs(a.value - b.value) <= a.error_bound + b.error_bound
        assert abs(a.value - 1.0) <= a.error_bound

    def test_result_requires_bound_for_non_analytic(self):
        with pytest.raises(ValueError):
            OracleResult("q", 1.0, "monte_carlo(n=10, seed=0)", error_bound=0.0)
