"""Independent oracles for every training optimum used in validation.

Everything here is derived from first principles (sample statistics,
closed forms, deterministic quadrature, or Monte Carlo with an explicit
error bound) and deliberately shares no code with the training path, so a
trained model can be checked against numbers computed a second way.

Key identities:

* squared error on T(y) is minimized by the sample mean of T(y);
* the joint bias-learning model's optimal prediction is exactly the sample
  mean of y (the ratio branch cancels whatever the point branch learned);
* the inverted-ratio scheme's limit is 1 / mean(1/y), a harmonic-style
  underestimate on nondegenerate data;
* per point loss: mse -> mean, mae -> lower median, mspe -> ratio of
  guarded inverse moments, mape -> weighted median with weights 1/(|t|+d).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .synthdata import DistributionSpec, RngStream, get_distribution, sample
from .transforms import TargetTransform

__all__ = [
    "OracleResult",
    "JointOptimum",
    "DELTA_GUARD",
    "tmse_optimum",
    "tmse_prediction",
    "transun_optimum",
    "gts_optimum",
    "scheme_prediction_optimum",
    "s1_limit",
    "point_loss_optimum",
    "point_loss_value",
    "grid_search_minimum",
    "expectation",
    "mc_expectation",
    "population_transformed_mean",
    "population_sre",
    "adaptive_simpson",
]

#: Fixed denominator guard for mspe/mape/inverted-ratio limits (distinct
#: from the user-facing epsilon of the bias branch).
DELTA_GUARD = 1e-8

POINT_LOSS_KINDS = ("mse", "mae", "mspe", "mape")
KAPPA_KINDS = ("inv_abs_inverse", "inv_abs", "abs")


@dataclass(frozen=True)
class OracleResult:
    """A single independently computed quantity with its method and bound."""

    quantity: str
    value: float
    method: str
    error_bound: float = 0.0

    def __post_init__(self):
        if self.method != "analytic" and self.error_bound <= 0.0:
            raise ValueError("non-analytic oracle results must carry a positive error bound")


# ---------------------------------------------------------------------------
# sample-level optima


def tmse_optimum(samples: np.ndarray, t: TargetTransform) -> OracleResult:
    """Optimal point-branch value under squared error in transformed space."""
    ty = t.apply_array(np.asarray(samples, dtype=np.float64))
    return OracleResult("tmse_f_star", float(np.mean(ty)), "analytic")


def tmse_prediction(samples: np.ndarray, t: TargetTransform) -> OracleResult:
    """Naive back-transformed prediction of the transformed-MSE optimum."""
    f_star = tmse_optimum(samples, t).value
    return OracleResult("tmse_prediction", t.invert(f_star), "analytic")


def _kappa(kind: str, u: float, t: TargetTransform, eps: float) -> float:
    # independent re-statement of the slope function; see regressors for the
    # trained counterpart
    if kind == "inv_abs_inverse":
        return 1.0 / (abs(float(t.safe_invert_array(np.asarray(u)))) + eps)
    if kind == "inv_abs":
        return 1.0 / (abs(u) + eps)
    if kind == "abs":
        return max(abs(u), eps)
    raise ValueError(f"unknown kappa kind {kind!r}")


@dataclass(frozen=True)
class JointOptimum:
    """Population-style optimum of a two-branch model on a fixed sample."""

    f_star: float
    z_star: float
    y_hat: float

    def rows(self, prefix: str = "") -> list:
        return [
            OracleResult(prefix + "f_star", self.f_star, "analytic"),
            OracleResult(prefix + "z_star", self.z_star, "analytic"),
            OracleResult(prefix + "y_hat", self.y_hat, "analytic"),
        ]


def transun_optimum(samples: np.ndarray, t: TargetTransform, eps: float = 1.0) -> JointOptimum:
    """Joint optimum of the multiplicative bias-learning model.

    y_hat is the sample mean *by identity*, not via z*kappa numerics.
    """
    y = np.asarray(samples, dtype=np.float64)
    f_star = float(np.mean(t.apply_array(y)))
    denom = abs(float(t.safe_invert_array(np.asarray(f_star)))) + eps
    return JointOptimum(f_star=f_star, z_star=float(np.mean(y)) / denom, y_hat=float(np.mean(y)))


def gts_optimum(samples: np.ndarray, t: TargetTransform, point_loss: str = "mse",
                kappa: str = "inv_abs_inverse", eps: float = 1.0) -> JointOptimum:
    """Joint optimum for any (point loss, slope function) instance."""
    y = np.asarray(samples, dtype=np.float64)
    ty = t.apply_array(y)
    f_star = point_loss_optimum(ty, point_loss).value
    k = _kappa(kappa, f_star, t, eps)
    return JointOptimum(f_star=f_star, z_star=float(np.mean(y)) * k, y_hat=float(np.mean(y)))


def s1_limit(samples: np.ndarray) -> OracleResult:
    """Harmonic-style limit 1/mean(1/y) of the inverted-ratio scheme."""
    y = np.asarray(samples, dtype=np.float64)
    inv = 1.0 / (np.abs(y) + DELTA_GUARD)
    return OracleResult("s1_prediction", float(1.0 / np.mean(inv)), "analytic")


def scheme_prediction_optimum(samples: np.ndarray, t: TargetTransform, scheme: str,
                              eps: float = 1.0) -> OracleResult:
    """Optimum prediction of each bias-modeling scheme on a fixed sample.

    The additive (s0) and canonical multiplicative (s2) schemes both land on
    the sample mean; the inverted-ratio scheme (s1) lands on 1/mean(1/y).
    """
    y = np.asarray(samples, dtype=np.float64)
    if scheme in ("s0", "s2", "transun"):
        return OracleResult(f"{scheme}_prediction", float(np.mean(y)), "analytic")
    if scheme == "s1":
        return s1_limit(samples)
    raise ValueError(f"unknown scheme {scheme!r}")


# ---------------------------------------------------------------------------
# point-loss optima


def _lower_median(sorted_vals: np.ndarray) -> float:
    return float(sorted_vals[(len(sorted_vals) - 1) // 2])


def _weighted_median(vals: np.ndarray, weights: np.ndarray) -> float:
    """Smallest value whose cumulative weight reaches half the total
    (ties broken toward the smaller value)."""
    order = np.argsort(vals, kind="stable")
    v = vals[order]
    w = weights[order]
    cum = np.cumsum(w)
    half = 0.5 * cum[-1]
    idx = int(np.searchsorted(cum, half, side="left"))
    return float(v[min(idx, len(v) - 1)])


def point_loss_optimum(samples: np.ndarray, kind: str) -> OracleResult:
    """Closed-form minimizer of the empirical point loss over a constant fit."""
    tvals = np.asarray(samples, dtype=np.float64)
    if tvals.size == 0:
        raise ValueError("empty sample")
    if kind == "mse":
        val = float(np.mean(tvals))
    elif kind == "mae":
        val = _lower_median(np.sort(tvals, kind="stable"))
    elif kind == "mspe":
        d = np.abs(tvals) + DELTA_GUARD
        val = float(np.mean(tvals / d**2) / np.mean(1.0 / d**2))
    elif kind == "mape":
        val = _weighted_median(tvals, 1.0 / (np.abs(tvals) + DELTA_GUARD))
    else:
        raise ValueError(f"unknown point loss {kind!r}")
    return OracleResult(f"{kind}_optimum", val, "analytic")


def point_loss_value(samples: np.ndarray, f: float, kind: str) -> float:
    """Empirical point loss of the constant fit ``f``."""
    tvals = np.asarray(samples, dtype=np.float64)
    if kind == "mse":
        return float(np.mean((f - tvals) ** 2))
    if kind == "mae":
        return float(np.mean(np.abs(f - tvals)))
    d = np.abs(tvals) + DELTA_GUARD
    if kind == "mspe":
        return float(np.mean(((f - tvals) / d) ** 2))
    if kind == "mape":
        return float(np.mean(np.abs(f - tvals) / d))
    raise ValueError(f"unknown point loss {kind!r}")


def grid_search_minimum(samples: np.ndarray, kind: str, lo: float, hi: float,
                        step: float) -> OracleResult:
    """Brute-force 1-D minimizer of the empirical point loss."""
    if hi <= lo or step <= 0:
        raise ValueError("need hi > lo and step > 0")
    grid = np.arange(lo, hi + step * 0.5, step)
    losses = [point_loss_value(samples, float(f), kind) for f in grid]
    best = int(np.argmin(losses))
    return OracleResult(
        f"{kind}_grid_optimum", float(grid[best]),
        f"grid_search(lo={lo:g}, hi={hi:g}, step={step:g})", error_bound=step,
    )


# ---------------------------------------------------------------------------
# population-level expectations


def adaptive_simpson(f, a: float, b: float, tol: float = 1e-10, max_depth: int = 48) -> float:
    """Adaptive Simpson quadrature of a scalar function on [a, b]."""

    def simpson(x0, x2, f0, f1, f2):
        return (x2 - x0) / 6.0 * (f0 + 4.0 * f1 + f2)

    def recurse(x0, x2, f0, f1, f2, whole, eps, depth):
        xm = 0.5 * (x0 + x2)
        lm = 0.5 * (x0 + xm)
        rm = 0.5 * (xm + x2)
        fl, fr = f(lm), f(rm)
        left = simpson(x0, xm, f0, fl, f1)
        right = simpson(xm, x2, f1, fr, f2)
        if depth >= max_depth or abs(left + right - whole) <= 15.0 * eps:
            return left + right + (left + right - whole) / 15.0
        return (recurse(x0, xm, f0, fl, f1, left, eps / 2.0, depth + 1)
                + recurse(xm, x2, f1, fr, f2, right, eps / 2.0, depth + 1))

    fa, fb = f(a), f(b)
    fm = f(0.5 * (a + b))
    whole = simpson(a, b, fa, fm, fb)
    return recurse(a, b, fa, fm, fb, whole, tol, 0)


def expectation(dist: DistributionSpec | str, fn, tol: float = 1e-10) -> OracleResult:
    """E[fn(Y)] under a benchmark distribution via atoms plus quadrature."""
    d = get_distribution(dist) if isinstance(dist, str) else dist
    total = 0.0
    for loc, p in d.atoms:
        total += p * float(fn(loc))
    for comp in d.components:
        pdf = comp.pdf
        integrand = lambda y: float(fn(y)) * float(pdf(y))  # noqa: E731
        total += comp.weight * adaptive_simpson(integrand, comp.lo, comp.hi, tol=tol)
    return OracleResult("expectation", total, f"quadrature(tol={tol:g})", error_bound=max(tol * 20.0, 1e-12))


def mc_expectation(dist: DistributionSpec | str, fn, n: int = 10_000_000,
                   seed: int = 0) -> OracleResult:
    """Monte-Carlo E[fn(Y)] with a 3-sigma error bound."""
    d = get_distribution(dist) if isinstance(dist, str) else dist
    y = sample(d, n, RngStream(seed))
    vals = np.asarray(fn(y), dtype=np.float64)
    if vals.shape != y.shape:
        vals = np.vectorize(fn)(y)
    value = float(np.mean(vals))
    bound = 3.0 * float(np.std(vals)) / math.sqrt(n)
    return OracleResult("expectation", value, f"monte_carlo(n={n}, seed={seed})",
                        error_bound=max(bound, 1e-15))


def population_transformed_mean(dist, t: TargetTransform, tol: float = 1e-10) -> OracleResult:
    res = expectation(dist, lambda y: t.apply(float(y)), tol=tol)
    return OracleResult("population_transformed_mean", res.value, res.method, res.error_bound)


def population_sre(dist, t: TargetTransform, scheme: str, eps: float = 1.0,
                   method: str = "quadrature") -> OracleResult:
    """Signed relative error of a scheme's population-optimal prediction.

    The joint bias-learning schemes are exactly unbiased at the population
    optimum, so their SRE is 0 by construction; the transformed-MSE and
    inverted-ratio schemes are integrated numerically.
    """
    d = get_distribution(dist) if isinstance(dist, str) else dist
    if scheme in ("transun", "gts", "s0", "s2"):
        return OracleResult(f"population_sre[{scheme}]", 0.0, "analytic")
    if scheme == "tmse":
        if method == "monte_carlo":
            et = mc_expectation(d, lambda y: t.apply_array(np.asarray(y)))
        else:
            et = population_transformed_mean(d, t)
        pred = t.invert(et.value)
        # propagate the expectation bound through the inverse map
        h = max(abs(et.value) * 1e-7, 1e-9)
        slope = abs(t.invert(et.value + h) - t.invert(et.value - h)) / (2.0 * h)
        bound = (et.error_bound * slope + 1e-12) / abs(d.true_mean)
        return OracleResult(f"population_sre[tmse,{t.label}]",
                            (pred - d.true_mean) / d.true_mean, et.method, bound)
    if scheme == "s1":
        if method == "monte_carlo":
            einv = mc_expectation(d, lambda y: 1.0 / (np.abs(y) + DELTA_GUARD))
        else:
            einv = expectation(d, lambda y: 1.0 / (abs(y) + DELTA_GUARD))
        pred = 1.0 / einv.value
        bound = (einv.error_bound / einv.value**2 + 1e-12) / abs(d.true_mean)
        return OracleResult(f"population_sre[s1]", (pred - d.true_mean) / d.true_mean,
                            einv.method, bound)
    raise ValueError(f"unknown scheme {scheme!r}")
