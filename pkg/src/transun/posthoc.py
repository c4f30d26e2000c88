"""Post-hoc bias corrections applied after a transformed-space model is fit.

All three corrections consume the statistics of transformed-scale residuals
from a calibration split and never touch model parameters:

* normal-theory: exp(f + sigma^2/2) - 1, exact when the transformed target
  is Gaussian (log1p only; other transforms have no closed form here);
* smearing: the distribution-free average of T^-1(f + r_i) over empirical
  residuals (Duan's estimator);
* isotonic calibration: least-squares pool-adjacent-violators fit from raw
  predictions to targets, smoothed by linear interpolation between block
  centers and evaluated as a calibration map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .transforms import TargetTransform

__all__ = [
    "CorrectionStats",
    "IsotonicFit",
    "fit_correction_stats",
    "nte_correct",
    "smearing_correct",
    "pav_isotonic",
    "sir_calibrate",
    "CORRECTION_KINDS",
]

CORRECTION_KINDS = ("nte", "smearing", "sir")


@dataclass(frozen=True)
class IsotonicFit:
    """Nondecreasing calibration map: interpolated PAV block centers.

    ``centers`` are weighted mean raw predictions per pooled block and
    ``values`` the pooled target means; evaluation interpolates linearly
    between centers and extends flat beyond the outermost blocks.
    """

    centers: np.ndarray
    values: np.ndarray
    block_bounds: tuple = ()

    def __call__(self, raw):
        scalar = np.ndim(raw) == 0
        out = np.interp(np.atleast_1d(np.asarray(raw, dtype=np.float64)), self.centers, self.values)
        return float(out[0]) if scalar else out


@dataclass(frozen=True)
class CorrectionStats:
    """Residual statistics fitted on a calibration split."""

    residuals: np.ndarray
    sigma2_hat: float
    isotonic_fit: IsotonicFit | None = None


def fit_correction_stats(f_out, targets, t: TargetTransform, with_isotonic: bool = True) -> CorrectionStats:
    """Fit residuals T(y) - f, their variance, and the calibration map."""
    f_out = np.asarray(f_out, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if f_out.shape != y.shape or f_out.ndim != 1 or f_out.size == 0:
        raise ValueError("f_out and targets must be equal-length non-empty vectors")
    residuals = t.apply_array(y) - f_out
    sigma2 = float(np.var(residuals, ddof=1)) if len(residuals) > 1 else 0.0
    iso = pav_isotonic(t.safe_invert_array(f_out), y) if with_isotonic else None
    return CorrectionStats(residuals=residuals, sigma2_hat=sigma2, isotonic_fit=iso)


def nte_correct(f_out, stats: CorrectionStats, t: TargetTransform):
    """Gaussian-on-transformed-scale mean correction (log1p only)."""
    if t.kind != "log1p":
        raise ValueError(f"normal-theory correction is specific to log1p, got {t.label}")
    return np.expm1(np.asarray(f_out, dtype=np.float64) + 0.5 * stats.sigma2_hat)


def smearing_correct(f_out, stats: CorrectionStats, t: TargetTransform):
    """Mean of T^-1(f + r_i) over the fitted residuals.

    Vectorized over the distinct values of ``f_out``; any (f, r) pair
    falling outside the transform's range aborts with the violation count.
    """
    f_arr = np.atleast_1d(np.asarray(f_out, dtype=np.float64))
    uniq, inverse = np.unique(f_arr, return_inverse=True)
    shifted = uniq[:, None] + stats.residuals[None, :]
    bad = int(np.sum(~t.in_range(shifted)))
    if bad:
        raise ValueError(f"smearing: {bad} shifted value(s) outside the {t.label} range")
    corrected = np.mean(t.invert_array(shifted), axis=1)[inverse]
    return float(corrected[0]) if np.ndim(f_out) == 0 else corrected


def pav_isotonic(predictions, targets) -> IsotonicFit:
    """Least-squares isotonic fit of targets on predictions via PAV.

    Equal predictions are merged up front (the fitted map must be a
    function), then adjacent blocks violating monotonicity are pooled to
    their weighted target mean.
    """
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if p.shape != y.shape or p.ndim != 1 or p.size == 0:
        raise ValueError("need equal-length non-empty prediction/target vectors")
    order = np.argsort(p, kind="stable")
    ps, ys = p[order], y[order]
    xs, starts = np.unique(ps, return_index=True)
    bounds = np.append(starts, len(ps))
    w0 = np.diff(bounds).astype(np.float64)
    y0 = np.array([ys[a:b].mean() for a, b in zip(bounds[:-1], bounds[1:])])
    # stack-based pooling: (weight, weighted target sum, weighted pred sum, lo, hi)
    stack: list[list[float]] = []
    for x, ym, w in zip(xs, y0, w0):
        stack.append([w, ym * w, x * w, x, x])
        while len(stack) > 1 and stack[-2][1] / stack[-2][0] > stack[-1][1] / stack[-1][0]:
            w2, s2, xs2, lo2, hi2 = stack.pop()
            stack[-1][0] += w2
            stack[-1][1] += s2
            stack[-1][2] += xs2
            stack[-1][4] = hi2
    centers = np.array([b[2] / b[0] for b in stack])
    values = np.array([b[1] / b[0] for b in stack])
    bound_pairs = tuple((b[3], b[4]) for b in stack)
    return IsotonicFit(centers=centers, values=values, block_bounds=bound_pairs)


def sir_calibrate(raw_prediction, stats: CorrectionStats):
    """Evaluate the fitted isotonic calibration map at raw predictions."""
    if stats.isotonic_fit is None:
        raise ValueError("correction stats carry no isotonic fit")
    return stats.isotonic_fit(raw_prediction)
