"""Unbiasedness and accuracy metrics for original-space predictions.

Ratio errors keep the *prediction* in the denominator: their optimum (zero)
is reached by a conditional-mean predictor, which is what makes them usable
as unbiasedness gates.  The normalized error metrics and the pairwise
concordance score complement them for accuracy/ranking comparisons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MetricError",
    "sre",
    "tre",
    "signed_tre",
    "mre",
    "nrmse",
    "nmae",
    "xauc",
    "pgr",
    "binned_stre",
    "kappa_stats",
    "BinStats",
    "EvalReport",
    "evaluate",
]

_MRE_GUARD = 1e-12


class MetricError(ValueError):
    """A metric was requested on data outside its preconditions."""


def _pair_arrays(predictions, targets):
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if p.shape != y.shape or p.ndim != 1:
        raise MetricError("predictions and targets must be equal-length vectors")
    if p.size == 0:
        raise MetricError("empty evaluation set")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(y))):
        raise MetricError("non-finite prediction or target")
    return p, y


def sre(prediction: float, truth: float) -> float:
    """Signed relative error (prediction - truth) / truth."""
    if truth == 0:
        raise MetricError("signed relative error undefined for zero truth")
    return (prediction - truth) / truth


def signed_tre(predictions, targets) -> float:
    p, y = _pair_arrays(predictions, targets)
    sp = float(np.sum(p))
    if sp == 0.0:
        raise MetricError("total ratio error undefined: predictions sum to zero")
    return float(np.sum(p - y)) / sp


def tre(predictions, targets) -> float:
    return abs(signed_tre(predictions, targets))


def mre(predictions, targets) -> float:
    """Mean ratio error with the prediction in the denominator.

    The swapped variant (truth in the denominator) is deliberately not
    provided: its optimum is attained by the harmonic-style estimator
    1/E[1/y], so it rewards exactly the bias this suite exists to detect.
    """
    p, y = _pair_arrays(predictions, targets)
    tiny = int(np.sum(np.abs(p) < _MRE_GUARD))
    if tiny:
        raise MetricError(f"mean ratio error rejected: {tiny} prediction(s) below {_MRE_GUARD:g}")
    return abs(float(np.mean((p - y) / p)))


def nrmse(predictions, targets) -> float:
    p, y = _pair_arrays(predictions, targets)
    sy = float(np.sum(y))
    if sy <= 0.0:
        raise MetricError("nrmse requires positive target sum")
    return math.sqrt(float(np.sum((p - y) ** 2))) / sy


def nmae(predictions, targets) -> float:
    p, y = _pair_arrays(predictions, targets)
    sy = float(np.sum(y))
    if sy <= 0.0:
        raise MetricError("nmae requires positive target sum")
    return float(np.sum(np.abs(p - y))) / sy


def pgr(predictions, targets) -> float:
    """Ratio of prediction mean to target mean; 1.0 = batch-level unbiased."""
    p, y = _pair_arrays(predictions, targets)
    my = float(np.mean(y))
    if my == 0.0:
        raise MetricError("pgr undefined: target mean is zero")
    return float(np.mean(p)) / my


# ---------------------------------------------------------------------------
# pairwise concordance


class _Bit:
    """Fenwick tree over prediction ranks holding counts and target sums."""

    def __init__(self, m: int):
        self.cnt = np.zeros(m + 1, dtype=np.float64)
        self.tsum = np.zeros(m + 1, dtype=np.float64)

    def add(self, i: int, t: float) -> None:
        i += 1
        while i < len(self.cnt):
            self.cnt[i] += 1.0
            self.tsum[i] += t
            i += i & (-i)

    def query(self, i: int):  # cumulative over ranks <= i
        i += 1
        c = s = 0.0
        while i > 0:
            c += self.cnt[i]
            s += self.tsum[i]
            i -= i & (-i)
        return c, s


def _count_inversions(a: np.ndarray) -> float:
    """Pairs i<j with a[i] > a[j]; vectorized mergesort-style counting."""
    n = len(a)
    if n < 2:
        return 0.0
    if n <= 64:
        return float(np.sum(np.triu(a[:, None] > a[None, :], k=1)))
    mid = n // 2
    left, right = a[:mid], a[mid:]
    inv = _count_inversions(left) + _count_inversions(right)
    ls = np.sort(left)
    pos = np.searchsorted(ls, right, side="right")
    return inv + float(np.sum(len(ls) - pos))


def _tie_pair_count(vals: np.ndarray) -> float:
    _, counts = np.unique(vals, return_counts=True)
    return float(np.sum(counts * (counts - 1) / 2.0))


def _xauc_exact_unweighted(p: np.ndarray, y: np.ndarray) -> float:
    """Concordance via inversion counts on the target-sorted prediction
    sequence, with within-target-tie pairs subtracted out."""
    if np.min(y) == np.max(y):
        raise MetricError("concordance undefined: all targets equal")
    if np.min(p) == np.max(p):
        return 0.5  # every cross pair is a prediction tie
    order = np.argsort(y, kind="stable")
    ys, ps = y[order], p[order]
    n = len(ys)
    total = n * (n - 1) / 2.0
    inv = _count_inversions(ps)
    eq = _tie_pair_count(ps)
    starts = np.flatnonzero(np.concatenate(([True], ys[1:] != ys[:-1])))
    bounds = np.append(starts, n)
    group_pairs = 0.0
    for a, b in zip(bounds[:-1], bounds[1:]):
        if b - a < 2:
            continue
        group_pairs += (b - a) * (b - a - 1) / 2.0
        inv -= _count_inversions(ps[a:b])
        eq -= _tie_pair_count(ps[a:b])
    den = total - group_pairs
    if den <= 0.0:
        raise MetricError("concordance undefined: all targets equal")
    concordant = den - inv - eq
    return (concordant + 0.5 * eq) / den


def _xauc_exact(p: np.ndarray, y: np.ndarray, weighted: bool):
    if not weighted:
        return _xauc_exact_unweighted(p, y)
    order = np.argsort(y, kind="stable")
    ys = y[order]
    ranks = np.searchsorted(np.unique(p), p[order])
    m = int(ranks.max()) + 1
    bit = _Bit(m)
    num = 0.0
    i = 0
    n = len(ys)
    while i < n:
        j = i
        while j < n and ys[j] == ys[i]:
            j += 1
        for k in range(i, j):  # pairs against strictly smaller targets only
            r, t = int(ranks[k]), float(ys[k])
            c_le, s_le = bit.query(r)
            c_lt, s_lt = bit.query(r - 1) if r > 0 else (0.0, 0.0)
            c_eq, s_eq = c_le - c_lt, s_le - s_lt
            num += (t * c_lt - s_lt) + 0.5 * (t * c_eq - s_eq)
        for k in range(i, j):
            bit.add(int(ranks[k]), float(ys[k]))
        i = j
    idx = np.arange(n, dtype=np.float64)
    den = float(np.sum(ys * idx - np.concatenate(([0.0], np.cumsum(ys)[:-1]))))
    if den <= 0.0:
        raise MetricError("concordance undefined: all targets equal")
    return num / den


def _xauc_sampled(p, y, weighted, n_pairs, seed):
    gen = np.random.Generator(np.random.Philox(key=seed))
    n = len(y)
    i = gen.integers(0, n, size=n_pairs)
    j = gen.integers(0, n, size=n_pairs)
    keep = y[i] != y[j]
    i, j = i[keep], j[keep]
    if i.size == 0:
        raise MetricError("concordance undefined: all sampled target pairs equal")
    dy = y[i] - y[j]
    dp = p[i] - p[j]
    agree = np.sign(dp) == np.sign(dy)
    score = np.where(dp == 0.0, 0.5, agree.astype(np.float64))
    if weighted:
        w = np.abs(dy)
        return float(np.sum(score * w) / np.sum(w))
    return float(np.mean(score))


def xauc(predictions, targets, method: str = "auto", weighted: bool = False,
         n_pairs: int = 1_000_000, seed: int = 0, exact_limit: int = 100_000):
    """Pairwise order concordance between predictions and targets.

    Over all pairs with distinct targets, the fraction whose prediction
    order matches the target order, counting prediction ties as 0.5
    (optionally weighting each pair by its target gap).  Exact O(n log n)
    up to ``exact_limit`` rows, sampled beyond.  Returns (value, method).
    """
    p, y = _pair_arrays(predictions, targets)
    if len(p) < 2:
        raise MetricError("concordance needs at least two pairs")
    if method == "auto":
        method = "exact" if len(p) <= exact_limit else "sampled"
    if method == "exact":
        return _xauc_exact(p, y, weighted), "exact"
    if method == "sampled":
        return _xauc_sampled(p, y, weighted, n_pairs, seed), f"sampled(n_pairs={n_pairs})"
    raise ValueError(f"unknown xauc method {method!r}")


# ---------------------------------------------------------------------------
# binned diagnostics


@dataclass(frozen=True)
class BinStats:
    lo: float
    hi: float
    count: int
    signed_tre: float
    mean_kappa: float | None = None


def binned_stre(predictions, targets, bins: int, kappa=None) -> list:
    """Equal-frequency target bins with per-bin signed total ratio error.

    Rows sharing a target value always land in one bin (tie-grouping), so
    populations can differ and heavily tied data can leave fewer than
    ``bins`` non-empty bins.
    """
    p, y = _pair_arrays(predictions, targets)
    n_distinct = len(np.unique(y))
    if bins < 1 or bins > n_distinct:
        raise MetricError(f"bins must be in [1, {n_distinct}] (distinct target count)")
    k = None if kappa is None else np.asarray(kappa, dtype=np.float64)
    order = np.argsort(y, kind="stable")
    ys, ps = y[order], p[order]
    ks = None if k is None else k[order]
    n = len(ys)
    raw_bin = np.minimum((np.arange(n) * bins) // n, bins - 1)
    # tie-grouping: every row of a tied run takes the run's first bin
    starts = np.flatnonzero(np.concatenate(([True], ys[1:] != ys[:-1])))
    group_of = np.cumsum(np.concatenate(([0], (ys[1:] != ys[:-1]).astype(np.int64))))
    bin_id = raw_bin[starts][group_of]
    out = []
    for b in np.unique(bin_id):
        m = bin_id == b
        out.append(BinStats(
            lo=float(ys[m][0]),
            hi=float(ys[m][-1]),
            count=int(np.sum(m)),
            signed_tre=signed_tre(ps[m], ys[m]),
            mean_kappa=None if ks is None else float(np.mean(ks[m])),
        ))
    return out


def kappa_stats(kappa_vals, targets):
    """Variance of kappa*y and its normalization by the squared mean."""
    k = np.asarray(kappa_vals, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    prod = k * y
    var = float(np.var(prod))
    mean = float(np.mean(prod))
    return var, var / (mean * mean) if mean != 0.0 else math.inf


# ---------------------------------------------------------------------------
# report assembly


@dataclass
class EvalReport:
    """Per-dataset metric bundle in original target space."""

    n: int
    tre: float
    mre: float
    signed_tre: float
    nrmse: float
    nmae: float
    xauc: float
    xauc_method: str
    pgr: float
    sre: float | None = None
    bins: list = field(default_factory=list)
    kappa_var: float | None = None
    kappa_var_normalized: float | None = None

    def as_dict(self) -> dict:
        d = {
            "n": self.n, "tre": self.tre, "mre": self.mre, "signed_tre": self.signed_tre,
            "nrmse": self.nrmse, "nmae": self.nmae, "xauc": self.xauc, "pgr": self.pgr,
        }
        if self.sre is not None:
            d["sre"] = self.sre
        if self.kappa_var is not None:
            d["kappa_var"] = self.kappa_var
            d["kappa_var_normalized"] = self.kappa_var_normalized
        return d


def evaluate(predictions, targets, true_mean: float | None = None, bins: int = 0,
             kappa=None, xauc_method: str = "auto", xauc_seed: int = 0) -> EvalReport:
    """Assemble the full metric bundle for one prediction set."""
    p, y = _pair_arrays(predictions, targets)
    xa, xa_method = xauc(p, y, method=xauc_method, seed=xauc_seed)
    report = EvalReport(
        n=len(p),
        tre=tre(p, y),
        mre=mre(p, y),
        signed_tre=signed_tre(p, y),
        nrmse=nrmse(p, y),
        nmae=nmae(p, y),
        xauc=xa,
        xauc_method=xa_method,
        pgr=pgr(p, y),
    )
    if true_mean is not None:
        report.sre = sre(float(np.mean(p)), true_mean)
    if bins:
        report.bins = binned_stre(p, y, bins, kappa=kappa)
    if kappa is not None:
        report.kappa_var, report.kappa_var_normalized = kappa_stats(kappa, y)
    return report
