"""Regression slopes, one-sample t-tests, Kruskal-Wallis and MSE."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special

from deam.core import DeamError


class DegenerateX(DeamError, ValueError):
    pass


class ZeroVariance(DeamError, ValueError):
    pass


class LengthMismatch(DeamError, ValueError):
    pass


@dataclass(frozen=True)
class RegressionResult:
    slope: float
    intercept: float
    n: int


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: int
    p_two_tailed: float


@dataclass(frozen=True)
class KWResult:
    h: float
    df: int
    p: float


def t_sf_two_tailed(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t, via the regularized incomplete beta."""
    if math.isinf(t):
        return 0.0
    return float(min(1.0, special.betainc(df / 2.0, 0.5, df / (df + t * t))))


def chi2_sf(x: float, df: float) -> float:
    """Upper tail of chi-square, via the regularized upper incomplete gamma."""
    if x <= 0:
        return 1.0
    return float(special.gammaincc(df / 2.0, x / 2.0))


def linear_regression(xs: Sequence[float], ys: Sequence[float]) -> RegressionResult:
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch("xs and ys must be 1-D and of equal length")
    if x.size < 2:
        raise DegenerateX("need at least two points")
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx == 0:
        raise DegenerateX("xs have zero variance")
    slope = float(xc @ (y - y.mean())) / sxx
    return RegressionResult(slope, float(y.mean() - slope * x.mean()), int(x.size))


def one_sample_ttest(values: Sequence[float], mu0: float = 0.0) -> TTestResult:
    v = np.asarray(values, dtype=float)
    n = v.size
    if n < 2:
        raise ZeroVariance("need at least two values")
    s = float(v.std(ddof=1))
    diff = float(v.mean()) - mu0
    if s == 0 or s <= 1e-14 * max(abs(float(v.mean())), abs(mu0), 1e-300):
        raise ZeroVariance("sample standard deviation is zero")
    t = diff / (s / math.sqrt(n))
    return TTestResult(t, n - 1, t_sf_two_tailed(t, n - 1))


def average_ranks(values: Sequence[float]) -> np.ndarray:
    """1-based ranks with ties sharing their mean rank."""
    v = np.asarray(values, dtype=float)
    order = np.argsort(v, kind="mergesort")
    ranks = np.empty(v.size)
    sv = v[order]
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def kruskal_wallis(groups: Sequence[Sequence[float]]) -> KWResult:
    """H with average ranks and tie correction; all-identical data gives H=0, p=1."""
    if len(groups) < 2:
        raise ValueError("need at least two groups")
    if any(len(g) == 0 for g in groups):
        raise ValueError("every group must be non-empty")
    pooled = np.concatenate([np.asarray(g, dtype=float) for g in groups])
    N = pooled.size
    k = len(groups)
    ranks = average_ranks(pooled)
    _, counts = np.unique(pooled, return_counts=True)
    correction = 1.0 - float(np.sum(counts ** 3 - counts)) / (N ** 3 - N) if N > 1 else 0.0
    if correction <= 0:
        return KWResult(0.0, k - 1, 1.0)
    total, start = 0.0, 0
    for g in groups:
        r = ranks[start:start + len(g)]
        total += float(r.sum()) ** 2 / len(g)
        start += len(g)
    h = (12.0 / (N * (N + 1)) * total - 3.0 * (N + 1)) / correction
    h = max(h, 0.0)
    return KWResult(h, k - 1, chi2_sf(h, k - 1))


def mse(model_means: Sequence[float], target_means: Sequence[float]) -> float:
    a = np.asarray(model_means, dtype=float)
    b = np.asarray(target_means, dtype=float)
    if a.shape != b.shape or a.size == 0:
        raise LengthMismatch(f"lengths {a.size} and {b.size} differ or are zero")
    return float(np.mean((a - b) ** 2))


def slope_ttest(per_group_xy: Sequence[tuple[Sequence[float], Sequence[float]]],
                mu0: float = 0.0) -> TTestResult:
    """Regress each group, then t-test the slopes against mu0."""
    if len(per_group_xy) < 2:
        raise ValueError("need at least two groups")
    slopes = [linear_regression(xs, ys).slope for xs, ys in per_group_xy]
    return one_sample_ttest(slopes, mu0)
