"""Descriptive statistics, two-tailed t-tests, and boxplot summaries.

Group tables report mean and sample standard deviation; TR-vs-GT contrasts
use Welch's unequal-variance t-test by default (the pooled-variance Student
form and a paired-differences form are available for reproduction attempts,
selected via `stats.ttest` / `stats.paired`). Two-tailed p-values come from
the regularized incomplete beta function. Quantiles interpolate linearly at
position (n-1)*q between order statistics; boxplot whiskers stop at the most
extreme values inside the 1.5*IQR Tukey fences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special


@dataclass(frozen=True)
class SummaryStats:
    n: int
    mean: float
    std: float  # sample (n-1); 0 by convention when n == 1
    min: float
    max: float


@dataclass(frozen=True)
class TTestResult:
    t_statistic: float
    degrees_of_freedom: float
    p_value: float

    @property
    def significant_at_05(self) -> bool:
        return self.p_value < 0.05


@dataclass(frozen=True)
class BoxplotStats:
    q1: float
    median: float
    q3: float
    whisker_low: float
    whisker_high: float
    outliers: tuple[float, ...]


def _as_samples(values, min_n: int, label: str = "values") -> np.ndarray:
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{label} must be a flat list")
    if arr.size == 0:
        raise ValueError("empty list")
    if arr.size < min_n:
        raise ValueError(f"insufficient data: {label} needs n >= {min_n}, got {arr.size}")
    if not np.isfinite(arr).all():
        raise ValueError(f"non-finite value in {label}")
    return arr


def summarize(values) -> SummaryStats:
    """Mean, sample std, min, max of a non-empty list."""
    arr = _as_samples(values, 1)
    std = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
    return SummaryStats(
        n=int(arr.size),
        mean=float(np.mean(arr)),
        std=std,
        min=float(np.min(arr)),
        max=float(np.max(arr)),
    )


def _two_tailed_p(t: float, df: float) -> float:
    # P(|T| >= t) for Student's t, via the regularized incomplete beta identity
    return float(special.betainc(df / 2.0, 0.5, df / (df + t * t)))


def welch_ttest(a, b) -> TTestResult:
    """Welch's unequal-variance two-tailed t-test; sign follows mean(a) - mean(b)."""
    a = _as_samples(a, 2, "sample a")
    b = _as_samples(b, 2, "sample b")
    va, vb = float(np.var(a, ddof=1)), float(np.var(b, ddof=1))
    if va == 0.0 and vb == 0.0:
        raise ValueError("zero variance")
    na, nb = a.size, b.size
    sa, sb = va / na, vb / nb
    t = (float(np.mean(a)) - float(np.mean(b))) / math.sqrt(sa + sb)
    df = (sa + sb) ** 2 / (sa * sa / (na - 1) + sb * sb / (nb - 1))
    return TTestResult(t_statistic=t, degrees_of_freedom=df, p_value=_two_tailed_p(t, df))


def student_ttest(a, b) -> TTestResult:
    """Pooled-variance two-tailed t-test with df = na + nb - 2."""
    a = _as_samples(a, 2, "sample a")
    b = _as_samples(b, 2, "sample b")
    na, nb = a.size, b.size
    va, vb = float(np.var(a, ddof=1)), float(np.var(b, ddof=1))
    pooled = ((na - 1) * va + (nb - 1) * vb) / (na + nb - 2)
    if pooled == 0.0:
        raise ValueError("zero variance")
    t = (float(np.mean(a)) - float(np.mean(b))) / math.sqrt(pooled * (1.0 / na + 1.0 / nb))
    df = float(na + nb - 2)
    return TTestResult(t_statistic=t, degrees_of_freedom=df, p_value=_two_tailed_p(t, df))


def paired_ttest(a, b) -> TTestResult:
    """One-sample two-tailed t-test on elementwise differences a - b.

    Elementwise-identical samples give t = 0, p = 1; a constant nonzero
    offset leaves the statistic undefined and raises "zero variance".
    """
    a = _as_samples(a, 2, "sample a")
    b = _as_samples(b, 2, "sample b")
    if a.size != b.size:
        raise ValueError(f"paired samples must have equal length: {a.size} vs {b.size}")
    d = a - b
    vd = float(np.var(d, ddof=1))
    if vd == 0.0:
        if float(np.mean(d)) == 0.0:
            return TTestResult(t_statistic=0.0, degrees_of_freedom=float(d.size - 1), p_value=1.0)
        raise ValueError("zero variance")
    n = d.size
    t = float(np.mean(d)) / math.sqrt(vd / n)
    df = float(n - 1)
    return TTestResult(t_statistic=t, degrees_of_freedom=df, p_value=_two_tailed_p(t, df))


def boxplot_stats(values) -> BoxplotStats:
    """Quartiles, Tukey-fence whiskers and outliers of a non-empty list."""
    arr = _as_samples(values, 1)
    q1, median, q3 = (float(q) for q in np.quantile(arr, [0.25, 0.5, 0.75]))
    iqr = q3 - q1
    low_fence, high_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = arr[(arr >= low_fence) & (arr <= high_fence)]
    outliers = arr[(arr < low_fence) | (arr > high_fence)]
    return BoxplotStats(
        q1=q1,
        median=median,
        q3=q3,
        whisker_low=float(inside.min()),
        whisker_high=float(inside.max()),
        outliers=tuple(float(v) for v in np.sort(outliers)),
    )
