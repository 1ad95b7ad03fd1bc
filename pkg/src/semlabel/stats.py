"""Normality-gated paired significance testing.

Shapiro-Wilk follows Royston's AS R94 algorithm. The t distribution is
evaluated through the regularized incomplete beta function, normal tails
through ``erfc``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np
from scipy.special import betainc

from .errors import DegenerateDataError, StatsError

DEFAULT_ALPHA = 0.05
# range below this fraction of max|x| counts as constant data
_CONSTANT_RTOL = 1e-10

_NORMAL = NormalDist()


class TestKind(str, enum.Enum):
    __test__ = False  # not a pytest class

    SHAPIRO_WILK = "shapiro_wilk"
    PAIRED_T = "paired_t"
    WILCOXON = "wilcoxon"


@dataclass(frozen=True)
class TestResult:
    __test__ = False

    test: TestKind
    statistic: float
    p_value: float
    n_effective: int

    def to_dict(self) -> dict:
        stat = None if math.isnan(self.statistic) else self.statistic
        return {"test": self.test.value, "statistic": stat, "p_value": self.p_value,
                "n_effective": self.n_effective}


@dataclass(frozen=True)
class ComparisonResult:
    normality: TestResult
    significance: TestResult
    alpha: float
    normal_path_taken: bool
    significant: bool

    def to_dict(self) -> dict:
        return {
            "normality_p": self.normality.p_value,
            "normality_statistic": self.normality.to_dict()["statistic"],
            "test_name": self.significance.test.value,
            "statistic": self.significance.statistic,
            "p": self.significance.p_value,
            "n_effective": self.significance.n_effective,
            "alpha": self.alpha,
            "normal_path_taken": self.normal_path_taken,
            "significant": self.significant,
        }


def normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def student_t_cdf(t: float, df: float) -> float:
    x = df / (df + t * t)
    tail = 0.5 * float(betainc(df / 2.0, 0.5, x))
    return 1.0 - tail if t > 0 else tail


def _is_constant(x: np.ndarray) -> bool:
    scale = max(float(np.max(np.abs(x))), 1e-300)
    return float(np.ptp(x)) <= _CONSTANT_RTOL * scale


def _poly(c, x):
    # coefficients in ascending powers
    return sum(ci * x ** i for i, ci in enumerate(c))


_C1 = (0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056)
_C2 = (0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633)
_C3 = (0.5440, -0.39978, 0.025054, -6.714e-4)
_C4 = (1.3822, -0.77857, 0.062767, -0.0020322)
_C5 = (-1.5861, -0.31082, -0.083751, 0.0038915)
_C6 = (-0.4803, -0.082676, 0.0030302)
_G = (-2.273, 0.459)


def shapiro_wilk(x) -> TestResult:
    """Shapiro-Wilk W and its p-value for 3 <= n <= 5000."""
    x = np.sort(np.asarray(x, dtype=np.float64))
    n = x.size
    if not 3 <= n <= 5000:
        raise StatsError(f"Shapiro-Wilk needs 3 <= n <= 5000, got {n}", code="bad_sample_size")
    if not np.all(np.isfinite(x)):
        raise StatsError("sample contains NaN or Inf")
    if _is_constant(x):
        raise DegenerateDataError("Shapiro-Wilk on a sample with zero variance")

    nn2 = n // 2
    if n == 3:
        a = np.array([math.sqrt(0.5)])
    else:
        m = np.array([_NORMAL.inv_cdf((i - 0.375) / (n + 0.25)) for i in range(1, nn2 + 1)])
        m = -m  # upper-half scores, largest first
        summ2 = 2.0 * float(np.sum(m * m))
        ssumm2 = math.sqrt(summ2)
        rsn = 1.0 / math.sqrt(n)
        a1 = _poly(_C1, rsn) + m[0] / ssumm2
        if n > 5:
            a2 = _poly(_C2, rsn) + m[1] / ssumm2
            fac = math.sqrt((summ2 - 2.0 * m[0] ** 2 - 2.0 * m[1] ** 2)
                            / (1.0 - 2.0 * a1 ** 2 - 2.0 * a2 ** 2))
            a = np.concatenate([[a1, a2], m[2:] / fac])
        else:
            fac = math.sqrt((summ2 - 2.0 * m[0] ** 2) / (1.0 - 2.0 * a1 ** 2))
            a = np.concatenate([[a1], m[1:] / fac])

    # W = (sum a_i (x_(n+1-i) - x_(i)))^2 / SS
    centred = x - x.mean()
    ssq = float(np.dot(centred, centred))
    num = float(np.dot(a, x[::-1][:nn2] - x[:nn2]))
    w = min(num * num / ssq, 1.0)

    if n == 3:
        p = max(0.0, 6.0 / math.pi * (math.asin(math.sqrt(w)) - math.asin(math.sqrt(0.75))))
        return TestResult(TestKind.SHAPIRO_WILK, w, min(p, 1.0), n)

    w1 = math.log1p(-w) if w < 1.0 else -math.inf
    if w1 == -math.inf:
        return TestResult(TestKind.SHAPIRO_WILK, w, 1.0, n)
    if n <= 11:
        # -log(gamma - log(1 - W)) is approximately normal
        gamma = _poly(_G, n)
        if w1 >= gamma:
            return TestResult(TestKind.SHAPIRO_WILK, w, 1e-99, n)
        y = -math.log(gamma - w1)
        mu = _poly(_C3, n)
        sigma = math.exp(_poly(_C4, n))
    else:
        # log(1 - W) is approximately normal
        xx = math.log(n)
        y = w1
        mu = _poly(_C5, xx)
        sigma = math.exp(_poly(_C6, xx))
    p = normal_sf((y - mu) / sigma)
    return TestResult(TestKind.SHAPIRO_WILK, w, float(min(max(p, 0.0), 1.0)), n)


def _paired(x, y) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise StatsError(f"paired samples must be equal-length vectors, got {x.shape} and {y.shape}",
                         code="length_mismatch")
    return x - y


def paired_t_test(x, y) -> TestResult:
    """Two-sided paired t-test on ``x - y`` with ``n - 1`` degrees of freedom."""
    d = _paired(x, y)
    n = d.size
    if n < 2:
        raise StatsError("paired t-test needs at least 2 pairs", code="bad_sample_size")
    if _is_constant(d):
        raise DegenerateDataError("paired differences have zero variance")
    sd = float(np.std(d, ddof=1))
    t = float(np.mean(d)) / (sd / math.sqrt(n))
    p = 2.0 * student_t_cdf(-abs(t), n - 1)
    return TestResult(TestKind.PAIRED_T, t, min(p, 1.0), n)


def _midranks(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Average ranks (1-based) and the sizes of tie groups."""
    order = np.argsort(v, kind="mergesort")
    sv = v[order]
    ranks = np.empty(v.size)
    ties = []
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        ties.append(j - i + 1)
        i = j + 1
    return ranks, np.asarray(ties)


def wilcoxon_signed_rank(x, y, zero_method: str = "wilcox", correction: bool = False) -> TestResult:
    """Wilcoxon signed-rank test, normal approximation with tie correction.

    ``zero_method="wilcox"`` discards zero differences before ranking;
    ``"pratt"`` ranks them and then discards their ranks. The statistic is
    ``z = (W+ - mean) / sd``, positive when ``x`` tends to exceed ``y``.
    """
    d = _paired(x, y)
    if zero_method not in ("wilcox", "pratt"):
        raise StatsError(f"unknown zero_method {zero_method!r}")
    nonzero = d != 0.0
    if not nonzero.any():
        raise DegenerateDataError("all paired differences are zero")

    if zero_method == "wilcox":
        d = d[nonzero]
        ranks, ties = _midranks(np.abs(d))
        n = d.size
        mean = n * (n + 1) / 4.0
        var = n * (n + 1) * (2 * n + 1) / 24.0
    else:
        ranks, ties = _midranks(np.abs(d))
        n_all = d.size
        n_zero = int(np.sum(~nonzero))
        # zeros occupy ranks 1..n_zero and are removed from both moments
        mean = (n_all * (n_all + 1) - n_zero * (n_zero + 1)) / 4.0
        var = (n_all * (n_all + 1) * (2 * n_all + 1) - n_zero * (n_zero + 1) * (2 * n_zero + 1)) / 24.0
        if n_zero:
            ties = ties[1:]  # the zero tie group
        n = n_all - n_zero
    var -= float(np.sum(ties ** 3 - ties)) / 48.0
    w_plus = float(np.sum(ranks[d > 0]))
    if var <= 0.0:
        raise DegenerateDataError("signed-rank variance is zero")
    diff = w_plus - mean
    if correction:
        diff -= math.copysign(0.5, diff) if diff else 0.0
    z = diff / math.sqrt(var)
    p = min(2.0 * normal_sf(abs(z)), 1.0)
    return TestResult(TestKind.WILCOXON, z, p, n)


def normal_path(normality_p: float, alpha: float = DEFAULT_ALPHA) -> bool:
    """True when normality is retained, i.e. strictly ``p > alpha``."""
    return normality_p > alpha


def compare_encodings(x, y, alpha: float = DEFAULT_ALPHA, **wilcoxon_opts) -> ComparisonResult:
    """Shapiro-Wilk on ``x - y``, then a paired t-test if normal, else Wilcoxon.

    Differences that are all equal but nonzero have no defined W; they are
    treated as non-normal (W reported as NaN, p = 0) and sent to Wilcoxon.
    """
    d = _paired(x, y)
    if d.size < 3:
        raise StatsError("comparison needs at least 3 pairs", code="bad_sample_size")
    if not np.any(d != 0.0):
        raise DegenerateDataError("the two score vectors are identical")
    if _is_constant(d):
        normality = TestResult(TestKind.SHAPIRO_WILK, math.nan, 0.0, d.size)
    else:
        normality = shapiro_wilk(d)
    take_t = normal_path(normality.p_value, alpha)
    sig = paired_t_test(x, y) if take_t else wilcoxon_signed_rank(x, y, **wilcoxon_opts)
    return ComparisonResult(normality, sig, alpha, take_t, sig.p_value <= alpha)
