import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semlabel import stats
from semlabel.errors import DegenerateDataError, StatsError
from semlabel.stats import (TestKind, compare_encodings, normal_path, paired_t_test, shapiro_wilk,
                            student_t_cdf, wilcoxon_signed_rank)

WEIGHTS = [148, 154, 158, 160, 161, 162, 166, 170, 182, 195, 236]


def exact_signed_rank_p(d):
    """Two-sided p by enumerating all 2^n sign patterns of the ranks."""
    d = np.asarray(d, dtype=float)
    ranks = np.argsort(np.argsort(np.abs(d))) + 1
    observed = ranks[d > 0].sum()
    mean = len(d) * (len(d) + 1) / 4
    totals = np.array([sum(r for r, s in zip(ranks, signs) if s)
                       for signs in itertools.product((0, 1), repeat=len(d))])
    return float(np.mean(np.abs(totals - mean) >= abs(observed - mean) - 1e-9))


# ---- paired t ------------------------------------------------------------

def test_paired_t_hand_example():
    res = paired_t_test([2, 4, 6], [1, 2, 3])
    assert res.statistic == pytest.approx(2 * math.sqrt(3), abs=1e-12)
    t = res.statistic
    expected_p = 2 * (1 - (0.5 + t / (2 * math.sqrt(t * t + 2))))
    assert res.p_value == pytest.approx(expected_p, abs=1e-12)
    assert res.p_value == pytest.approx(0.0742, abs=1e-3)
    assert res.test is TestKind.PAIRED_T and res.n_effective == 3


def test_paired_t_zero_variance():
    with pytest.raises(DegenerateDataError):
        paired_t_test([1.0, 2.0, 3.0], [0.5, 1.5, 2.5])


def test_paired_t_length_mismatch():
    with pytest.raises(StatsError):
        paired_t_test([1, 2, 3], [1, 2])


def test_paired_t_matches_scipy():
    scipy_stats = pytest.importorskip("scipy.stats")
    rng = np.random.default_rng(5)
    x, y = rng.normal(size=30), rng.normal(size=30)
    ours = paired_t_test(x, y)
    ref = scipy_stats.ttest_rel(x, y)
    assert ours.statistic == pytest.approx(ref.statistic, abs=1e-12)
    assert ours.p_value == pytest.approx(ref.pvalue, abs=1e-12)


@pytest.mark.parametrize("t", [-30.0, -2.5, -0.3, 0.0, 0.7, 4.0, 50.0])
def test_t_cdf_closed_forms(t):
    assert student_t_cdf(t, 1) == pytest.approx(0.5 + math.atan(t) / math.pi, abs=1e-10)
    assert student_t_cdf(t, 2) == pytest.approx(0.5 + t / (2 * math.sqrt(t * t + 2)), abs=1e-10)


# ---- Wilcoxon ------------------------------------------------------------

def test_wilcoxon_hand_example():
    d = np.array([1, -2, 3, -4, 5], dtype=float)
    res = wilcoxon_signed_rank(d, np.zeros(5))
    # W+ = 1 + 3 + 5 = 9, mean 7.5, variance 13.75
    assert res.statistic == pytest.approx(1.5 / math.sqrt(13.75), abs=1e-12)
    assert res.statistic == pytest.approx(0.4045, abs=1e-4)
    assert res.p_value == pytest.approx(0.686, abs=1e-3)


def test_wilcoxon_drops_zeros():
    res = wilcoxon_signed_rank([1, -2, 3, 0, 0], [0, 0, 0, 0, 0])
    assert res.n_effective == 3


def test_wilcoxon_pratt_keeps_zero_ranks():
    d = [0, 0, 1, -2, 3, 4]
    scipy_stats = pytest.importorskip("scipy.stats")
    ours = wilcoxon_signed_rank(d, np.zeros(6), zero_method="pratt")
    ref = scipy_stats.wilcoxon(d, zero_method="pratt", method="approx")
    assert ours.p_value == pytest.approx(ref.pvalue, abs=1e-12)
    assert ours.n_effective == 4


def test_wilcoxon_tie_correction_matches_scipy():
    scipy_stats = pytest.importorskip("scipy.stats")
    d = np.array([1, 1, -1, 2, 2, 3, -3, 3, 4, 0.5])
    for correction in (False, True):
        ours = wilcoxon_signed_rank(d, np.zeros_like(d), correction=correction)
        ref = scipy_stats.wilcoxon(d, method="approx", correction=correction)
        assert ours.p_value == pytest.approx(ref.pvalue, abs=1e-12)


def test_wilcoxon_all_zero():
    with pytest.raises(DegenerateDataError):
        wilcoxon_signed_rank([1, 2, 3], [1, 2, 3])


def test_wilcoxon_unknown_zero_method():
    with pytest.raises(StatsError):
        wilcoxon_signed_rank([1, 2], [0, 0], zero_method="zsplit")


def worst_gap_over_sign_patterns(n, correction):
    ranks = np.arange(1, n + 1, dtype=float)
    worst = 0.0
    for signs in itertools.product((-1.0, 1.0), repeat=n):
        d = ranks * np.array(signs)
        approx = wilcoxon_signed_rank(d, np.zeros(n), correction=correction).p_value
        worst = max(worst, abs(approx - exact_signed_rank_p(d)))
    return worst


def test_exact_enumeration_hand_case():
    # n=3, all positive: W+ = 6 is the extreme; two of eight patterns are as extreme
    assert exact_signed_rank_p([1.0, 2.0, 3.0]) == 0.25


def test_normal_approximation_converges_to_exact():
    # The uncorrected approximation is loose for tiny n (about 0.05 at n=10);
    # the continuity correction brings n=9 and n=10 inside 0.02.
    uncorrected = [worst_gap_over_sign_patterns(n, False) for n in (4, 7, 10)]
    assert uncorrected[0] > uncorrected[1] > uncorrected[2]
    assert uncorrected[2] < 0.051
    assert worst_gap_over_sign_patterns(9, True) < 0.02
    assert worst_gap_over_sign_patterns(10, True) < 0.02


# ---- Shapiro-Wilk --------------------------------------------------------

def test_shapiro_classic_sample():
    res = shapiro_wilk(WEIGHTS)
    assert res.statistic == pytest.approx(0.79, abs=5e-3)
    assert res.p_value < 0.01


@pytest.mark.parametrize("n", [3, 4, 7, 11, 12, 20, 42, 100, 800])
def test_shapiro_matches_scipy(n):
    scipy_stats = pytest.importorskip("scipy.stats")
    x = np.random.default_rng(n).gamma(2.0, size=n)
    ours = shapiro_wilk(x)
    ref = scipy_stats.shapiro(x)
    assert ours.statistic == pytest.approx(ref.statistic, abs=1e-6)
    assert ours.p_value == pytest.approx(ref.pvalue, abs=1e-6)


def test_shapiro_level_on_normal_samples():
    kept = sum(shapiro_wilk(np.random.default_rng(s).standard_normal(100)).p_value > 0.05
               for s in range(100))
    assert kept >= 90


def test_shapiro_errors():
    with pytest.raises(DegenerateDataError):
        shapiro_wilk([2.0] * 10)
    with pytest.raises(StatsError):
        shapiro_wilk([1.0, 2.0])
    with pytest.raises(StatsError):
        shapiro_wilk([1.0, np.nan, 2.0, 3.0])


# ---- properties ----------------------------------------------------------

finite = st.floats(-100, 100, allow_nan=False, allow_infinity=False)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(4, 40), shift=finite)
def test_symmetry_and_shift_invariance(seed, n, shift):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    y = x + rng.normal(0.2, 1.0, size=n)
    for test in (paired_t_test, wilcoxon_signed_rank):
        fwd = test(x, y)
        rev = test(y, x)
        assert rev.statistic == pytest.approx(-fwd.statistic, abs=1e-9)
        assert rev.p_value == pytest.approx(fwd.p_value, abs=1e-12)
        moved = test(x + shift, y + shift)
        assert moved.p_value == pytest.approx(fwd.p_value, abs=1e-6)
        assert 0.0 <= fwd.p_value <= 1.0
    w = shapiro_wilk(x - y)
    assert 0.0 < w.statistic <= 1.0
    assert 0.0 <= w.p_value <= 1.0


# ---- compare_encodings ---------------------------------------------------

def test_compare_takes_t_path_for_normal_differences():
    taken = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        x = rng.uniform(0.5, 0.9, 42)
        res = compare_encodings(x, x + rng.normal(0.01, 0.05, 42))
        assert res.normal_path_taken == (res.normality.p_value > 0.05)
        taken += res.normal_path_taken
        if res.normal_path_taken:
            assert res.significance.test is TestKind.PAIRED_T
    assert taken >= 16


def test_compare_takes_wilcoxon_for_skewed_differences():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        x = rng.uniform(0.5, 0.9, 42)
        res = compare_encodings(x, x + rng.exponential(0.1, 42) - 0.05)
        assert not res.normal_path_taken
        assert res.significance.test is TestKind.WILCOXON


def test_alpha_boundary_goes_to_wilcoxon(monkeypatch):
    assert not normal_path(0.05, 0.05)
    assert normal_path(0.0500001, 0.05)
    fake = stats.TestResult(TestKind.SHAPIRO_WILK, 0.9, 0.05, 5)
    monkeypatch.setattr(stats, "shapiro_wilk", lambda d: fake)
    res = compare_encodings([1, 2, 3, 4, 5], [1.5, 2.1, 3.3, 4.2, 5.9])
    assert res.significance.test is TestKind.WILCOXON
    assert not res.normal_path_taken


def test_constant_gap_is_significant():
    x = np.linspace(0.3, 0.8, 42)
    res = compare_encodings(x + 0.1, x)
    assert res.significance.test is TestKind.WILCOXON
    assert res.significant
    assert res.significance.statistic > 0
    out = res.to_dict()
    assert out["normality_statistic"] is None
    assert set(out) >= {"normality_p", "test_name", "statistic", "p", "significant"}


def test_significant_iff_p_at_most_alpha():
    rng = np.random.default_rng(1)
    x = rng.uniform(size=42)
    res = compare_encodings(x, x + rng.normal(0, 0.1, 42), alpha=0.5)
    assert res.significant == (res.significance.p_value <= 0.5)


def test_compare_identical_vectors():
    with pytest.raises(DegenerateDataError):
        compare_encodings([0.1, 0.2, 0.3], [0.1, 0.2, 0.3])


def test_compare_needs_three_pairs():
    with pytest.raises(StatsError):
        compare_encodings([0.1, 0.2], [0.2, 0.1])
