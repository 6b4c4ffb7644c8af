import math

import numpy as np
import pytest

from critbrw import stats
from critbrw.stats import (StatsError, TailEstimate, clopper_pearson,
                           compare_d4_designs, empirical_exp_moment,
                           fit_exponent, paley_zygmund_check, tail_probability,
                           two_sample_equal)


def test_tail_edge_cases():
    e = tail_probability(np.zeros(100), np.zeros(100, bool), 0)
    assert e.p_hat == 0.0 and e.hi > 0.0 and e.lo == 0.0
    e2 = tail_probability(np.ones(100), np.zeros(100, bool), 0)
    assert e2.p_hat == 1.0 and e2.lo < 1.0 and e2.hi == 1.0
    with pytest.raises(StatsError):
        tail_probability(np.array([]), np.array([], bool), 1)


def test_tail_censoring_widens_both_sides():
    ell = np.array([5, 5, 1, 1, 1, 1])
    und = np.array([False, False, True, True, False, False])
    e = tail_probability(ell, und, 3)
    assert e.successes == 2 and e.undecided == 2
    lo_ref, _ = clopper_pearson(2, 6)
    _, hi_ref = clopper_pearson(4, 6)
    assert e.lo == pytest.approx(lo_ref) and e.hi == pytest.approx(hi_ref)
    # censored runs already above the threshold are decided successes
    e2 = tail_probability(ell, und, 0)
    assert e2.successes == 6 and e2.undecided == 0


def test_tail_bias_allowance():
    e = tail_probability(np.array([1, 0, 0, 0]), np.zeros(4, bool), 0,
                         bias_allowance=0.05)
    base = clopper_pearson(1, 4)[1]
    assert e.hi == pytest.approx(min(1.0, base + 0.05))


def test_clopper_pearson_exact_coverage():
    # meta-check on synthetic Bernoulli: coverage >= 94% at 95% nominal
    rng = np.random.default_rng(0)
    for p in (0.5, 0.01):
        n = 500
        reps = 10 ** 4
        ks = rng.binomial(n, p, size=reps)
        covered = 0
        # vectorized CP via beta ppf
        import scipy.stats as ss
        lo = np.where(ks > 0, ss.beta.ppf(0.025, ks, n - ks + 1), 0.0)
        hi = np.where(ks < n, ss.beta.ppf(0.975, ks + 1, n - ks), 1.0)
        covered = ((lo <= p) & (p <= hi)).mean()
        assert covered >= 0.94


def _planted_cells(rng, slope, intercept, xs, n):
    cells = []
    for x in xs:
        p = math.exp(intercept + slope * math.log(x))
        k = rng.binomial(n, p)
        ell = np.zeros(n)
        ell[:k] = x + 1
        cells.append((x, tail_probability(ell, np.zeros(n, bool), x)))
    return cells


def test_fit_recovers_planted_slope():
    rng = np.random.default_rng(5)
    for slope in (-0.66, -1.0, -2.0):
        cells = _planted_cells(rng, slope, -1.0, [2, 4, 8, 16, 32], 200_000)
        fit = fit_exponent(cells, "log-log")
        assert abs(fit.slope - slope) <= 2 * max(fit.slope_se, 0.01)


def test_fit_validation():
    rng = np.random.default_rng(6)
    cells = _planted_cells(rng, -1.0, -1.0, [2, 4], 1000)
    with pytest.raises(StatsError):
        fit_exponent(cells, "log-log")          # too few points
    with pytest.raises(StatsError):
        fit_exponent(cells, "hyperbolic", min_points=2)


def test_compare_designs_synthetic():
    rng = np.random.default_rng(7)
    us = [1, 2, 4, 9, 16]
    n = 400_000
    sqrt_cells = []
    lin_cells = []
    for u in us:
        p_s = math.exp(-2.0 * math.sqrt(u))
        p_l = math.exp(-0.5 * u)
        ks = rng.binomial(n, p_s)
        kl = rng.binomial(n, p_l)
        es = TailEstimate(ks, n, 0, u, ks / n, *clopper_pearson(ks, n))
        el = TailEstimate(kl, n, 0, u, kl / n, *clopper_pearson(kl, n))
        sqrt_cells.append((u, es))
        lin_cells.append((u, el))
    assert compare_d4_designs(sqrt_cells).preferred == "sqrt-u"
    assert compare_d4_designs(lin_cells).preferred == "u"
    with pytest.raises(StatsError):
        compare_d4_designs(sqrt_cells[:2])
    with pytest.raises(StatsError):
        compare_d4_designs([(1, sqrt_cells[0][1]), (2, sqrt_cells[1][1]),
                            (3, sqrt_cells[2][1])])   # range < 4


def test_exp_moment_basics():
    x = np.array([0.0, 1.0, 2.0, 3.0])
    e = empirical_exp_moment(x, 0.0, 1.0)
    assert e.estimate == 1.0
    assert empirical_exp_moment(x, 0.5, 2.0).estimate >= 1.0
    with pytest.raises(StatsError):
        empirical_exp_moment(x, -1.0, 1.0)
    c = empirical_exp_moment(x, 0.1, 1.0, conditional=True)
    assert c.conditional_p == 0.75
    with pytest.raises(StatsError):
        empirical_exp_moment(np.zeros(10), 0.1, 1.0, conditional=True)


def test_exp_moment_instability_flag():
    x = np.zeros(2000)
    x[0] = 500.0
    e = empirical_exp_moment(x, 1.0, 10.0)
    assert e.unstable and e.top_fraction > 0.5


def test_paley_zygmund_cases():
    const = paley_zygmund_check(np.full(1000, 3.0))
    assert const.lhs == pytest.approx(1.0) and const.rhs == pytest.approx(1.0)
    assert const.holds
    rng = np.random.default_rng(8)
    bern = rng.binomial(1, 0.3, size=50_000).astype(float)
    rep = paley_zygmund_check(bern)
    assert rep.holds
    assert rep.rhs == pytest.approx(0.3, abs=0.02)
    assert paley_zygmund_check(np.zeros(100)).trivial
    with pytest.raises(StatsError):
        paley_zygmund_check(np.array([-1.0, 2.0]))


def test_two_sample_identical_and_disjoint():
    rng = np.random.default_rng(9)
    a = rng.poisson(3.0, size=5000)
    res = two_sample_equal(a, a.copy(), seed=1)
    assert res.passed and res.chi2_p == pytest.approx(1.0)
    b = a + 50
    res2 = two_sample_equal(a, b, seed=1)
    assert not res2.passed and res2.ks_p < 1e-6
    with pytest.raises(StatsError):
        two_sample_equal(a[:100], a[:100], seed=1)


def test_two_sample_detects_shift():
    rng = np.random.default_rng(10)
    a = rng.poisson(3.0, size=20_000)
    b = rng.poisson(3.3, size=20_000)
    assert not two_sample_equal(a, b, seed=2).passed


def test_estimators_order_independent():
    rng = np.random.default_rng(11)
    x = rng.exponential(1.0, 5000)
    e1 = empirical_exp_moment(x, 0.3, 2.0)
    e2 = empirical_exp_moment(x[::-1].copy(), 0.3, 2.0)
    assert e1.estimate == pytest.approx(e2.estimate, rel=1e-12)
    perm = rng.permutation(len(x))
    t1 = tail_probability(x, np.zeros(len(x), bool), 1.0)
    t2 = tail_probability(x[perm], np.zeros(len(x), bool), 1.0)
    assert (t1.p_hat, t1.lo, t1.hi) == (t2.p_hat, t2.lo, t2.hi)


def test_moment_rate_check_d1():
    rep = stats.local_time_moment_check(1, 2, [16, 32, 64, 128], 40_000,
                                        master_seed=555)
    assert rep.expected == 2.0
    assert abs(rep.slope - 2.0) <= 0.25
