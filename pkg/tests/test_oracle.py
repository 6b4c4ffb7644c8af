from fractions import Fraction

import numpy as np
import pytest

from critbrw import model, oracle
from critbrw.lattice import BallSpec


def test_survival_examples():
    g = model.geometric_half()
    assert oracle.survival_probability(g, 100) == pytest.approx(1 / 101, abs=1e-15)
    assert oracle.survival_probability(g, 0) == 1.0
    assert oracle.survival_probability(model.binary(), 1) == pytest.approx(0.5, abs=1e-12)


def test_survival_kolmogorov_constant():
    # n * P(Z_n != 0) * sigma^2 / 2 -> 1; the geometric ratio is n/(n+1)
    g = model.geometric_half()
    n = 1000
    p = oracle.survival_probability(g, n)
    assert abs(n * p * g.variance / 2 - 1.0) < 0.01
    b = model.binary()
    pb = oracle.survival_probability(b, n)
    assert abs(n * pb * b.variance / 2 - 1.0) < 0.01


def test_pgf_iterate_semigroup():
    for law in (model.binary(), model.geometric_half()):
        for m, n in [(3, 4), (5, 2)]:
            fn = oracle.survival_probability(law, n)
            fmn = oracle.survival_probability(law, m + n)
            s = 1.0 - fn
            for _ in range(m):
                s = law.pgf(s)
            assert s == pytest.approx(1.0 - fmn, abs=1e-12)


def test_pgf_iterate_series():
    it = oracle.pgf_iterate(model.binary(), 4, degree=64)
    assert it.coeffs.min() >= -1e-15
    assert it.extinction == pytest.approx(
        1.0 - oracle.survival_probability(model.binary(), 4), abs=1e-12)
    assert it.coeffs.sum() + it.deficit == pytest.approx(1.0, abs=1e-9)
    # odd generation sizes are impossible for the binary law
    assert it.coeffs[1] == pytest.approx(0.0, abs=1e-15)


def test_expected_local_time_trivial_and_exact():
    stp = model.uniform_step(1)
    assert oracle.expected_local_time(1, stp, (0,), BallSpec(2, 1), 0) == 1.0
    exact = oracle.expected_local_time_exact_1d(stp, 0, 2, 3)
    assert exact == Fraction(13, 4)
    flt = oracle.expected_local_time(1, stp, (0,), BallSpec(2, 1), 3)
    assert flt == pytest.approx(float(exact), abs=1e-12)


def test_expected_local_time_point_target():
    stp = model.uniform_step(2)
    # E = sum_k P(S_k = 0): k=0 gives 1, k=2 gives 1/4
    v = oracle.expected_local_time(2, stp, (0, 0), [(0, 0)], 2)
    assert v == pytest.approx(1.0 + 0.25, abs=1e-12)


def test_second_moment_trivial():
    stp = model.uniform_step(1)
    v = oracle.second_moment_local_time(1, model.binary(), stp, (0,), BallSpec(2, 1), 0)
    assert v == pytest.approx(1.0, abs=1e-12)


def test_second_moment_hand_check_horizon1():
    # horizon 1, target {0}, binary law: ell = 1 always (children are at +-1),
    # so E[ell^2] = 1; with target B_2 every child contributes:
    # ell = 1 + Z_1, E[(1+Z_1)^2] = 1 + 2 E Z_1 + E Z_1^2 = 4 + var = 5 - 1 = ...
    stp = model.uniform_step(1)
    law = model.binary()
    v0 = oracle.second_moment_local_time(1, law, stp, (0,), [(0,)], 1)
    assert v0 == pytest.approx(1.0, abs=1e-12)
    v2 = oracle.second_moment_local_time(1, law, stp, (0,), BallSpec(2, 1), 1)
    # Z_1 in {0, 2}: E[(1+Z_1)^2] = (1 + 9)/2 = 5
    assert v2 == pytest.approx(5.0, abs=1e-12)


def test_small_distribution_examples():
    dist = oracle.exact_distribution_small(model.binary(), 2, 0, 22)
    # P(ell = 1) = P(root has no children) = 1/2
    assert dist.values[1] == pytest.approx(0.5, abs=1e-12)
    assert dist.values[0] == pytest.approx(0.0, abs=1e-15)
    # parity: the binary tree always has an odd number of vertices
    total = dist.values.sum() + dist.truncated_mass
    assert total == pytest.approx(1.0, abs=1e-12)


def test_small_distribution_caps():
    with pytest.raises(ValueError):
        oracle.exact_distribution_small(model.binary(), 2, 0, 23)
    with pytest.raises(ValueError):
        oracle.exact_distribution_small(model.geometric_half(), 2, 0, 10)
    with pytest.raises(ValueError):
        oracle.exact_distribution_small(model.binary(), 3, 0, 10)


def test_small_distribution_matches_tree_enumeration():
    # independent check at 3 nodes: trees of the binary law with <= 3 nodes
    # are the single root (p=1/2) and root with two leaf children (p=1/8);
    # with r=2 and start 0 both children are inside, so ell=3 for the cherry
    dist = oracle.exact_distribution_small(model.binary(), 2, 0, 3)
    assert dist.values[1] == pytest.approx(0.5, abs=1e-12)
    assert dist.values[3] == pytest.approx(1 / 8, abs=1e-12)
    assert dist.truncated_mass == pytest.approx(1 - 0.5 - 0.125, abs=1e-12)


def test_oracle_engine_independence_smells():
    # the oracle never imports the engine
    import critbrw.oracle as om
    src = open(om.__file__).read()
    assert "from .engine" not in src and "import engine" not in src
