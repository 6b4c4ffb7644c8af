import numpy as np
import pytest

from critbrw import model, oracle


def test_pgf_trivial_values():
    g = model.geometric_half()
    assert g.pgf(0.0) == pytest.approx(0.5, abs=1e-12)   # f(0) = mu(0)
    for law in (g, model.binary(), model.poisson1()):
        assert law.pgf(1.0) == pytest.approx(1.0, abs=1e-9)


def test_pgf_geometric_closed_form_vs_series():
    g = model.geometric_half()
    # truncated series evaluation as the independent check
    k = np.arange(200)
    series = float(np.sum(0.5 ** (k + 1) * 0.5 ** k))
    assert g.pgf(0.5) == pytest.approx(2.0 / 3.0, abs=1e-12)
    assert series == pytest.approx(2.0 / 3.0, abs=1e-12)


def test_pgf_monotone_and_domain():
    g = model.geometric_half()
    s = np.linspace(0, 1, 50)
    v = [g.pgf(x) for x in s]
    assert all(b >= a for a, b in zip(v, v[1:]))
    with pytest.raises(model.LawError):
        g.pgf(1.5)


def test_variances_match_closed_forms():
    assert model.geometric_half().variance == pytest.approx(2.0, abs=1e-9)
    assert model.binary().variance == pytest.approx(1.0, abs=1e-12)
    assert model.poisson1().variance == pytest.approx(1.0, abs=1e-6)


def test_adjoint_binary_by_enumeration():
    # tail sums: mu~(0) = mu(1)+mu(2) = 1/2, mu~(1) = mu(2) = 1/2
    adj = model.adjoint(model.binary())
    assert adj == pytest.approx([0.5, 0.5], abs=1e-15)


def test_adjoint_geometric_is_itself():
    g = model.geometric_half()
    adj = model.adjoint(g)
    assert np.allclose(adj[:10], np.asarray(g.pmf)[:10], atol=1e-15)


def test_point_mass_rejected():
    with pytest.raises(model.LawError):
        model.custom_offspring({1: 1.0})   # zero variance


def test_adjoint_sums_to_one_for_random_critical_laws():
    rng = np.random.default_rng(7)
    for _ in range(20):
        size = rng.integers(3, 64)
        w = rng.random(size + 1)
        w[1] = 0.0
        # rescale to mean one: choose p0 and renormalize iteratively
        k = np.arange(size + 1)
        w = w / w.sum()
        mean = k @ w
        # mix with a point mass at 0 to force mean exactly one
        if mean <= 1:
            continue
        a = 1.0 - 1.0 / mean
        pmf = w * (1 - a)
        pmf[0] += a
        law = model.custom_offspring({int(i): float(p) for i, p in enumerate(pmf) if p > 0})
        assert abs(model.adjoint(law).sum() - 1.0) < 1e-12


def test_adjoint_mean_is_half_variance():
    for law in (model.geometric_half(), model.binary(), model.poisson1()):
        adj = model.adjoint(law)
        mean = float(np.arange(len(adj)) @ adj)
        assert mean == pytest.approx(law.variance / 2, abs=1e-6)


def test_sampler_supports():
    rng = np.random.default_rng(0)
    draws = model.sample_offspring(model.binary(), rng, 1000)
    assert set(np.unique(draws)) <= {0, 2}
    steps = model.sample_step(model.uniform_step(2), rng, 1000)
    assert set(map(tuple, steps)) <= {(1, 0), (-1, 0), (0, 1), (0, -1)}


def test_sampler_moments_within_four_sigma():
    rng = np.random.default_rng(42)
    n = 10 ** 6
    for law in (model.geometric_half(), model.binary(), model.poisson1()):
        x = model.sample_offspring(law, rng, n)
        se_mean = np.sqrt(law.variance / n)
        assert abs(x.mean() - 1.0) < 4 * se_mean
        # second moment about the true mean (its estimator SE can vanish,
        # e.g. the binary law where (x-1)^2 is constant)
        v_hat = np.mean((x - 1.0) ** 2)
        m4 = np.mean((x - 1.0) ** 4)
        se_var = np.sqrt(max(m4 - law.variance ** 2, 0) / n)
        assert abs(v_hat - law.variance) <= 4 * se_var + 1e-12


def test_sampler_frequencies_chi_square():
    import scipy.stats
    rng = np.random.default_rng(3)
    law = model.poisson1()
    n = 10 ** 6
    x = model.sample_offspring(law, rng, n)
    kmax = 8
    obs = np.bincount(np.minimum(x, kmax + 1), minlength=kmax + 2)
    pmf = np.asarray(law.pmf)
    exp = np.append(pmf[:kmax + 1], pmf[kmax + 1:].sum()) * n
    chi2 = ((obs - exp) ** 2 / exp).sum()
    p = scipy.stats.chi2.sf(chi2, len(exp) - 1)
    assert p > 1e-4


def test_step_mean_within_clt_interval():
    rng = np.random.default_rng(9)
    n = 10 ** 6
    g = model.geometric_half()
    x = model.sample_offspring(g, rng, n)
    assert abs(x.mean() - 1.0) <= 3 * np.sqrt(2.0 / n)


def test_pgf_iteration_matches_extinction():
    # composing the pgf n times at 0 gives P(Z_n = 0)
    g = model.geometric_half()
    s = 0.0
    for _ in range(50):
        s = model.pgf_eval(g, s)
    assert s == pytest.approx(1.0 - oracle.survival_probability(g, 50), abs=1e-12)


def test_step_law_validation():
    with pytest.raises(model.LawError):
        model.StepLaw((0.5, 0.5, 0.0, 0.0), 2)        # zero mass on a neighbor
    with pytest.raises(model.LawError):
        model.StepLaw((0.6, 0.2, 0.1, 0.1), 2)        # uncentered
    law = model.StepLaw((0.3, 0.3, 0.2, 0.2), 2)      # centered, non-uniform
    assert not law.is_uniform
    assert model.uniform_step(3).is_uniform


def test_offspring_from_name_and_custom_table():
    assert model.offspring_from_name("binary").kind == "binary"
    law = model.offspring_from_name({0: 0.25, 1: 0.5, 2: 0.25})
    assert law.variance == pytest.approx(0.5)
    with pytest.raises(model.LawError):
        model.offspring_from_name("zeta")
