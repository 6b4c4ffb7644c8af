"""Offspring and step distributions for the branching random walk.

The offspring law must be critical (mean one) with positive variance; the
step law is supported on the 2d lattice neighbors of the origin, centered,
and non-degenerate.  Built-in offspring laws: geometric(1/2), binary {0,2},
Poisson(1).  All laws are immutable after construction and safe to share
across worker processes; samplers take an explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

CRIT_TOL = 1e-12
MAX_CUSTOM_SUPPORT = 64
# Poisson(1) inversion table is truncated once cumulative mass reaches
# 1 - POISSON_TRUNC and renormalized; criticality of the truncated pmf is
# checked at a 1e-9 tolerance instead of 1e-12.
POISSON_TRUNC = 1e-15
POISSON_CRIT_TOL = 1e-9


class LawError(ValueError):
    """Raised when a distribution violates its construction invariants."""


@dataclass(frozen=True)
class OffspringLaw:
    """Critical offspring distribution (pmf over nonnegative integers).

    ``pmf[k]`` is the probability of k children.  ``variance`` is derived at
    construction.  ``exp_moment_finite`` flags laws usable in the d >= 4
    scenarios (all built-ins qualify; finite-support customs trivially do).
    """

    pmf: tuple[float, ...]
    kind: str = "custom"
    variance: float = field(init=False)
    support_bound: int = field(init=False)
    exp_moment_finite: bool = field(init=False)

    def __post_init__(self):
        p = np.asarray(self.pmf, dtype=float)
        if p.ndim != 1 or p.size == 0 or p.size > MAX_CUSTOM_SUPPORT + 1:
            raise LawError("offspring pmf must have support within 0..%d" % MAX_CUSTOM_SUPPORT)
        if np.any(p < 0):
            raise LawError("offspring pmf has negative entries")
        tol = POISSON_CRIT_TOL if self.kind == "poisson1" else CRIT_TOL
        if abs(p.sum() - 1.0) > tol:
            raise LawError("offspring pmf does not sum to 1 (defect %.3e)" % abs(p.sum() - 1))
        k = np.arange(p.size)
        mean = float(k @ p)
        if abs(mean - 1.0) > tol:
            raise LawError("offspring law is not critical (mean %.15f)" % mean)
        var = float((k - 1.0) ** 2 @ p)
        if var <= 0:
            raise LawError("offspring law is degenerate (zero variance)")
        object.__setattr__(self, "variance", var)
        object.__setattr__(self, "support_bound", int(p.size - 1))
        object.__setattr__(self, "exp_moment_finite", True)

    def pgf(self, s: float) -> float:
        """Probability generating function f(s) = sum_k pmf[k] s^k on [0, 1]."""
        if not 0.0 <= s <= 1.0:
            raise LawError("pgf argument must lie in [0,1], got %r" % (s,))
        if self.kind == "geometric_half":
            return 1.0 / (2.0 - s)  # closed form, exact for the untruncated law
        if self.kind == "poisson1":
            return math.exp(s - 1.0)
        return float(np.polynomial.polynomial.polyval(s, np.asarray(self.pmf)))

    def pgf_derivative(self, s: float) -> float:
        if not 0.0 <= s <= 1.0:
            raise LawError("pgf argument must lie in [0,1], got %r" % (s,))
        if self.kind == "geometric_half":
            return 1.0 / (2.0 - s) ** 2
        if self.kind == "poisson1":
            return math.exp(s - 1.0)
        p = np.asarray(self.pmf)
        k = np.arange(p.size)
        return float(np.polynomial.polynomial.polyval(s, (p * k)[1:]))

    def cdf_table(self) -> np.ndarray:
        """Cumulative table used by inversion samplers (monotone, ends at 1)."""
        c = np.cumsum(np.asarray(self.pmf, dtype=float))
        c[-1] = 1.0
        return c

    def sample(self, rng: np.random.Generator, size=None):
        u = rng.random(size)
        return np.searchsorted(self.cdf_table(), u, side="right").astype(np.int64)


def pgf_eval(law: OffspringLaw, s: float) -> float:
    """f(s) = sum_k mu(k) s^k; monotone nondecreasing on [0,1], f(1)=1."""
    return law.pgf(s)


def adjoint(law: OffspringLaw) -> np.ndarray:
    """Tail-sum pmf mu~(i) = sum_{j>=i+1} mu(j).

    Sums to one exactly when mu is critical (the total is the mean of mu);
    its own mean is variance/2.  Returned as a plain pmf array.
    """
    p = np.asarray(law.pmf, dtype=float)
    tail = np.cumsum(p[::-1])[::-1]  # tail[i] = sum_{j>=i} p[j]
    return tail[1:].copy()


def adjoint_pgf(law: OffspringLaw, s: float) -> float:
    """pgf of the adjoint law: (1 - f(s)) / (1 - s), continuous at s=1."""
    if not 0.0 <= s <= 1.0:
        raise LawError("pgf argument must lie in [0,1], got %r" % (s,))
    if s > 1.0 - 1e-9:
        # limit value f'(1) = 1 by criticality; expand to first order
        return 1.0 - 0.5 * law.variance * (s - 1.0) if s < 1.0 else 1.0
    return (1.0 - law.pgf(s)) / (1.0 - s)


def geometric_half() -> OffspringLaw:
    """mu(k) = 2^-(k+1); sigma^2 = 2; truncated at mass 2^-65 for sampling."""
    k = np.arange(MAX_CUSTOM_SUPPORT + 1)
    p = 0.5 ** (k + 1)
    p[-1] += 0.5 ** (MAX_CUSTOM_SUPPORT + 1)  # fold the tail into the last atom
    return OffspringLaw(tuple(p), kind="geometric_half")


def binary() -> OffspringLaw:
    """mu(0) = mu(2) = 1/2; sigma^2 = 1."""
    return OffspringLaw((0.5, 0.0, 0.5), kind="binary")


def poisson1() -> OffspringLaw:
    """Poisson(1), truncated at cumulative mass 1 - 1e-15 and renormalized."""
    probs = []
    total = 0.0
    k = 0
    while total < 1.0 - POISSON_TRUNC:
        pk = math.exp(-1.0) / math.factorial(k)
        probs.append(pk)
        total += pk
        k += 1
    p = np.asarray(probs) / total
    return OffspringLaw(tuple(p), kind="poisson1")


def custom_offspring(pmf: dict[int, float]) -> OffspringLaw:
    """Finite-support custom law from a {k: prob} table (support <= 64)."""
    if not pmf:
        raise LawError("empty pmf")
    kmax = max(pmf)
    if kmax > MAX_CUSTOM_SUPPORT or min(pmf) < 0:
        raise LawError("custom support must lie within 0..%d" % MAX_CUSTOM_SUPPORT)
    p = np.zeros(kmax + 1)
    for k, v in pmf.items():
        p[k] = v
    return OffspringLaw(tuple(p), kind="custom")


OFFSPRING_BUILTINS = {
    "geometric": geometric_half,
    "binary": binary,
    "poisson": poisson1,
}


def offspring_from_name(name) -> OffspringLaw:
    if isinstance(name, dict):
        return custom_offspring({int(k): float(v) for k, v in name.items()})
    try:
        return OFFSPRING_BUILTINS[name]()
    except KeyError:
        raise LawError("unknown offspring law %r (choose from %s or a pmf table)"
                       % (name, sorted(OFFSPRING_BUILTINS)))


@dataclass(frozen=True)
class StepLaw:
    """Step distribution on the 2d unit neighbors of the origin.

    Probabilities are stored axis-major: entry 2*i is +e_i, entry 2*i+1 is
    -e_i.  Every neighbor must carry positive mass and each axis must be
    balanced (mean zero coordinate-wise).
    """

    probs: tuple[float, ...]
    dim: int

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if self.dim < 1:
            raise LawError("dimension must be >= 1")
        if p.size != 2 * self.dim:
            raise LawError("step pmf must have one entry per signed axis direction")
        if np.any(p <= 0):
            raise LawError("step law must put positive mass on every neighbor")
        if abs(p.sum() - 1.0) > CRIT_TOL:
            raise LawError("step pmf does not sum to 1")
        mean = p[0::2] - p[1::2]
        if np.any(np.abs(mean) > CRIT_TOL):
            raise LawError("step law is not centered (coordinate means %s)" % mean)

    @property
    def is_uniform(self) -> bool:
        return bool(np.allclose(self.probs, 1.0 / (2 * self.dim), atol=1e-12))

    def cdf_table(self) -> np.ndarray:
        c = np.cumsum(np.asarray(self.probs, dtype=float))
        c[-1] = 1.0
        return c

    def vectors(self) -> np.ndarray:
        """(2d, d) array of the signed unit steps, in table order."""
        out = np.zeros((2 * self.dim, self.dim), dtype=np.int64)
        for i in range(self.dim):
            out[2 * i, i] = 1
            out[2 * i + 1, i] = -1
        return out

    def prob_of(self, vec) -> float:
        v = np.asarray(vec)
        nz = np.nonzero(v)[0]
        if len(nz) != 1 or abs(v[nz[0]]) != 1:
            return 0.0
        i = int(nz[0])
        return self.probs[2 * i] if v[i] > 0 else self.probs[2 * i + 1]

    def sample(self, rng: np.random.Generator, size=None) -> np.ndarray:
        idx = np.searchsorted(self.cdf_table(), rng.random(size), side="right")
        return self.vectors()[idx]


def uniform_step(dim: int) -> StepLaw:
    return StepLaw(tuple([1.0 / (2 * dim)] * (2 * dim)), dim)


def step_from_name(name, dim: int) -> StepLaw:
    if name == "uniform":
        return uniform_step(dim)
    raise LawError("unknown step law %r" % (name,))


def sample_offspring(law: OffspringLaw, rng: np.random.Generator, size=None):
    """Draw offspring counts; empirical frequencies converge to the pmf."""
    return law.sample(rng, size)


def sample_step(law: StepLaw, rng: np.random.Generator, size=None):
    """Draw lattice steps among the 2d signed unit vectors."""
    return law.sample(rng, size)
