"""Estimators and tests: exact binomial tails, exponential moments, scaling
fits, design comparison, two-sample equivalence, second-moment diagnostics.

All estimators are deterministic functions of their input sample multisets.
Tail estimates carry exact Clopper-Pearson intervals widened by censored
(budget-stopped, still undecided) runs on both sides, plus any analytic
truncation allowance supplied by the caller.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.stats

Z95 = 1.959963984540054


class StatsError(ValueError):
    pass


def clopper_pearson(successes: int, trials: int, conf: float = 0.95) -> tuple[float, float]:
    """Exact binomial confidence interval."""
    if trials <= 0:
        raise StatsError("zero trials")
    a = (1.0 - conf) / 2.0
    k, n = int(successes), int(trials)
    lo = scipy.stats.beta.ppf(a, k, n - k + 1) if k > 0 else 0.0
    hi = scipy.stats.beta.ppf(1.0 - a, k + 1, n - k) if k < n else 1.0
    return float(lo), float(hi)


@dataclass
class TailEstimate:
    """P(X > t) with exact interval, censoring widening, and bias allowance."""

    successes: int
    trials: int
    undecided: int
    threshold: float
    p_hat: float
    lo: float
    hi: float
    bias_allowance: float = 0.0

    @property
    def se(self) -> float:
        p = min(max(self.p_hat, 1.0 / (self.trials + 1)), 1 - 1.0 / (self.trials + 1))
        return math.sqrt(p * (1 - p) / self.trials)

    def log_se(self) -> float:
        """Delta-method SE of log p_hat, floored by the widened interval."""
        if self.p_hat <= 0 or self.lo <= 0:
            return float("inf")
        delta = self.se / self.p_hat
        spread = (math.log(self.hi) - math.log(self.lo)) / (2 * Z95)
        return max(delta, spread / 2)

    @property
    def width_factor(self) -> float:
        return self.hi / self.lo if self.lo > 0 else float("inf")


def tail_probability(ell: np.ndarray, undecided_mask: np.ndarray, t,
                     bias_allowance: float = 0.0, conf: float = 0.95) -> TailEstimate:
    """Estimate P(X > t) from per-run values with censoring.

    A censored run whose partial value already exceeds t is a decided
    success (the event is monotone in further exploration); censored runs at
    or below t are undecided and count as successes in the upper limit and
    failures in the lower.  ``bias_allowance`` additively widens the upper
    limit (distance-truncation bound).
    """
    ell = np.asarray(ell)
    n = ell.size
    if n == 0:
        raise StatsError("zero trials")
    succ = int((ell > t).sum())
    und = int((np.asarray(undecided_mask) & (ell <= t)).sum())
    lo, _ = clopper_pearson(succ, n, conf)
    _, hi = clopper_pearson(succ + und, n, conf)
    hi = min(1.0, hi + bias_allowance)
    p_hat = (succ + 0.5 * und) / n
    return TailEstimate(succ, n, und, float(t), p_hat, lo, hi, bias_allowance)


# ---------------------------------------------------------------------------
# Regression
# ---------------------------------------------------------------------------

@dataclass
class RegressionFit:
    slope: float
    intercept: float
    slope_se: float
    r2: float
    design: str
    x: np.ndarray
    y: np.ndarray
    w: np.ndarray
    residuals: np.ndarray = field(default=None)

    def predict(self, x):
        return self.intercept + self.slope * np.asarray(x)


def _weighted_fit(x, y, w, design):
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    w = np.asarray(w, float)
    if x.size < 2 or np.ptp(x) == 0:
        raise StatsError("degenerate design: need at least two distinct x values")
    W = np.diag(w)
    X = np.column_stack([np.ones_like(x), x])
    xtwx = X.T @ W @ X
    beta = np.linalg.solve(xtwx, X.T @ W @ y)
    resid = y - X @ beta
    ybar = np.average(y, weights=w)
    ss_res = float(w @ resid ** 2)
    ss_tot = float(w @ (y - ybar) ** 2)
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    cov = np.linalg.inv(xtwx)
    slope_se = math.sqrt(max(cov[1, 1], 0.0))
    return RegressionFit(float(beta[1]), float(beta[0]), slope_se, r2, design,
                         x, y, w, resid)


def fit_exponent(points, design: str = "log-log", min_points: int = 5,
                 max_width_factor: float = 2.0, drop_wide: bool = False) -> RegressionFit:
    """Weighted least squares of log p_hat against the design transform of t.

    ``points`` is a sequence of (t, TailEstimate).  Weights are inverse
    variances from the delta-method SE of log p_hat (censor-widened intervals
    propagate).  Points with interval width factor above ``max_width_factor``
    raise, or are dropped when ``drop_wide``.
    """
    pts = [(t, e) for t, e in points if e.p_hat > 0 and e.lo > 0]
    if drop_wide:
        pts = [(t, e) for t, e in pts if e.width_factor <= max_width_factor]
    else:
        for t, e in pts:
            if e.width_factor > max_width_factor:
                raise StatsError("grid point t=%g has CI width factor %.2f > %g"
                                 % (t, e.width_factor, max_width_factor))
    if len(pts) < min_points:
        raise StatsError("need >= %d usable grid points, have %d" % (min_points, len(pts)))
    tv = np.array([t for t, _ in pts], float)
    if design == "log-log":
        x = np.log(tv)
    elif design == "log-linear-in-u":
        x = tv
    elif design == "log-linear-in-sqrt-u":
        x = np.sqrt(tv)
    else:
        raise StatsError("unknown design %r" % design)
    y = np.array([math.log(e.p_hat) for _, e in pts])
    se = np.array([e.log_se() for _, e in pts])
    w = 1.0 / se ** 2
    return _weighted_fit(x, y, w, design)


@dataclass
class DesignComparison:
    r2_linear: float
    r2_sqrt: float
    preferred: str
    delta_r2: float
    fit_linear: RegressionFit
    fit_sqrt: RegressionFit


def compare_d4_designs(points) -> DesignComparison:
    """Regress -log p_hat on u and on sqrt(u); prefer the higher R^2.

    ``points`` is a sequence of (u, TailEstimate) with u = t/r^4.  Requires
    at least three points and dynamic range max u / min u >= 4.
    """
    pts = [(u, e) for u, e in points if e.p_hat > 0 and e.lo > 0]
    if len(pts) < 3:
        raise StatsError("need at least three usable grid points")
    us = [u for u, _ in pts]
    if max(us) / min(us) < 4:
        raise StatsError("insufficient dynamic range: max u / min u = %.2f < 4"
                         % (max(us) / min(us)))
    lin = fit_exponent(pts, "log-linear-in-u", min_points=3, drop_wide=False,
                       max_width_factor=float("inf"))
    sqt = fit_exponent(pts, "log-linear-in-sqrt-u", min_points=3, drop_wide=False,
                       max_width_factor=float("inf"))
    preferred = "sqrt-u" if sqt.r2 > lin.r2 else "u"
    return DesignComparison(lin.r2, sqt.r2, preferred, abs(sqt.r2 - lin.r2), lin, sqt)


# ---------------------------------------------------------------------------
# Exponential moments
# ---------------------------------------------------------------------------

@dataclass
class ExpMomentEstimate:
    lam: float
    scale: float
    n: int
    estimate: float
    log_estimate: float
    log_se: float
    top_fraction: float      # share of the estimate carried by the top 0.1%
    unstable: bool
    conditional_p: float = None

    def log_ci(self, z: float = 3.0) -> tuple[float, float]:
        return self.log_estimate - z * self.log_se, self.log_estimate + z * self.log_se


def empirical_exp_moment(samples, lam: float, scale: float,
                         conditional: bool = False) -> ExpMomentEstimate:
    """E[exp(lam * X / scale)] with a delta-method SE on the log and a
    heavy-tail instability flag (top 0.1% of samples carrying > 50% of the
    estimate).  The conditional variant restricts to X > 0 and reports
    P(X > 0) alongside."""
    if lam < 0:
        raise StatsError("lambda must be nonnegative")
    x = np.asarray(samples, float)
    cond_p = None
    if conditional:
        pos = x > 0
        if not pos.any():
            raise StatsError("conditional exponential moment of an all-zero sample")
        cond_p = float(pos.mean())
        x = x[pos]
    n = x.size
    terms = np.exp(lam * x / scale)
    est = float(terms.mean())
    se = float(terms.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    top_k = max(1, int(math.ceil(0.001 * n)))
    top = np.sort(terms)[-top_k:].sum()
    top_fraction = float(top / terms.sum())
    return ExpMomentEstimate(lam, scale, n, est, math.log(est),
                             se / est if est > 0 else float("inf"),
                             top_fraction, top_fraction > 0.5, cond_p)


# ---------------------------------------------------------------------------
# Paley-Zygmund and two-sample checks
# ---------------------------------------------------------------------------

@dataclass
class PZReport:
    lhs: float       # P(X > 0)
    rhs: float       # (E X)^2 / E X^2
    margin: float    # 3 * propagated SE
    trivial: bool
    holds: bool


def paley_zygmund_check(samples) -> PZReport:
    """Check P(X > 0) >= (E X)^2 / E X^2 - 3 SE for nonnegative samples."""
    x = np.asarray(samples, float)
    if (x < 0).any():
        raise StatsError("Paley-Zygmund check needs nonnegative samples")
    n = x.size
    if not (x > 0).any():
        return PZReport(0.0, 0.0, 0.0, True, True)
    m1 = x.mean()
    m2 = (x ** 2).mean()
    lhs = float((x > 0).mean())
    rhs = m1 * m1 / m2
    # delta method on (m1, m2, lhs): gradient of m1^2/m2 is (2 m1/m2, -m1^2/m2^2)
    g = np.array([2 * m1 / m2, -m1 * m1 / (m2 * m2), -1.0])
    stack = np.column_stack([x, x ** 2, (x > 0).astype(float)])
    cov = np.cov(stack, rowvar=False) / n
    var = float(g @ cov @ g)
    margin = 3.0 * math.sqrt(max(var, 0.0))
    return PZReport(lhs, float(rhs), margin, False, lhs >= rhs - margin)


@dataclass
class TwoSampleResult:
    ks_stat: float
    ks_p: float
    chi2_stat: float
    chi2_p: float
    passed: bool


def two_sample_equal(a, b, alpha: float = 0.01, seed: int = 0,
                     min_expected: float = 5.0) -> TwoSampleResult:
    """Equality test for integer count samples: KS with uniform jitter to
    break ties, plus chi-square on bins pooled to expected counts >= 5."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if a.size < 1000 or b.size < 1000:
        raise StatsError("two-sample test wants n >= 1000 per side")
    rng = np.random.default_rng(seed)
    ks = scipy.stats.ks_2samp(a + rng.random(a.size), b + rng.random(b.size))
    # pooled integer binning
    vals = np.arange(0, max(a.max(), b.max()) + 1)
    ca = np.array([(a == v).sum() for v in vals], float)
    cb = np.array([(b == v).sum() for v in vals], float)
    tot = ca + cb
    bins_a, bins_b = [], []
    acc_a = acc_b = acc_t = 0.0
    scale = (ca.sum() + cb.sum()) / 2
    for i in range(len(vals)):
        acc_a += ca[i]
        acc_b += cb[i]
        acc_t += tot[i]
        if acc_t * min(ca.sum(), cb.sum()) / (ca.sum() + cb.sum()) >= min_expected:
            bins_a.append(acc_a)
            bins_b.append(acc_b)
            acc_a = acc_b = acc_t = 0.0
    if acc_t > 0:
        if bins_a:
            bins_a[-1] += acc_a
            bins_b[-1] += acc_b
        else:
            bins_a, bins_b = [acc_a], [acc_b]
    if len(bins_a) < 2:
        raise StatsError("degenerate samples: everything falls in one bin")
    chi2, chi2_p, _, _ = scipy.stats.chi2_contingency(np.array([bins_a, bins_b]))
    passed = bool(ks.pvalue > alpha and chi2_p > alpha)
    return TwoSampleResult(float(ks.statistic), float(ks.pvalue),
                           float(chi2), float(chi2_p), passed)


# ---------------------------------------------------------------------------
# Low-dimension local-time moment rates
# ---------------------------------------------------------------------------

MOMENT_RATES = {2: {1: 2.0, 2: 1.0, 3: 0.0}, 3: {1: 3.5, 2: 2.0, 3: 0.5}}


@dataclass
class MomentRateReport:
    dim: int
    order: int
    ns: np.ndarray
    moments: np.ndarray
    ses: np.ndarray
    slope: float
    expected: float
    tolerance: float
    holds: bool


def local_time_moment_check(dim: int, order: int, ns, n_runs: int,
                            master_seed: int = 20_000,
                            point=None, tolerance: float = 0.25) -> MomentRateReport:
    """MC moments of the single-site local time up to generation n, fitted
    log-log against n and compared with the known growth exponent
    (n^{3-d} for the second moment in d<=2; n^{(10-3d)/2} for the third)."""
    from .engine import SimSpec, run_batch
    from .model import geometric_half, uniform_step
    if dim not in (1, 2, 3):
        raise StatsError("rate table covers d in {1,2,3}")
    if order not in MOMENT_RATES:
        raise StatsError("order must be 2 or 3")
    x = tuple(point) if point is not None else (0,) * dim
    moments, ses = [], []
    for i, n in enumerate(ns):
        spec = SimSpec(dim=dim, offspring=geometric_half(), step=uniform_step(dim),
                       target_points=(x,), max_generation=int(n),
                       node_budget=10 ** 9)
        batch = run_batch(spec, n_runs, master_seed + i)
        v = batch.ell.astype(float) ** order
        moments.append(v.mean())
        ses.append(v.std(ddof=1) / math.sqrt(v.size))
    moments = np.asarray(moments)
    ses = np.asarray(ses)
    w = (moments / np.maximum(ses, 1e-300)) ** 2
    fit = _weighted_fit(np.log(np.asarray(ns, float)), np.log(moments), w, "log-log")
    expected = MOMENT_RATES[order][dim]
    holds = abs(fit.slope - expected) <= tolerance
    return MomentRateReport(dim, order, np.asarray(ns), moments, ses,
                            fit.slope, expected, tolerance, holds)


def mean_se(samples) -> tuple[float, float]:
    x = np.asarray(samples, float)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))
