"""Exact small-instance ground truth, independent of the simulation engine.

Everything here is computed by generating-function iteration, lattice
convolution, or exhaustive weighted enumeration; no code path is shared with
the streaming simulator, so agreement between the two is a real check.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .lattice import BallSpec
from .model import OffspringLaw, StepLaw


def cache_dir() -> str:
    path = os.environ.get("CRITBRW_CACHE", os.path.join(".", ".critbrw_cache"))
    os.makedirs(path, exist_ok=True)
    return path


def _cached(key_obj, compute):
    key = hashlib.sha256(repr(key_obj).encode()).hexdigest()[:24]
    path = os.path.join(cache_dir(), "oracle_%s.json" % key)
    if os.path.exists(path):
        with open(path) as fh:
            return json.load(fh)["value"]
    value = compute()
    with open(path, "w") as fh:
        json.dump({"key": repr(key_obj), "value": value}, fh)
    return value


# ---------------------------------------------------------------------------
# Generating-function iteration
# ---------------------------------------------------------------------------

@dataclass
class PgfIterate:
    """Truncated series of the n-fold pgf iterate (the law of Z_n).

    ``coeffs[j]`` approximates P(Z_n = j) for j < degree; ``deficit`` is the
    probability mass pushed beyond the truncation degree.
    """

    law_kind: str
    n: int
    coeffs: np.ndarray
    deficit: float

    @property
    def extinction(self) -> float:
        return float(self.coeffs[0])


def _poly_mul_trunc(a: np.ndarray, b: np.ndarray, deg: int) -> np.ndarray:
    return np.convolve(a, b)[:deg + 1]


def pgf_iterate(law: OffspringLaw, n: int, degree: int = 256) -> PgfIterate:
    """Coefficients of f^(n), i.e. the pmf of Z_n, truncated at ``degree``."""
    fpoly = np.asarray(law.pmf, dtype=float)
    cur = np.zeros(degree + 1)
    cur[1] = 1.0  # f^(0)(s) = s
    for _ in range(n):
        # compose: cur o f via Horner in polynomial space
        res = np.zeros(degree + 1)
        res[0] = cur[degree]
        for k in range(degree - 1, -1, -1):
            res = _poly_mul_trunc(res, fpoly, degree)
            res[0] += cur[k]
        cur = res
    deficit = max(0.0, 1.0 - float(cur.sum()))
    return PgfIterate(law.kind, n, cur, deficit)


def survival_probability(law: OffspringLaw, n: int) -> float:
    """P(Z_n != 0) = 1 - f^(n)(0); closed form for the geometric(1/2) law."""
    if n < 0:
        raise ValueError("generation must be >= 0")
    if law.kind == "geometric_half":
        # f(s) = 1/(2-s) iterates to f^(n)(0) = n/(n+1)
        return 1.0 / (n + 1)
    s = 0.0
    for _ in range(n):
        s = law.pgf(s)
    return 1.0 - s


# ---------------------------------------------------------------------------
# Local-time moments by lattice convolution
# ---------------------------------------------------------------------------

def _step_axes(step: StepLaw):
    return [(i, +1, step.probs[2 * i]) for i in range(step.dim)] + \
           [(i, -1, step.probs[2 * i + 1]) for i in range(step.dim)]


def _convolve_step(p: np.ndarray, step: StepLaw) -> np.ndarray:
    out = np.zeros_like(p)
    for ax, sgn, w in _step_axes(step):
        out += w * np.roll(p, sgn, axis=ax)
    return out


def _walk_distributions(dim: int, step: StepLaw, start, horizon: int, pad: int):
    """List of S_k distributions on a box large enough that no mass wraps."""
    half = horizon + pad + max((abs(int(c)) for c in start), default=0)
    shape = (2 * half + 1,) * dim
    p = np.zeros(shape)
    idx = tuple(int(c) + half for c in start)
    p[idx] = 1.0
    dists = [p]
    for _ in range(horizon):
        p = _convolve_step(p, step)
        dists.append(p)
    return dists, half


def _region_mask(dim: int, half: int, ball: BallSpec | None, points) -> np.ndarray:
    shape = (2 * half + 1,) * dim
    mask = np.zeros(shape, dtype=bool)
    if ball is not None:
        for z in ball.lattice_points():
            mask[tuple(c + half for c in z)] = True
    else:
        for z in points:
            mask[tuple(int(c) + half for c in z)] = True
    return mask


def expected_local_time(dim: int, step: StepLaw, start, target, horizon: int) -> float:
    """E[time spent in the target by generation ``horizon``] =
    sum_{k<=n} P_x(S_k in target); exact up to float rounding (criticality
    makes the expected generation sizes equal to one)."""
    ball = target if isinstance(target, BallSpec) else None
    pts = None if ball is not None else list(target)
    pad = _pad_for(ball, pts)
    def compute():
        dists, half = _walk_distributions(dim, step, start, horizon, pad=pad)
        mask = _region_mask(dim, half, ball, pts)
        return float(sum(p[mask].sum() for p in dists))
    key = ("elt", dim, tuple(step.probs), tuple(start),
           str(ball.radius) if ball else tuple(map(tuple, pts)), horizon)
    return _cached(key, compute)


def _pad_for(ball, pts) -> int:
    if ball is not None:
        import math
        return max(3, int(math.ceil(float(ball.radius))) + 2
                   + max((abs(c) for c in ball.center), default=0))
    return max(3, 2 + max((abs(int(c)) for z in pts for c in z), default=0))


def expected_local_time_exact_1d(step: StepLaw, start: int, radius, horizon: int) -> Fraction:
    """d=1 variant in exact rational arithmetic (tiny horizons)."""
    if step.dim != 1:
        raise ValueError("exact variant is one-dimensional")
    ball = BallSpec(radius, 1)
    wl = Fraction(step.probs[1]).limit_denominator(10 ** 12)
    wr = Fraction(step.probs[0]).limit_denominator(10 ** 12)
    half = horizon + 2
    p = {start: Fraction(1)}
    total = Fraction(0)
    for k in range(horizon + 1):
        total += sum((v for z, v in p.items() if ball.contains((z,))), Fraction(0))
        if k == horizon:
            break
        nxt = {}
        for z, v in p.items():
            nxt[z + 1] = nxt.get(z + 1, Fraction(0)) + v * wr
            nxt[z - 1] = nxt.get(z - 1, Fraction(0)) + v * wl
        p = nxt
    return total


def second_moment_local_time(dim: int, law: OffspringLaw, step: StepLaw,
                             start, target, horizon: int) -> float:
    """E[ell^2] for the local time up to generation ``horizon``.

    Pair decomposition over the most recent common ancestor w:
      - coincident pairs give E[ell];
      - ancestor pairs give 2 * sum_k sum_{z in target} P_x(S_k=z) T(z, n-k);
      - branching pairs give sigma^2 * sum_k sum_z P_x(S_k=z) T(z, n-k)^2,
    where T(z, m) = sum_{j=1..m} P_z(S_j in target) and sigma^2 = E[xi(xi-1)]
    for a critical law.
    """
    ball = target if isinstance(target, BallSpec) else None
    pts = None if ball is not None else list(target)
    pad = _pad_for(ball, pts)
    def compute():
        n = horizon
        dists, half = _walk_distributions(dim, step, start, n, pad=pad)
        mask = _region_mask(dim, half, ball, pts)
        # T fields: T[m] = sum_{j=1..m} P^j 1_target, all on the same box
        t_fields = [np.zeros_like(dists[0])]
        u = mask.astype(float)
        acc = np.zeros_like(dists[0])
        for _ in range(n):
            u = _convolve_step(u, step)  # symmetric per axis: P^j 1_L (z)
            acc = acc + u
            t_fields.append(acc.copy())
        e1 = float(sum(p[mask].sum() for p in dists))
        anc = 0.0
        brn = 0.0
        for k in range(n + 1):
            t = t_fields[n - k]
            pk = dists[k]
            anc += float((pk * t)[mask].sum())
            brn += float((pk * t * t).sum())
        return e1 + 2.0 * anc + law.variance * brn
    key = ("slt", dim, tuple(np.round(law.pmf, 15)), tuple(step.probs),
           tuple(start), str(ball.radius) if ball else tuple(map(tuple, pts)), horizon)
    return _cached(key, compute)


# ---------------------------------------------------------------------------
# Exact local-time distribution on tiny one-dimensional instances
# ---------------------------------------------------------------------------

@dataclass
class SmallDistribution:
    values: np.ndarray        # pmf over local-time values 0..max_nodes
    truncated_mass: float     # probability of trees larger than max_nodes

    def prob_greater(self, t: int) -> tuple[float, float]:
        """(lower, upper) bracket for P(ell > t); truncated trees may fall
        on either side."""
        base = float(self.values[t + 1:].sum()) if t + 1 < len(self.values) else 0.0
        return base, min(1.0, base + self.truncated_mass)


def exact_distribution_small(law: OffspringLaw, radius, start: int = 0,
                             max_nodes: int = 22) -> SmallDistribution:
    """Exact pmf of the total-tree local time of B_r, d=1, by exhaustive
    weighted enumeration of (tree shape, step assignment) pairs, organized
    as a joint convolution over (tree size, local time).

    Requires offspring support within {0,1,2}, max_nodes <= 22, r <= 2.
    Trees with more than ``max_nodes`` vertices contribute to the reported
    truncated mass.
    """
    if law.support_bound > 2:
        raise ValueError("enumeration requires offspring support within {0,1,2}")
    if max_nodes > 22:
        raise ValueError("enumeration cap is 22 nodes")
    ball = BallSpec(radius, 1)
    if Fraction(ball.radius) > 2:
        raise ValueError("enumeration requires r <= 2")
    mu = list(law.pmf) + [0.0] * (3 - len(law.pmf))
    span = max_nodes + 3
    positions = range(-span, span + 1)
    m = max_nodes
    # D[p][nodes, ell] = P(subtree from a particle at p has this size/time)
    D = {p: np.zeros((m + 1, m + 1)) for p in positions}
    # d=1 centered nearest-neighbor steps are necessarily uniform
    wl, wr = 0.5, 0.5
    for total in range(1, m + 1):
        newcol = {}
        for p in positions:
            inb = 1 if ball.contains((p,)) else 0
            acc = np.zeros(m + 1)  # over ell, for this total
            if total == 1:
                acc[inb] += mu[0]
            else:
                pl = D[p - 1] if p - 1 >= -span else None
                pr = D[p + 1] if p + 1 <= span else None
                # one child: E_p at (total-1, ell-inb)
                if mu[1] != 0.0:
                    e = np.zeros(m + 1)
                    if pl is not None:
                        e += wl * pl[total - 1]
                    if pr is not None:
                        e += wr * pr[total - 1]
                    if inb:
                        acc[1:] += mu[1] * e[:-1]
                    else:
                        acc += mu[1] * e
                # two children: joint convolution over sizes and times
                if mu[2] != 0.0:
                    conv = np.zeros(m + 1)
                    for m1 in range(1, total - 1):
                        m2 = total - 1 - m1
                        if m2 < 1:
                            continue
                        e1 = np.zeros(m + 1)
                        e2 = np.zeros(m + 1)
                        if pl is not None:
                            e1 += wl * pl[m1]
                            e2 += wl * pl[m2]
                        if pr is not None:
                            e1 += wr * pr[m1]
                            e2 += wr * pr[m2]
                        conv += np.convolve(e1, e2)[:m + 1]
                    if inb:
                        acc[1:] += mu[2] * conv[:-1]
                    else:
                        acc += mu[2] * conv
            newcol[p] = acc
        for p in positions:
            D[p][total] = newcol[p]
    table = D[start]
    pmf = table.sum(axis=0)
    truncated = max(0.0, 1.0 - float(pmf.sum()))
    return SmallDistribution(values=pmf, truncated_mass=truncated)
