"""Online martingale tracking along frozen-boundary runs.

Two observables, both indexed by generation n over a run frozen on a shell:

* ``norm2`` (start inside B_r, freeze on its shell):
      M_n = sum_{alive at n} |S_u|^2 + sum_{frozen by n} |S_u|^2
            - (#alive up to n + #frozen by n),
  an exact-integer martingale with M_0 = |x|^2 - 1.

* ``green`` (start in the annulus between two shells, freeze on both):
      Mt_n = sum_{alive at n} G(S_u) + sum_{frozen by n} G(S_u),
  a martingale up to the harmonicity defect of the tabulated G, so the drift
  check carries an explicit residual-bound term.

Traces for a single run are recorded on a sparse schedule (powers of two);
batch drift tests aggregate checkpoint means and SEs in the kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .engine import DEFAULT_REPLICAS, SpecError, _seed_from, _workspace
from .lattice import GreenTable, norm2, r2_threshold
from .model import OffspringLaw, StepLaw

GEN_CAP = 1 << 14


@dataclass
class MartingaleTrace:
    kind: str                 # "norm2" | "green"
    checkpoints: np.ndarray
    values: np.ndarray
    start: tuple
    radius: object
    status: str
    final: float              # value after extinction (the a.s. limit)


def _sparse_schedule(limit: int) -> np.ndarray:
    pts = [0, 1, 2]
    p = 4
    while p < limit:
        pts.append(p)
        p *= 2
    pts.append(limit)
    return np.unique(np.asarray(pts, dtype=np.int64))


def track_norm2_martingale(dim: int, offspring: OffspringLaw, step: StepLaw,
                           start, radius, rng, node_budget: int = 10 ** 8,
                           max_depth: int = 1 << 20) -> MartingaleTrace:
    """Trace of the squared-norm martingale along one run frozen on the shell
    of B_radius; exact integer arithmetic throughout."""
    p, q = r2_threshold(radius)
    start = tuple(int(c) for c in start)
    if not q * norm2(start) < p:
        raise SpecError("norm2 martingale requires the start inside the ball")
    seed = _seed_from(rng)
    st = K.make_streams(seed, 1)[0].copy()
    pos, n2s, pend, _ = _workspace(dim, max_depth)
    a_cnt = np.zeros(GEN_CAP, dtype=np.int64)
    a_q = np.zeros(GEN_CAP, dtype=np.int64)
    f_cnt = np.zeros(GEN_CAP, dtype=np.int64)
    f_q = np.zeros(GEN_CAP, dtype=np.int64)
    row = np.zeros(K.N_OUT, dtype=np.int64)
    K.run_gen_norm2(st, dim, offspring.cdf_table(), step.cdf_table(),
                    np.asarray(start, dtype=np.int64), p, q, -1, node_budget,
                    pos, n2s, pend, a_cnt, a_q, f_cnt, f_q, row)
    maxg = int(row[5])
    cps = _sparse_schedule(max(maxg, 1))
    cumA = np.cumsum(a_cnt[:maxg + 2])
    cumFq = np.cumsum(f_q[:maxg + 2])
    cumFc = np.cumsum(f_cnt[:maxg + 2])
    vals = np.empty(len(cps), dtype=float)
    for i, n in enumerate(cps):
        top = min(n, maxg)
        aq = a_q[n] if n <= maxg else 0
        vals[i] = float(aq + cumFq[top] - cumA[top] - cumFc[top])
    final = float(cumFq[maxg] - cumA[maxg] - cumFc[maxg])
    from .engine import STATUS_NAMES
    return MartingaleTrace("norm2", cps, vals, start, radius,
                           STATUS_NAMES[int(row[6])], final)


@dataclass
class DriftCheck:
    """Batch nullity check |E[M_n] - M_0| at the requested generations."""

    kind: str
    checkpoints: np.ndarray
    means: np.ndarray
    ses: np.ndarray
    m0: float
    n_runs: int
    bad_runs: int
    residual_term: float = 0.0     # harmonicity-defect bound (green kind)

    def studentized(self) -> np.ndarray:
        return np.abs(self.means - self.m0) / np.maximum(self.ses, 1e-300)

    def holds(self, z: float = 3.0) -> bool:
        return bool(np.all(np.abs(self.means - self.m0)
                           <= z * self.ses + self.residual_term))


def norm2_drift_check(dim: int, offspring: OffspringLaw, step: StepLaw,
                      start, radius, checkpoints, n_runs: int, master_seed: int,
                      replicas: int = DEFAULT_REPLICAS,
                      node_budget: int = 10 ** 7,
                      max_depth: int = 1 << 16) -> DriftCheck:
    p, q = r2_threshold(radius)
    start = tuple(int(c) for c in start)
    if not q * norm2(start) < p:
        raise SpecError("norm2 martingale requires the start inside the ball")
    cps = np.asarray(sorted(set(int(c) for c in checkpoints)), dtype=np.int64)
    per = -(-int(n_runs) // replicas)
    seeds = K.make_streams(master_seed, replicas)
    sums = np.zeros((replicas, len(cps)))
    sumsq = np.zeros((replicas, len(cps)))
    counts = np.zeros((replicas, len(cps)), dtype=np.int64)
    bad = np.zeros(replicas, dtype=np.int64)
    K.batch_mart_norm2(seeds, per, dim, offspring.cdf_table(), step.cdf_table(),
                       np.asarray(start, dtype=np.int64), p, q,
                       node_budget, max_depth, GEN_CAP, cps, sums, sumsq, counts, bad)
    n = counts.sum(axis=0)
    mean = sums.sum(axis=0) / n
    var = sumsq.sum(axis=0) / n - mean ** 2
    se = np.sqrt(np.maximum(var, 0.0) / n)
    m0 = float(norm2(start) - 1)
    return DriftCheck("norm2", cps, mean, se, m0, int(n[0]), int(bad.sum()))


def green_drift_check(dim: int, offspring: OffspringLaw, step: StepLaw,
                      start, inner_radius, outer_radius, green: GreenTable,
                      checkpoints, n_runs: int, master_seed: int,
                      replicas: int = DEFAULT_REPLICAS,
                      node_budget: int = 10 ** 7,
                      max_depth: int = 1 << 16) -> DriftCheck:
    """Drift of the Green-value process on the annulus between the two
    shells.  The reported residual term bounds the systematic drift from the
    tabulated G's harmonicity defect: residual_bound x mean alive updates."""
    from .lattice import BallSpec
    fi_p, fi_q = r2_threshold(inner_radius)
    fo_p, fo_q = r2_threshold(outer_radius)
    start = tuple(int(c) for c in start)
    inner = BallSpec(inner_radius, dim)
    outer = BallSpec(outer_radius, dim)
    if inner.contains(start) or inner.boundary_contains(start) \
            or not outer.contains(start) or outer.boundary_contains(start):
        raise SpecError("start must lie strictly inside the open annulus")
    cps = np.asarray(sorted(set(int(c) for c in checkpoints)), dtype=np.int64)
    per = -(-int(n_runs) // replicas)
    seeds = K.make_streams(master_seed, replicas)
    keys, order = green.wedge.lookup_table()
    vals = (0.5 * (green.lower + green.upper))[order]
    sums = np.zeros((replicas, len(cps)))
    sumsq = np.zeros((replicas, len(cps)))
    counts = np.zeros((replicas, len(cps)), dtype=np.int64)
    visit_sums = np.zeros(replicas)
    bad = np.zeros(replicas, dtype=np.int64)
    K.batch_mart_green(seeds, per, dim, offspring.cdf_table(), step.cdf_table(),
                       np.asarray(start, dtype=np.int64), fi_p, fi_q, fo_p, fo_q,
                       node_budget, max_depth, GEN_CAP, keys, vals, cps,
                       sums, sumsq, counts, visit_sums, bad)
    n = counts.sum(axis=0)
    mean = sums.sum(axis=0) / n
    var = sumsq.sum(axis=0) / n - mean ** 2
    se = np.sqrt(np.maximum(var, 0.0) / n)
    mean_visits = float(visit_sums.sum()) / max(int(n[0]), 1)
    m0 = green.value(start)
    return DriftCheck("green", cps, mean, se, m0, int(n[0]), int(bad.sum()),
                      residual_term=green.residual_bound * mean_visits)
