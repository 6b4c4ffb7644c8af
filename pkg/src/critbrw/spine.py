"""Conditioned entry-path (spine) sampling and the biased-tree construction.

The conditioned first-entry path of a BRW hitting a target set is an
h-transformed killed walk; conditionally on the path, the particles the BRW
deposits on the target are reproduced by hanging size-biased root trees on
the path's points and an ordinary BRW at its endpoint.  Both constructions
run against the box-killed process of ``potential.SpineSystem``, for which
the identities are exact, so a direct simulation conditioned on hitting is
distribution-equal, not merely asymptotically close.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import SimSpec, run
from .lattice import BallSpec
from .potential import SolverError, SpineSystem


class SpineError(RuntimeError):
    pass


@dataclass
class SpinePath:
    """Entry path: off-target points followed by one target point."""

    points: list
    hit: bool

    def __len__(self):
        return len(self.points)

    @property
    def steps(self) -> int:
        return len(self.points) - 1


@dataclass
class GammaBiasedTree:
    """Biased BRW built on a fixed entry path.

    One biased-root tree per path index i < end (offspring count from the
    point's biased law, each child stepping once and then running an ordinary
    BRW), plus an ordinary BRW at the endpoint.  ``frozen_total`` counts the
    first entries to the target over the whole union; the endpoint itself
    contributes exactly one.
    """

    spine: SpinePath
    side_offspring: list
    frozen_total: int
    target_time: int


def sample_spine(system: SpineSystem, x, rng, max_len: int = 10 ** 6) -> SpinePath:
    """Draw the entry path from x under the h-transform kernel of ``system``.

    A start inside the target returns the length-0 path.  The kernel rows
    renormalize to one up to solver tolerance; exceeding ``max_len`` raises
    (the conditioned walk has finite expected length).
    """
    x = tuple(int(c) for c in x)
    if system.reach_at(x) <= 0.0:
        raise SpineError("target unreachable from %r (reach function is 0)" % (x,))
    pts = [x]
    if system.in_target(x):
        return SpinePath(pts, True)
    vecs = system.step.vectors()
    z = x
    for _ in range(max_len):
        row = system.kernel_row(z, vecs)
        tot = row.sum()
        if not 0.999 <= tot <= 1.001:
            raise SpineError("kernel row sum %.6f at %r; solver fields inconsistent"
                             % (tot, z))
        u = rng.random() * tot
        acc = 0.0
        j = 0
        for j in range(len(row)):
            acc += row[j]
            if u < acc:
                break
        z = tuple(int(a) + int(b) for a, b in zip(z, vecs[j]))
        pts.append(z)
        if system.in_target(z):
            return SpinePath(pts, True)
    raise SpineError("spine exceeded max_len=%d (reach=%g at start)"
                     % (max_len, system.reach_at(x)))


def _freeze_kwargs(system: SpineSystem, target_descr):
    if isinstance(target_descr, tuple) and target_descr[0] == "shell":
        return {"freeze_shell": target_descr[1]}
    if isinstance(target_descr, tuple) and target_descr[0] == "ball":
        pts = BallSpec(target_descr[1], system.graph.dim).lattice_points()
        return {"freeze_points": tuple(pts)}
    return {"freeze_points": tuple(tuple(int(c) for c in z) for z in target_descr)}


def build_gamma_biased(system: SpineSystem, target_descr, path: SpinePath, rng,
                       node_budget: int = 10 ** 7) -> GammaBiasedTree:
    """Hang biased-root BRWs on the path and an ordinary BRW at its endpoint;
    count the first entries to the target of the whole union.

    Every sub-BRW is box-killed at the system's box face, matching the
    process the system's fields describe exactly.
    """
    d = system.graph.dim
    fz = _freeze_kwargs(system, target_descr)
    base = dict(dim=d, offspring=system.offspring, step=system.step,
                kill_box=system.graph.half_width, node_budget=node_budget, **fz)
    vecs = system.step.vectors()
    cdf = system.step.cdf_table()
    frozen_total = 0
    target_time = 0
    side_counts = []
    for i in range(len(path.points) - 1):
        z = path.points[i]
        pmf = system.biased_pmf(z)
        m = int(np.searchsorted(np.cumsum(pmf), rng.random(), side="right"))
        side_counts.append(m)
        for _ in range(m):
            e = vecs[int(np.searchsorted(cdf, rng.random(), side="right"))]
            child = tuple(int(a) + int(b) for a, b in zip(z, e))
            oc = run(SimSpec(start=child, **base), rng)
            if oc.status != "completed":
                raise SpineError("side tree did not complete (%s)" % oc.status)
            frozen_total += oc.frozen_count
            target_time += oc.local_time
    # ordinary BRW at the endpoint: its root is the first entry itself
    end = path.points[-1]
    oc = run(SimSpec(start=end, **base), rng)
    if oc.status != "completed":
        raise SpineError("terminal tree did not complete (%s)" % oc.status)
    frozen_total += oc.frozen_count   # == 1: root frozen on the spot
    target_time += oc.local_time
    return GammaBiasedTree(spine=path, side_offspring=side_counts,
                           frozen_total=frozen_total, target_time=target_time)


@dataclass
class DirectConditioned:
    path: SpinePath
    frozen_count: int
    attempts: int


def conditioned_entry_path_direct(system: SpineSystem, target_descr, x, rng,
                                  max_attempts: int = 10 ** 6,
                                  node_budget: int = 10 ** 7) -> DirectConditioned:
    """Rejection oracle: run box-killed BRWs from x until one hits the target;
    return its depth-first-first entry path and frozen count.

    Children are explored in sampled order, so the depth-first-first frozen
    vertex is the lexicographically smallest entry vertex.
    """
    d = system.graph.dim
    fz = _freeze_kwargs(system, target_descr)
    spec = SimSpec(dim=d, offspring=system.offspring, step=system.step,
                   start=tuple(int(c) for c in x),
                   kill_box=system.graph.half_width,
                   node_budget=node_budget, **fz)
    for attempt in range(1, max_attempts + 1):
        oc = run(spec, rng, record_frozen=True, record_path=True)
        if oc.status != "completed":
            continue
        if oc.frozen_count > 0:
            return DirectConditioned(path=SpinePath(oc.entry_path, True),
                                     frozen_count=oc.frozen_count,
                                     attempts=attempt)
    raise SpineError("no hit in %d attempts (hit probability about %.2e)"
                     % (max_attempts, 1.0 / max_attempts))


def spine_first_step_distribution(system: SpineSystem, x) -> np.ndarray:
    """Exact first-step law of the conditioned path at x (for sampler checks)."""
    return system.kernel_row(tuple(int(c) for c in x))


def direct_path_probability(system: SpineSystem, path_points) -> float:
    """p(path) for the box-killed process; equals P_x(entry path = gamma and
    the target is hit)."""
    return system.path_weight([tuple(int(c) for c in p) for p in path_points])
