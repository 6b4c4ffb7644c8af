"""Deterministic fixed-point solvers for the BRW potential-theory objects.

For a target set L (Lambda) the module computes, on a finite box with
*bracketing* boundary conditions:

* ``avoid``  q(x): probability that a BRW from x never visits L,
* ``kill``   k(x): probability that an adjoint BRW from x hits L,
* ``single`` r(x): avoidance conditional on the root having one child,
* ``reach``  h(x): probability that the killed walk of the conditioned
               entry path reaches L (its harmonic normalizer).

The avoidance recursion q = 1{off L} f(sum_e theta(e) q(.+e)) is iterated
monotonically from q == 1 with out-of-box values pinned to 1 (upper bracket)
or 0 (lower).  The two limits are exact avoidance probabilities of two
honest processes: the free BRW seen through a box that *forgives* escapees
(upper) and the BRW whose lineages die at the box face (lower).  The
box-killed process is what the spine module simulates, so all its identities
(biased-offspring normalization, kernel row sums, path weights) hold exactly
for the upper-q / lower-k system bundled in ``SpineSystem``.

Uniform step laws with symmetric targets run on the fundamental wedge;
otherwise a dense box is used (practical for d <= 2).
"""

from __future__ import annotations

import hashlib
import itertools
import os
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .lattice import BallSpec, GeometryError, WedgeBox, canonical
from .model import OffspringLaw, StepLaw, adjoint

DEFAULT_TOL = 1e-10
DEFAULT_MAX_SWEEPS = 10 ** 5


class SolverError(RuntimeError):
    pass


def _law_kind_code(law: OffspringLaw) -> int:
    if law.kind == "geometric_half":
        return K.LAW_GEOMETRIC
    if law.kind == "poisson1":
        return K.LAW_POISSON1
    return K.LAW_POLY


# ---------------------------------------------------------------------------
# Box graphs
# ---------------------------------------------------------------------------

@dataclass
class BoxGraph:
    """Finite neighbor-indexed domain; wedge-reduced or dense."""

    dim: int
    half_width: int
    mode: str                   # "wedge" | "dense"
    nbr: np.ndarray             # (n, 2d), out-of-box -> sentinel n
    step_w: np.ndarray          # (2d,) direction weights
    points: list = None         # wedge: canonical tuples; dense: offsets
    wedge: WedgeBox = None

    @property
    def npoints(self) -> int:
        return self.nbr.shape[0]

    def idx(self, z) -> int:
        if self.mode == "wedge":
            return self.wedge.idx(z)
        L = self.half_width
        if any(abs(int(c)) > L for c in z):
            raise GeometryError("point %r outside box L=%d" % (z, L))
        i = 0
        for c in z:
            i = i * (2 * L + 1) + (int(c) + L)
        return i

    def contains(self, z) -> bool:
        return all(abs(int(c)) <= self.half_width for c in z)

    def point(self, i):
        if self.mode == "wedge":
            return self.wedge.points[i]
        L = self.half_width
        out = []
        for _ in range(self.dim):
            out.append(i % (2 * L + 1) - L)
            i //= (2 * L + 1)
        return tuple(reversed(out))


def wedge_graph(dim: int, half_width: int) -> BoxGraph:
    w = WedgeBox(dim, half_width)
    step_w = np.full(2 * dim, 1.0 / (2 * dim))
    return BoxGraph(dim, half_width, "wedge", w.nbr, step_w, w.points, w)


def dense_graph(dim: int, half_width: int, step: StepLaw) -> BoxGraph:
    L = half_width
    side = 2 * L + 1
    n = side ** dim
    if n > 2_000_000:
        raise SolverError("dense box too large (%d points); use a uniform step "
                          "law with a symmetric target for the wedge path" % n)
    nbr = np.empty((n, 2 * dim), dtype=np.int64)
    strides = [side ** (dim - 1 - ax) for ax in range(dim)]
    coords = np.array(list(itertools.product(range(-L, L + 1), repeat=dim)), dtype=np.int64)
    for ax in range(dim):
        for s_i, sgn in enumerate((1, -1)):
            col = 2 * ax + s_i
            moved = coords[:, ax] + sgn
            ok = np.abs(moved) <= L
            nbr[:, col] = np.where(ok, np.arange(n) + sgn * strides[ax], n)
    step_w = np.asarray(step.probs, dtype=float)
    return BoxGraph(dim, half_width, "dense", nbr, step_w,
                    [tuple(c) for c in coords], None)


def make_graph(dim: int, half_width: int, step: StepLaw, symmetric_target: bool) -> BoxGraph:
    if step.is_uniform and symmetric_target:
        return wedge_graph(dim, half_width)
    return dense_graph(dim, half_width, step)


# ---------------------------------------------------------------------------
# Target sets
# ---------------------------------------------------------------------------

def target_mask(graph: BoxGraph, target) -> np.ndarray:
    """Boolean membership of the target over graph points.

    ``target`` is a ("shell", radius), ("ball", radius), an iterable of
    points, or None (empty).  Wedge graphs require sign/permutation-symmetric
    targets; shells and origin-centered balls always qualify.
    """
    mask = np.zeros(graph.npoints, dtype=bool)
    if target is None:
        return mask
    if isinstance(target, tuple) and len(target) == 2 and target[0] in ("shell", "ball"):
        kind, r = target
        ball = BallSpec(r, graph.dim)
        test = ball.boundary_contains if kind == "shell" else ball.contains
        for i in range(graph.npoints):
            if test(graph.point(i)):
                mask[i] = True
        return mask
    pts = {tuple(int(c) for c in z) for z in target}
    if graph.mode == "wedge":
        canon = {canonical(z) for z in pts}
        # symmetry check: the orbit of every canonical point must be included
        for c in canon:
            for z in _orbit(c):
                if z not in pts:
                    raise SolverError("wedge solver needs a symmetric target; "
                                      "%r breaks symmetry" % (z,))
        for i, c in enumerate(graph.points):
            if c in canon:
                mask[i] = True
        return mask
    for i, z in enumerate(graph.points):
        if z in pts:
            mask[i] = True
    return mask


def _orbit(c):
    seen = set()
    for perm in itertools.permutations(c):
        for signs in itertools.product(*[(v, -v) if v else (0,) for v in perm]):
            seen.add(signs)
    return seen


# ---------------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------------

@dataclass
class PotentialField:
    """Bracketed scalar field over a box graph.

    ``lower``/``upper`` are fixed points of the truncated recursions with
    out-of-box values 0 / 1; both carry their own boundary value in the
    sentinel slot.  ``residual`` is the final sup-norm iteration step.
    """

    name: str
    graph: BoxGraph
    lam: np.ndarray
    lower: np.ndarray            # length n+1, sentinel = bc
    upper: np.ndarray
    tol: float
    iterations: int
    residual: float

    def value(self, z) -> float:
        i = self.graph.idx(z)
        return 0.5 * (self.lower[i] + self.upper[i])

    def bracket(self, z) -> tuple[float, float]:
        i = self.graph.idx(z)
        return float(self.lower[i]), float(self.upper[i])

    def width(self, z) -> float:
        lo, hi = self.bracket(z)
        return hi - lo

    def save(self, path, meta=""):
        g = self.graph
        with open(path, "w") as fh:
            fh.write("# critbrw potential-field v1 name=%s\n" % self.name)
            fh.write("# d=%d L=%d mode=%s tol=%g iterations=%d %s\n"
                     % (g.dim, g.half_width, g.mode, self.tol, self.iterations, meta))
            fh.write("# columns: coords[%d] lower upper\n" % g.dim)
            for i in range(g.npoints):
                fh.write(" ".join(str(c) for c in g.point(i))
                         + " %.17g %.17g\n" % (self.lower[i], self.upper[i]))


def solve_avoidance(graph: BoxGraph, target, offspring: OffspringLaw,
                    tol: float = DEFAULT_TOL,
                    max_sweeps: int = DEFAULT_MAX_SWEEPS) -> PotentialField:
    """Bracketed avoidance probability q of the target set.

    Monotone Jacobi iteration from q == 1{off target}; non-convergence inside
    ``max_sweeps`` raises with the residual attached.
    """
    lam = target_mask(graph, target)
    pmf = np.asarray(offspring.pmf, dtype=float)
    code = _law_kind_code(offspring)
    sols = {}
    iters_total = 0
    resid = 0.0
    for bc in (0.0, 1.0):
        q = np.ones(graph.npoints + 1)
        q[lam.nonzero()[0]] = 0.0
        q[-1] = bc
        qn = np.empty(graph.npoints)
        it, delta = K.sweep_avoidance(q, qn, graph.nbr, graph.step_w,
                                      lam, pmf, code, max_sweeps, tol)
        if delta >= tol:
            raise SolverError("avoidance solve did not converge in %d sweeps "
                              "(bc=%g, residual %.3e)" % (max_sweeps, bc, delta))
        sols[bc] = q
        iters_total += it
        resid = max(resid, delta)
    return PotentialField("avoid", graph, lam, sols[0.0], sols[1.0],
                          tol, iters_total, resid)


def _neighbor_avg(graph: BoxGraph, values: np.ndarray) -> np.ndarray:
    out = np.empty(graph.npoints)
    K.neighbor_average(values, graph.nbr, graph.step_w, out)
    return out


def derive_killing(avoid: PotentialField, offspring: OffspringLaw) -> PotentialField:
    """k = 1 - 1{off L} f~(sum_e theta(e) q(.+e)), f~ the adjoint pgf.

    A larger q gives a smaller k, so the k brackets swap: lower-k comes from
    upper-q.  k == 1 on the target.
    """
    adj = adjoint(offspring)
    g = avoid.graph
    out = {}
    for src, dest in (("upper", "lower"), ("lower", "upper")):
        q = getattr(avoid, src)
        s = _neighbor_avg(g, q)
        vals = 1.0 - np.polynomial.polynomial.polyval(s, adj)
        vals[avoid.lam] = 1.0
        arr = np.empty(g.npoints + 1)
        arr[:-1] = vals
        arr[-1] = 0.0 if dest == "lower" else 1.0
        out[dest] = arr
    return PotentialField("kill", g, avoid.lam, out["lower"], out["upper"],
                          avoid.tol, avoid.iterations, avoid.residual)


def derive_single_child(avoid: PotentialField) -> PotentialField:
    """r(z) = 1{z off L} sum_e theta(e) q(z+e)."""
    g = avoid.graph
    out = {}
    for which in ("lower", "upper"):
        q = getattr(avoid, which)
        vals = _neighbor_avg(g, q)
        vals[avoid.lam] = 0.0
        arr = np.empty(g.npoints + 1)
        arr[:-1] = vals
        arr[-1] = 0.0 if which == "lower" else 1.0
        out[which] = arr
    return PotentialField("single_child", g, avoid.lam, out["lower"], out["upper"],
                          avoid.tol, avoid.iterations, avoid.residual)


def biased_offspring_law(offspring: OffspringLaw, kill_z: float, single_z: float,
                         tol: float = 1e-9) -> np.ndarray:
    """Root offspring pmf of the conditioned (biased) BRW at a point with
    killing value k and single-child avoidance r:

        pmf[m] = sum_{l >= 0} mu(l+m+1) r^l / (1 - k).

    The sum over m equals one exactly when (q, k, r) are mutually consistent;
    a defect beyond ``tol`` raises.
    """
    if kill_z >= 1.0 - 1e-12:
        raise SolverError("killing probability too close to 1 (k=%r)" % kill_z)
    mu = np.asarray(offspring.pmf, dtype=float)
    kmax = mu.size - 1
    out = np.zeros(kmax)
    rpow = single_z ** np.arange(kmax + 1)
    for m in range(kmax):
        ell = np.arange(0, kmax - m)
        out[m] = float(mu[ell + m + 1] @ rpow[ell]) / (1.0 - kill_z)
    defect = abs(out.sum() - 1.0)
    if defect > tol:
        raise SolverError("biased offspring law normalization defect %.3e "
                          "(inconsistent k/r inputs)" % defect)
    return out / out.sum()


def biased_normalization_defect(offspring: OffspringLaw, kill_z: float,
                                single_z: float) -> float:
    """|sum_m pmf[m] - 1| of the un-renormalized biased law (consistency
    measure of the (q, k, r) triple)."""
    mu = np.asarray(offspring.pmf, dtype=float)
    kmax = mu.size - 1
    rpow = single_z ** np.arange(kmax + 1)
    total = 0.0
    for m in range(kmax):
        ell = np.arange(0, kmax - m)
        total += float(mu[ell + m + 1] @ rpow[ell]) / (1.0 - kill_z)
    return abs(total - 1.0)


def solve_spine_h(graph: BoxGraph, lam: np.ndarray, kill_values: np.ndarray,
                  tol: float = 1e-13, max_sweeps: int = 10 ** 6,
                  bc: float = 0.0) -> np.ndarray:
    """h = 1 on the target; h = (1-k) sum_e theta(e) h(.+e) off it.

    Returns the length-(n+1) array (sentinel = bc).  Converged far below the
    kernel row-sum tolerance so the h-transform rows renormalize exactly.
    """
    h = np.zeros(graph.npoints + 1)
    h[lam.nonzero()[0]] = 1.0
    h[-1] = bc
    hn = np.empty(graph.npoints)
    it, delta = K.sweep_linear_kill(h, hn, graph.nbr, graph.step_w, lam,
                                    kill_values, max_sweeps, tol)
    if delta >= tol:
        raise SolverError("spine reach solve did not converge (residual %.3e)" % delta)
    return h


def path_weight(path, kill_at, step: StepLaw) -> float:
    """prod_i theta(gamma(i+1)-gamma(i)) * (1 - k(gamma(i))); empty product 1.

    ``kill_at`` maps a lattice point to its killing value; the path must step
    through unit vectors and end at its only target point.
    """
    w = 1.0
    for i in range(len(path) - 1):
        a = np.asarray(path[i])
        b = np.asarray(path[i + 1])
        th = step.prob_of(b - a)
        if th == 0.0:
            raise SolverError("path steps must be unit lattice vectors")
        w *= th * (1.0 - kill_at(tuple(a)))
    return w


# ---------------------------------------------------------------------------
# The box-killed spine system
# ---------------------------------------------------------------------------

@dataclass
class SpineSystem:
    """Exact Zhu decomposition data for the box-killed BRW.

    ``avoid`` is the upper-bracket q (escaping the box counts as avoiding,
    i.e. the avoidance probability when lineages die at the face), ``kill``
    and ``single`` derive from it, and ``reach`` solves the h equation with
    h = 0 outside.  All spine identities are exact for the process simulated
    with kill_box = half_width.
    """

    graph: BoxGraph
    lam: np.ndarray
    offspring: OffspringLaw
    step: StepLaw
    avoid: np.ndarray
    kill: np.ndarray
    single: np.ndarray
    reach: np.ndarray
    avoid_field: PotentialField
    kill_field: PotentialField

    def kill_at(self, z) -> float:
        return float(self.kill[self.graph.idx(z)])

    def reach_at(self, z) -> float:
        return float(self.reach[self.graph.idx(z)])

    def single_at(self, z) -> float:
        return float(self.single[self.graph.idx(z)])

    def in_target(self, z) -> bool:
        return bool(self.lam[self.graph.idx(z)])

    def biased_pmf(self, z) -> np.ndarray:
        i = self.graph.idx(z)
        return biased_offspring_law(self.offspring, float(self.kill[i]),
                                    float(self.single[i]))

    def kernel_row(self, z, step_vectors=None):
        """h-transform transition probabilities from z to its 2d neighbors.

        Out-of-box moves carry probability 0 (h vanishes there), so row sums
        are 1 up to solver tolerance.
        """
        if step_vectors is None:
            step_vectors = self.step.vectors()
        g = self.graph
        kz = self.kill_at(z)
        hz = self.reach_at(z)
        if hz <= 0.0:
            raise SolverError("reach function vanishes at %r" % (z,))
        probs = np.zeros(len(step_vectors))
        for j, e in enumerate(step_vectors):
            w = tuple(int(a) + int(b) for a, b in zip(z, e))
            hv = self.reach[g.idx(w)] if g.contains(w) else 0.0
            probs[j] = (1.0 - kz) * self.step.probs[j] * hv / hz
        return probs

    def path_weight(self, path) -> float:
        return path_weight(path, self.kill_at, self.step)


def build_spine_system(dim: int, target, half_width: int,
                       offspring: OffspringLaw, step: StepLaw,
                       tol: float = DEFAULT_TOL,
                       max_sweeps: int = DEFAULT_MAX_SWEEPS,
                       cache: bool = True) -> SpineSystem:
    symmetric = isinstance(target, tuple) and target[0] in ("shell", "ball")
    graph = make_graph(dim, half_width, step, symmetric)
    lam = target_mask(graph, target)
    cache_path = None
    if cache:
        key = hashlib.sha256(repr(("spine", dim, target, half_width, offspring.kind,
                                   tuple(np.round(offspring.pmf, 15)),
                                   tuple(step.probs), tol)).encode()).hexdigest()[:24]
        from .oracle import cache_dir
        cache_path = os.path.join(cache_dir(), "spine_%s.npz" % key)
        if os.path.exists(cache_path):
            data = np.load(cache_path)
            avoid_f = PotentialField("avoid", graph, lam, data["q_lo"], data["q_hi"],
                                     tol, int(data["iters"]), float(data["resid"]))
            kill_f = derive_killing(avoid_f, offspring)
            single_f = derive_single_child(avoid_f)
            return SpineSystem(graph, lam, offspring, step,
                               data["q_hi"], data["k_lo"], data["r_hi"], data["h"],
                               avoid_f, kill_f)
    avoid_f = solve_avoidance(graph, target, offspring, tol, max_sweeps)
    kill_f = derive_killing(avoid_f, offspring)
    single_f = derive_single_child(avoid_f)
    # box-killed system: upper q, hence lower k and upper r
    kill_vals = kill_f.lower[:-1].copy()
    h = solve_spine_h(graph, lam, kill_vals, tol=min(tol, 1e-12) * 1e-1,
                      max_sweeps=max(max_sweeps, 10 ** 6), bc=0.0)
    sys = SpineSystem(graph, lam, offspring, step,
                      avoid_f.upper, np.append(kill_vals, 1.0),
                      single_f.upper, h, avoid_f, kill_f)
    if cache_path:
        np.savez_compressed(cache_path, q_lo=avoid_f.lower, q_hi=avoid_f.upper,
                            k_lo=sys.kill, r_hi=sys.single, h=h,
                            iters=avoid_f.iterations, resid=avoid_f.residual)
    return sys
