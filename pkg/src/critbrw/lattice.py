"""Lattice geometry on Z^d and simple-random-walk reference quantities.

Euclidean balls use exact integer arithmetic: a radius is stored as a
rational p/q and membership ``|z| < r`` is evaluated as ``q*|z|^2 < p`` after
clearing denominators, so no point is ever misclassified by floating-point
rounding.  The Green's function and hitting probabilities of the uniform
nearest-neighbor walk are computed on finite boxes with *bracketing* boundary
conditions; brackets are reported, never collapsed.

For the uniform step law every quantity here is invariant under coordinate
permutations and sign flips, so solvers work on the fundamental wedge
``0 <= z_1 <= ... <= z_d`` (a ~2^d d! reduction) and look values up through
canonicalization.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.sparse
import scipy.sparse.linalg


class GeometryError(ValueError):
    pass


def norm2(z) -> int:
    """Exact integer squared Euclidean norm."""
    return sum(int(c) * int(c) for c in z)


def radius_fraction(r) -> Fraction:
    """Radii given as int, Fraction, or decimal string are exact; floats are
    taken at their binary value."""
    if isinstance(r, str):
        return Fraction(r)
    return Fraction(r)


def r2_threshold(r) -> tuple[int, int]:
    """(p, q) with |z| < r  <=>  q * |z|^2 < p for integer |z|^2."""
    rr = radius_fraction(r) ** 2
    return rr.numerator, rr.denominator


@dataclass(frozen=True)
class BallSpec:
    """Open Euclidean ball B_r = {z : |z - center| < r}."""

    radius: Fraction
    dim: int
    center: tuple[int, ...] = None

    def __post_init__(self):
        object.__setattr__(self, "radius", radius_fraction(self.radius))
        if self.radius < 1:
            raise GeometryError("ball radius must be >= 1")
        c = self.center if self.center is not None else (0,) * self.dim
        if len(c) != self.dim:
            raise GeometryError("center dimension mismatch")
        object.__setattr__(self, "center", tuple(int(v) for v in c))

    @property
    def threshold(self) -> tuple[int, int]:
        return r2_threshold(self.radius)

    def contains(self, z) -> bool:
        if len(z) != self.dim:
            raise GeometryError("point dimension %d != ball dimension %d" % (len(z), self.dim))
        p, q = self.threshold
        d2 = norm2([int(a) - b for a, b in zip(z, self.center)])
        return q * d2 < p

    def boundary_contains(self, z) -> bool:
        """Membership in the outer boundary shell (not inside, has a neighbor inside)."""
        if self.contains(z):
            return False
        p, q = self.threshold
        w = [int(a) - b for a, b in zip(z, self.center)]
        d2 = norm2(w)
        return any(q * (d2 - 2 * abs(c) + 1) < p for c in w)

    def lattice_points(self) -> list[tuple[int, ...]]:
        lim = int(math.isqrt(math.ceil(float(self.radius) ** 2))) + 1
        pts = []
        for off in itertools.product(range(-lim, lim + 1), repeat=self.dim):
            z = tuple(o + c for o, c in zip(off, self.center))
            if self.contains(z):
                pts.append(z)
        return pts

    def boundary_points(self) -> list[tuple[int, ...]]:
        lim = int(math.isqrt(math.ceil(float(self.radius) ** 2))) + 2
        pts = []
        for off in itertools.product(range(-lim, lim + 1), repeat=self.dim):
            z = tuple(o + c for o, c in zip(off, self.center))
            if self.boundary_contains(z):
                pts.append(z)
        return pts


def in_ball(z, ball: BallSpec) -> bool:
    return ball.contains(z)


def outer_boundary(region, probe_half_width: int, dim: int) -> set:
    """{z not in region with a unit neighbor in region}, scanned over the probe box.

    ``region`` is a predicate over integer tuples.  Raises if a boundary point
    touches the probe box face, since the boundary may then be incomplete.
    """
    L = int(probe_half_width)
    out = set()
    for z in itertools.product(range(-L, L + 1), repeat=dim):
        if region(z):
            continue
        for i in range(dim):
            for s in (1, -1):
                w = z[:i] + (z[i] + s,) + z[i + 1:]
                if region(w):
                    out.add(z)
                    break
            else:
                continue
            break
    for z in out:
        if any(abs(c) >= L for c in z):
            raise GeometryError("outer boundary touches the probe box face; enlarge the box")
    return out


# ---------------------------------------------------------------------------
# Fundamental wedge indexing (uniform step law only)
# ---------------------------------------------------------------------------

def canonical(z) -> tuple[int, ...]:
    """Orbit representative under signed permutations: sorted absolute coords."""
    return tuple(sorted(abs(int(c)) for c in z))


def orbit_size(c) -> int:
    """Number of lattice points mapping to the canonical tuple c."""
    n = math.factorial(len(c))
    for _, g in itertools.groupby(c):
        n //= math.factorial(len(list(g)))
    nz = sum(1 for v in c if v != 0)
    return n * (2 ** nz)


@dataclass
class WedgeBox:
    """Index structure for the wedge of the box [-L, L]^d.

    ``index`` maps canonical tuples to 0..n-1; ``nbr`` is an (n, 2d) int array
    of neighbor indices where out-of-box neighbors point at the sentinel slot
    n (whose value is the boundary condition during sweeps).
    """

    dim: int
    half_width: int
    points: list = field(default_factory=list)
    index: dict = field(default_factory=dict)
    nbr: np.ndarray = None

    def __post_init__(self):
        d, L = self.dim, self.half_width
        self.points = list(itertools.combinations_with_replacement(range(L + 1), d))
        self.index = {c: i for i, c in enumerate(self.points)}
        n = len(self.points)
        nbr = np.empty((n, 2 * d), dtype=np.int64)
        for i, c in enumerate(self.points):
            z = list(c)
            col = 0
            for ax in range(d):
                for s in (1, -1):
                    z[ax] += s
                    if abs(z[ax]) > L:
                        nbr[i, col] = n  # sentinel = boundary condition
                    else:
                        nbr[i, col] = self.index[canonical(z)]
                    z[ax] -= s
                    col += 1
        self.nbr = nbr

    def __len__(self):
        return len(self.points)

    def idx(self, z) -> int:
        c = canonical(z)
        try:
            return self.index[c]
        except KeyError:
            raise GeometryError("point %r outside wedge box L=%d" % (z, self.half_width))

    def norms2(self) -> np.ndarray:
        return np.array([sum(v * v for v in c) for c in self.points], dtype=np.int64)

    def weights(self) -> np.ndarray:
        return np.array([orbit_size(c) for c in self.points], dtype=np.int64)

    def lookup_table(self):
        """(sorted packed keys, values-permutation) for numba-side lookups."""
        keys = np.array([pack_coords(c) for c in self.points], dtype=np.int64)
        order = np.argsort(keys)
        return keys[order], order.astype(np.int64)


PACK_BITS = 12  # coords must satisfy |c| < 2^11 per axis when packed


def pack_coords(z) -> int:
    key = 0
    for c in z:
        c = int(c)
        if not -(1 << (PACK_BITS - 1)) <= c < (1 << (PACK_BITS - 1)):
            raise GeometryError("coordinate %d too large to pack" % c)
        key = (key << PACK_BITS) | (c + (1 << (PACK_BITS - 1)))
    return key


def pack_points(pts, dim) -> np.ndarray:
    out = np.empty(len(pts), dtype=np.int64)
    for i, z in enumerate(pts):
        if len(z) != dim:
            raise GeometryError("point dimension mismatch in point set")
        out[i] = pack_coords(z)
    out.sort()
    return out


# ---------------------------------------------------------------------------
# Green's function
# ---------------------------------------------------------------------------

@dataclass
class GreenTable:
    """Bracketed lattice Green's function of the uniform walk on a box.

    ``lower``/``upper`` are wedge-indexed arrays (absorbing face vs fitted
    power-law extension at the face).  ``residual_bound`` bounds the
    harmonicity defect of the midpoint values at interior points != 0.
    """

    dim: int
    half_width: int
    method: str
    wedge: WedgeBox
    lower: np.ndarray
    upper: np.ndarray
    residual_bound: float
    fit_exponent: float
    fit_c: float

    def value(self, z) -> float:
        i = self.wedge.idx(z)
        return 0.5 * (self.lower[i] + self.upper[i])

    def bracket(self, z) -> tuple[float, float]:
        i = self.wedge.idx(z)
        return float(self.lower[i]), float(self.upper[i])

    def bound(self, z) -> float:
        lo, hi = self.bracket(z)
        return 0.5 * (hi - lo)

    def shell_extrema(self, r) -> tuple[float, float]:
        """(inf lower, sup upper) of G over the shell boundary of B_r."""
        ball = BallSpec(r, self.dim)
        vals_lo, vals_hi = [], []
        for z in ball.boundary_points():
            lo, hi = self.bracket(z)
            vals_lo.append(lo)
            vals_hi.append(hi)
        return min(vals_lo), max(vals_hi)

    def save(self, path, seed=0):
        with open(path, "w") as fh:
            fh.write("# critbrw green-table v1\n")
            fh.write("# d=%d L=%d method=%s seed=%s\n" % (self.dim, self.half_width, self.method, seed))
            fh.write("# columns: coords[%d] value bound\n" % self.dim)
            for i, c in enumerate(self.wedge.points):
                val = 0.5 * (self.lower[i] + self.upper[i])
                bnd = 0.5 * (self.upper[i] - self.lower[i])
                fh.write(" ".join(str(v) for v in c) + " %.17g %.17g\n" % (val, bnd))


class _WedgeSystem:
    """Prefactored (I - P) system on the wedge; reusable across right-hand
    sides (only the face condition / source changes)."""

    def __init__(self, wedge: WedgeBox, dirichlet_idx=None):
        n = len(wedge)
        w = 1.0 / (2 * wedge.dim)
        self.wedge = wedge
        self.w = w
        self.pinned = np.zeros(n, dtype=bool)
        if dirichlet_idx is not None:
            self.pinned[list(dirichlet_idx)] = True
        rows, cols, vals = [], [], []
        for i in range(n):
            rows.append(i); cols.append(i); vals.append(1.0)
            if self.pinned[i]:
                continue
            for j in wedge.nbr[i]:
                if j != n and not self.pinned[j]:
                    rows.append(i); cols.append(int(j)); vals.append(-w)
        A = scipy.sparse.csr_matrix((vals, (rows, cols)), shape=(n, n)).tocsc()
        self.lu = scipy.sparse.linalg.splu(A)

    def solve(self, rhs_point_idx=None, bc=0.0, dirichlet_val=1.0):
        wedge, n, w = self.wedge, len(self.wedge), self.w
        rhs = np.zeros(n)
        rhs[self.pinned] = dirichlet_val
        bc_val = float(bc) if np.isscalar(bc) else None
        face_counts = (wedge.nbr == n)
        if bc_val is not None:
            if bc_val != 0.0:
                rhs += np.where(self.pinned, 0.0, w * bc_val * face_counts.sum(axis=1))
        else:
            rhs += np.where(self.pinned, 0.0, w * face_counts.sum(axis=1) * bc)
        if self.pinned.any():
            pin_contrib = self.pinned[np.minimum(wedge.nbr, n - 1)] & (wedge.nbr != n)
            rhs += np.where(self.pinned, 0.0,
                            w * dirichlet_val * pin_contrib.sum(axis=1))
        if rhs_point_idx is not None:
            rhs[rhs_point_idx] += 1.0
        return self.lu.solve(rhs)


def _solve_wedge_linear(wedge: WedgeBox, rhs_point_idx: int | None, bc: np.ndarray | float,
                        dirichlet_idx=None, dirichlet_val=1.0, system=None):
    """Solve u = P u + source on the wedge with the given face condition.

    With ``rhs_point_idx`` set, solves (I - P) u = e_idx (Green equation).
    With ``dirichlet_idx`` set, those entries are pinned to ``dirichlet_val``
    (hitting-probability equation).  ``bc`` is the out-of-box neighbor value
    (scalar or per-point array).
    """
    if system is None:
        system = _WedgeSystem(wedge, dirichlet_idx)
    return system.solve(rhs_point_idx, bc, dirichlet_val)


def _power_fit(wedge: WedgeBox, g: np.ndarray, lo: float, hi: float):
    """Weighted log-log fit of g against |z| over lo <= |z| <= hi."""
    n2 = wedge.norms2().astype(float)
    wts = wedge.weights().astype(float)
    mask = (n2 >= lo * lo) & (n2 <= hi * hi) & (g > 0)
    if mask.sum() < 3:
        # widen the window on small boxes
        mask = (n2 >= 4.0) & (g > 0) & ~(wedge.nbr == len(wedge)).any(axis=1)
    if mask.sum() < 3:
        raise GeometryError("not enough points for the Green power-law fit")
    x = 0.5 * np.log(n2[mask])
    y = np.log(g[mask])
    wt = wts[mask]
    slope, intercept = np.polyfit(x, y, 1, w=np.sqrt(wt))
    return float(slope), float(math.exp(intercept))


def green_table(dim: int, half_width: int, method: str = "linear_solve") -> GreenTable:
    """Bracketed Green's function table for the uniform walk, d >= 3.

    Lower bracket: G = 0 at the face.  Upper bracket: face values from the
    power-law extension fitted on the lower solve (reported, not certified).
    """
    if dim <= 2:
        raise GeometryError("Green's function table requires d >= 3 (walk recurrent below)")
    if method not in ("linear_solve", "series_mc"):
        raise GeometryError("unknown green method %r" % method)
    wedge = WedgeBox(dim, half_width)
    origin = wedge.idx((0,) * dim)
    system = _WedgeSystem(wedge)
    g_lo = system.solve(origin, bc=0.0)
    slope, c_fit = _power_fit(wedge, g_lo, 5.0, half_width / 2.0)
    # face extension from the fitted power law, iterated to self-consistency
    # (the absorbing-face fit is biased steep, especially in d=4); the matrix
    # is factored once and reused across iterations
    n2 = wedge.norms2().astype(float)
    on_face = (wedge.nbr == len(wedge)).any(axis=1)
    g_hi = g_lo
    for _ in range(4):
        face = np.zeros(len(wedge))
        face[on_face] = c_fit * np.maximum(n2[on_face], 1.0) ** (slope / 2.0)
        g_hi = system.solve(origin, bc=face)
        new_slope, new_c = _power_fit(wedge, g_hi, 5.0, half_width / 2.0)
        converged = abs(new_slope - slope) < 1e-4
        slope, c_fit = new_slope, new_c
        if converged:
            break
    g_hi = np.maximum(g_hi, g_lo)
    mid = 0.5 * (g_lo + g_hi)
    # harmonicity defect of the midpoint table at interior points != 0
    interior = ~(wedge.nbr == len(wedge)).any(axis=1)
    interior[origin] = False
    ext = np.append(mid, 0.0)
    resid = np.abs(mid - ext[wedge.nbr].mean(axis=1)) + 0.5 * (g_hi - g_lo)
    residual_bound = float(resid[interior].max()) if interior.any() else 0.0
    return GreenTable(dim, half_width, method, wedge, g_lo, g_hi,
                      residual_bound, slope, c_fit)


# ---------------------------------------------------------------------------
# SRW hitting probability of the shell of B_r
# ---------------------------------------------------------------------------

@dataclass
class HitEstimate:
    lo: float
    hi: float
    method: str
    detail: dict = field(default_factory=dict)

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)


def srw_hit_prob(x, r, dim: int, method: str = "linear_solve",
                 half_width: int | None = None, green: GreenTable | None = None,
                 rng=None, n_walks: int = 200_000) -> HitEstimate:
    """P_x(H_r < infinity) for the uniform walk, H_r = hitting time of the
    shell of B_r.

    Recurrent dimensions return exactly 1.  Points inside or on the shell
    return 1 (the walk is already there or reaches it at its first exit).
    For d >= 3, ``linear_solve`` brackets by solving the harmonic equation
    with absorb-at-face (lower) vs Green-ratio escape bound at the face
    (upper); ``green_ratio`` applies the ratio bound directly; ``mc`` runs
    kill-radius walks with an exact binomial interval plus the escape
    correction.
    """
    ball = BallSpec(r, dim)
    if ball.contains(x) or ball.boundary_contains(x):
        return HitEstimate(1.0, 1.0, "inside")
    if dim <= 2:
        return HitEstimate(1.0, 1.0, "recurrent")
    rf = float(radius_fraction(r))
    if half_width is None:
        half_width = max(int(math.ceil(4 * rf)), int(math.ceil(2 * max(abs(c) for c in x))), 8)
    if half_width < 4 * rf:
        raise GeometryError("box half-width %d < 4r" % half_width)
    if green is None:
        green = green_table(dim, half_width)
    g_inf, g_sup = green.shell_extrema(r)
    glo_x, ghi_x = green.bracket(x)
    ratio = HitEstimate(min(1.0, glo_x / g_sup), min(1.0, ghi_x / g_inf), "green_ratio")
    if method == "green_ratio":
        return ratio
    if method == "linear_solve":
        wedge = green.wedge
        shell_idx = sorted({wedge.idx(z) for z in ball.boundary_points()}
                           | {wedge.idx(z) for z in ball.lattice_points()})
        system = _WedgeSystem(wedge, shell_idx)
        u_lo = system.solve(None, bc=0.0)
        # valid pointwise upper bound at the face from the Green ratio
        face = np.zeros(len(wedge))
        on_face = (wedge.nbr == len(wedge)).any(axis=1)
        for i in np.nonzero(on_face)[0]:
            face[i] = min(1.0, green.upper[i] / g_inf)
        u_hi = system.solve(None, bc=face)
        i = wedge.idx(x)
        lo, hi = float(u_lo[i]), float(min(1.0, u_hi[i]))
        # intersect with the ratio bracket: both are valid
        lo, hi = max(lo, ratio.lo), min(hi, ratio.hi)
        if lo > hi:  # numerically inconsistent brackets; fall back to union
            lo, hi = min(lo, hi), max(lo, hi)
        return HitEstimate(lo, hi, "linear_solve", {"ratio": (ratio.lo, ratio.hi)})
    if method == "mc":
        from . import _kernels
        if rng is None:
            rng = np.random.default_rng(0)
        seed = int(rng.integers(0, 2 ** 63 - 1))
        p_num, p_den = r2_threshold(r)
        hits = _kernels.srw_hit_mc(seed, np.asarray(x, np.int64), p_num, p_den,
                                   half_width, n_walks)
        import scipy.stats
        lo = scipy.stats.beta.ppf(0.025, hits, n_walks - hits + 1) if hits > 0 else 0.0
        hi = scipy.stats.beta.ppf(0.975, hits + 1, n_walks - hits) if hits < n_walks else 1.0
        # walks that reached the give-up face might still hit later
        corr = min(1.0, max(0.0, _face_escape_bound(green, r)))
        return HitEstimate(float(lo), float(min(1.0, hi + corr)), "mc",
                           {"hits": int(hits), "n": n_walks, "correction": corr})
    raise GeometryError("unknown method %r" % method)


def _face_escape_bound(green: GreenTable, r) -> float:
    """sup over face points of the Green-ratio bound on P(H_r < inf)."""
    g_inf, _ = green.shell_extrema(r)
    wedge = green.wedge
    on_face = (wedge.nbr == len(wedge)).any(axis=1)
    return float(min(1.0, green.upper[on_face].max() / g_inf))
