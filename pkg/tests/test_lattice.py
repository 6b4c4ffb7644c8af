import itertools
import math

import numpy as np
import pytest

from critbrw import lattice
from critbrw.lattice import BallSpec, GeometryError


def test_in_ball_examples():
    b1 = BallSpec(1, 2)
    assert lattice.in_ball((0, 0), b1)
    assert not lattice.in_ball((1, 0), b1)          # |z| = 1 is not < 1
    b2 = BallSpec(2, 2)
    pts = [z for z in itertools.product(range(-2, 3), repeat=2) if b2.contains(z)]
    assert len(pts) == 9


def test_ball_monotone_in_radius():
    rng = np.random.default_rng(1)
    for _ in range(200):
        z = tuple(rng.integers(-5, 6, size=3))
        r = float(rng.integers(1, 5))
        if BallSpec(r, 3).contains(z):
            assert BallSpec(r + 1, 3).contains(z)


def test_exact_rational_radius_boundary():
    # rational radii resolve boundary membership exactly: 1.414^2 < 2, so
    # (1,1) is excluded, while any rational above sqrt(2) includes it
    assert not BallSpec("1.414", 2).contains((1, 1))
    assert BallSpec("1.415", 2).contains((1, 1))
    assert BallSpec("1.414", 2).contains((1, 0))
    b2 = BallSpec("2.5", 1)
    assert b2.contains((2,))
    assert not b2.contains((3,))


def test_outer_boundary_enumeration():
    b1 = BallSpec(1, 2)
    bd = lattice.outer_boundary(b1.contains, 4, 2)
    assert bd == {(1, 0), (-1, 0), (0, 1), (0, -1)}
    b2 = BallSpec(2, 1)
    bd1 = lattice.outer_boundary(b2.contains, 5, 1)
    assert bd1 == {(-2,), (2,)}
    assert lattice.outer_boundary(lambda z: False, 3, 2) == set()


def test_outer_boundary_box_too_small():
    big = BallSpec(4, 2)
    with pytest.raises(GeometryError):
        lattice.outer_boundary(big.contains, 4, 2)


def test_boundary_points_norm_window():
    # shell points z satisfy r <= |z| < r + 1 (unit steps)
    for r in (2, 3, 5):
        for z in BallSpec(r, 3).boundary_points():
            n = math.sqrt(lattice.norm2(z))
            assert r <= n < r + 1


def test_srw_hit_prob_trivial():
    assert lattice.srw_hit_prob((0,), 2, 1).mid == 1.0            # recurrent
    assert lattice.srw_hit_prob((0, 0), 3, 2).mid == 1.0
    est = lattice.srw_hit_prob((1, 0, 0), 2, 3)
    assert est.mid == 1.0                                          # inside


def test_srw_hit_prob_shell_point():
    # a point on the shell has already hit it
    est = lattice.srw_hit_prob((2, 0, 0), 2, 3)
    assert est.mid == 1.0


def test_srw_hit_prob_methods_agree_d3():
    gt = lattice.green_table(3, 12)
    lin = lattice.srw_hit_prob((4, 0, 0), 2, 3, "linear_solve", 12, green=gt)
    mc = lattice.srw_hit_prob((4, 0, 0), 2, 3, "mc", 12, green=gt,
                              rng=np.random.default_rng(0), n_walks=200_000)
    assert lin.lo <= lin.hi
    assert max(lin.lo, mc.lo) <= min(lin.hi, mc.hi)   # brackets overlap


def test_srw_hit_prob_decreases_along_ray():
    gt = lattice.green_table(3, 16)
    vals = [lattice.srw_hit_prob((x, 0, 0), 2, 3, "linear_solve", 16, green=gt).mid
            for x in (4, 6, 8, 10)]
    assert all(b < a for a, b in zip(vals, vals[1:]))


def test_srw_hit_prob_box_too_small():
    with pytest.raises(GeometryError):
        lattice.srw_hit_prob((8, 0, 0), 3, 3, half_width=10)


@pytest.mark.parametrize("d,L,target", [(4, 20, -2.0), (5, 16, -3.0)])
def test_green_fit_exponent(d, L, target):
    gt = lattice.green_table(d, L)
    assert abs(gt.fit_exponent - target) <= 0.1


def test_green_harmonicity_residual():
    gt = lattice.green_table(3, 10)
    wedge = gt.wedge
    mid = 0.5 * (gt.lower + gt.upper)
    ext = np.append(mid, 0.0)
    interior = ~(wedge.nbr == len(wedge)).any(axis=1)
    interior[wedge.idx((0, 0, 0))] = False
    resid = np.abs(mid - ext[wedge.nbr].mean(axis=1))
    assert resid[interior].max() <= gt.residual_bound + 1e-15


def test_green_requires_transience():
    with pytest.raises(GeometryError):
        lattice.green_table(2, 10)


def test_green_save_format(tmp_path):
    gt = lattice.green_table(3, 6)
    path = tmp_path / "g.txt"
    gt.save(path, seed=5)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# critbrw green-table")
    assert "d=3 L=6" in lines[1]
    row = lines[3].split()
    assert len(row) == 5        # 3 coords, value, bound


def test_wedge_roundtrip_and_orbits():
    w = lattice.WedgeBox(3, 5)
    assert w.idx((3, -1, 2)) == w.idx((1, 2, 3)) == w.index[(1, 2, 3)]
    # orbit sizes sum to the box cardinality
    total = sum(lattice.orbit_size(c) for c in w.points)
    assert total == 11 ** 3


def test_pack_points_rejects_mixed_dims():
    with pytest.raises(GeometryError):
        lattice.pack_points([(1, 2), (1, 2, 3)], 2)
