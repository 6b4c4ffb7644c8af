import numpy as np
import pytest

from critbrw import engine, lattice, martingale, model
from critbrw.engine import SimSpec


def test_single_node_limit():
    # find a realization where the root dies childless at the origin:
    # M_0 = |0|^2 - 1 = -1 and the trace stays at -1
    for seed in range(60):
        tr = martingale.track_norm2_martingale(
            2, model.binary(), model.uniform_step(2), (0, 0), 3, seed)
        if tr.final == -1.0 and tr.values[0] == -1.0:
            assert np.all(tr.values == -1.0)
            return
    pytest.fail("no single-node realization found")


def test_m0_value():
    tr = martingale.track_norm2_martingale(
        3, model.geometric_half(), model.uniform_step(3), (2, 1, 0), 4, 5)
    assert tr.values[0] == 5.0 - 1.0


def test_trace_constant_after_extinction():
    tr = martingale.track_norm2_martingale(
        2, model.geometric_half(), model.uniform_step(2), (0, 0), 3, 11)
    assert tr.values[-1] == tr.final
    # checkpoints beyond the extinction generation all hold the limit
    beyond = tr.checkpoints >= tr.checkpoints[-1]
    assert np.all(tr.values[beyond] == tr.final)


def test_final_value_inequality_with_frozen_norms():
    # M_inf = sum_frozen |S|^2 - (|T| + |eta|) >= r^2 |eta| - (|T| + |eta|)
    spec = SimSpec(dim=2, offspring=model.geometric_half(),
                   step=model.uniform_step(2), freeze_shell=3)
    for seed in range(30):
        oc = engine.run(spec, seed, record_frozen=True)
        tr = martingale.track_norm2_martingale(
            2, model.geometric_half(), model.uniform_step(2), (0, 0), 3, seed)
        # same seed drives the same realization through both code paths
        alive = oc.total_nodes - oc.frozen_count
        m_inf = sum(sum(c * c for c in fp.position) for fp in oc.frozen_particles) \
            - (alive + oc.frozen_count)
        assert tr.final == m_inf
        assert m_inf >= 9 * oc.frozen_count - (alive + oc.frozen_count)


def test_norm2_drift_nullity_small():
    dc = martingale.norm2_drift_check(
        2, model.geometric_half(), model.uniform_step(2), (0, 0), 4,
        [0, 1, 2, 5, 10], 150_000, 77)
    assert dc.m0 == -1.0
    assert np.all(dc.studentized() < 4.0)
    assert dc.means[0] == -1.0 and dc.ses[0] == 0.0


def test_norm2_requires_start_inside():
    with pytest.raises(engine.SpecError):
        martingale.norm2_drift_check(2, model.geometric_half(),
                                     model.uniform_step(2), (5, 0), 4, [1], 10, 0)


def test_green_drift_nullity_small():
    gt = lattice.green_table(5, 14)
    dc = martingale.green_drift_check(
        5, model.geometric_half(), model.uniform_step(5), (6, 0, 0, 0, 0),
        3, 12, gt, [1, 5, 20], 100_000, 13)
    assert dc.m0 == pytest.approx(gt.value((6, 0, 0, 0, 0)))
    assert dc.holds(3.0)
    assert dc.residual_term > 0


def test_green_requires_annulus_start():
    gt = lattice.green_table(5, 14)
    with pytest.raises(engine.SpecError):
        martingale.green_drift_check(5, model.geometric_half(),
                                     model.uniform_step(5), (2, 0, 0, 0, 0),
                                     3, 12, gt, [1], 10, 0)
    with pytest.raises(engine.SpecError):
        martingale.green_drift_check(5, model.geometric_half(),
                                     model.uniform_step(5), (12, 0, 0, 0, 0),
                                     3, 12, gt, [1], 10, 0)
