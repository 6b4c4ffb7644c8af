"""Streaming simulation of one BRW realization with freeze/kill stopping rules.

A run never materializes the tree: the numba kernels in ``_kernels`` walk it
depth-first with an explicit stack, so memory is O(depth).  Stopping rules:

* ``freeze``   - particles entering the region are recorded and not expanded
                 (the frozen set of first entries);
* ``kill``     - particles entering the region end their lineage unrecorded
                 (distance truncation);
* ``target``   - region whose visits are counted as the local time;
* ``confine``  - ball used for ancestry accounting: a vertex is *confined*
                 when its whole ancestral trajectory stayed inside.

Regions are origin-centered Euclidean shells/balls (exact rational radii) or
explicit finite point sets, which covers every finite region.  Replication is
embarrassingly parallel: replica i draws from a PCG32 stream derived from
(master_seed, i), so a batch is bit-reproducible for a fixed replica count
regardless of thread scheduling.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .lattice import pack_points, r2_threshold
from .model import OffspringLaw, StepLaw

DEFAULT_NODE_BUDGET = 10 ** 8
DEFAULT_MAX_DEPTH = 1 << 20
DEFAULT_REPLICAS = 64

STATUS_NAMES = {
    K.ST_COMPLETED: "completed",
    K.ST_EARLY_ELL: "early_exit",
    K.ST_EARLY_FRZ: "early_exit",
    K.ST_BUDGET: "budget_exceeded",
    K.ST_STACK: "budget_exceeded",   # depth limit: undecided, like budget
    K.ST_RECORD_OVF: "record_overflow",
    K.ST_GEN_OVF: "budget_exceeded",
}

UNDECIDED_CODES = (K.ST_BUDGET, K.ST_STACK, K.ST_GEN_OVF)


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class SimSpec:
    """Stopping rules and observables for one BRW realization."""

    dim: int
    offspring: OffspringLaw
    step: StepLaw
    start: tuple = None
    freeze_shell: object = None      # radius: freeze on the shell of B_a
    freeze_points: tuple = None      # explicit finite freeze region
    kill_shell: object = None        # radius: lineages end on the shell of B_b
    kill_box: int = None             # lineages end outside [-L, L]^d
    target_ball: object = None       # local time counts visits to B_t
    target_points: tuple = None
    confine_ball: object = None      # ancestry accounting ball
    max_generation: int = None
    node_budget: int = DEFAULT_NODE_BUDGET
    early_exit_ell: int = None       # stop once local time exceeds this
    early_exit_frozen: int = None    # stop once this many particles froze
    max_depth: int = DEFAULT_MAX_DEPTH

    def __post_init__(self):
        if self.dim < 1:
            raise SpecError("dimension must be >= 1")
        if self.step.dim != self.dim:
            raise SpecError("step law dimension mismatch")
        if self.node_budget < 1:
            raise SpecError("node_budget must be >= 1")
        start = self.start if self.start is not None else (0,) * self.dim
        if len(start) != self.dim:
            raise SpecError("start point dimension mismatch")
        object.__setattr__(self, "start", tuple(int(c) for c in start))
        if self.freeze_shell is not None and self.freeze_points is not None:
            raise SpecError("freeze region: give a shell or a point set, not both")
        if self.target_ball is not None and self.target_points is not None:
            raise SpecError("target region: give a ball or a point set, not both")
        if self.kill_shell is not None and self.kill_box is not None:
            raise SpecError("kill region: give a shell or a box, not both")
        if (self.freeze_shell is not None and self.kill_shell is not None
                and r2_threshold(self.freeze_shell) == r2_threshold(self.kill_shell)):
            raise SpecError("freeze and kill shells coincide; regions must be disjoint")

    # --- kernel argument encoding -------------------------------------
    def _regions(self):
        d = self.dim
        empty = np.empty(0, dtype=np.int64)
        if self.freeze_points is not None:
            fz = (K.RG_POINTS, 0, 0, pack_points(self.freeze_points, d))
        elif self.freeze_shell is not None:
            p, q = r2_threshold(self.freeze_shell)
            fz = (K.RG_SHELL, p, q, empty)
        else:
            fz = (K.RG_NONE, 0, 0, empty)
        if self.kill_shell is not None:
            p, q = r2_threshold(self.kill_shell)
            kl = (K.RG_SHELL, p, q)
        elif self.kill_box is not None:
            kl = (K.RG_BOX, int(self.kill_box), 1)
        else:
            kl = (K.RG_NONE, 0, 0)
        if self.target_points is not None:
            tg = (K.RG_POINTS, 0, 0, pack_points(self.target_points, d))
        elif self.target_ball is not None:
            p, q = r2_threshold(self.target_ball)
            tg = (K.RG_BALL, p, q, empty)
        else:
            tg = (K.RG_NONE, 0, 0, empty)
        if self.confine_ball is not None:
            p, q = r2_threshold(self.confine_ball)
            cf = (1, p, q)
        else:
            cf = (0, 0, 1)
        return fz, kl, tg, cf

    def _scalars(self):
        mg = -1 if self.max_generation is None else int(self.max_generation)
        ee = 0 if self.early_exit_ell is None else int(self.early_exit_ell)
        ef = 0 if self.early_exit_frozen is None else int(self.early_exit_frozen)
        return mg, int(self.node_budget), ee, ef


@dataclass(frozen=True)
class FrozenParticle:
    position: tuple
    generation: int


@dataclass
class RunOutcome:
    """Observables of one realization under the spec's stopping rules."""

    local_time: int
    frozen_count: int
    frozen_confined: int
    confined_count: int
    total_nodes: int
    killed_count: int
    max_generation_seen: int
    status: str
    status_code: int
    frozen_particles: list = None
    frozen_out: list = None
    entry_path: list = None

    @property
    def decided(self) -> bool:
        return self.status_code not in UNDECIDED_CODES

    def to_record(self) -> dict:
        rec = {
            "schema": "run-record/v1",
            "status": self.status,
            "ell": int(self.local_time),
            "frozen": int(self.frozen_count),
            "confined": int(self.confined_count),
            "nodes": int(self.total_nodes),
            "max_generation": int(self.max_generation_seen),
        }
        return rec


def _seed_from(rng) -> int:
    if isinstance(rng, (int, np.integer)):
        return int(rng)
    return int(rng.integers(0, 2 ** 62))


_WORKSPACES: dict = {}


def _workspace(dim: int, max_depth: int):
    key = (dim, max_depth)
    ws = _WORKSPACES.get(key)
    if ws is None:
        ws = (np.empty((max_depth, dim), dtype=np.int64),
              np.empty(max_depth, dtype=np.int64),
              np.zeros(max_depth, dtype=np.int64),
              np.zeros(max_depth, dtype=np.uint8))
        _WORKSPACES[key] = ws
    return ws


def run(spec: SimSpec, rng, record_frozen: bool = False,
        record_path: bool = False, record_cap: int = 1 << 16) -> RunOutcome:
    """Simulate one BRW realization.

    ``rng`` is an integer seed or a numpy Generator (consumed for one seed).
    With ``record_frozen`` the frozen particles (and any outer-shell freezes)
    are returned explicitly; ``record_path`` also captures the ancestral path
    of the depth-first-first frozen particle.
    """
    seed = _seed_from(rng)
    st = K.make_streams(seed, 1)[0].copy()
    fz, kl, tg, cf = spec._regions()
    mg, budget, ee, ef = spec._scalars()
    pos, n2s, pend, conf = _workspace(spec.dim, spec.max_depth)
    start = np.asarray(spec.start, dtype=np.int64)
    out = np.zeros(K.N_OUT, dtype=np.int64)
    if not (record_frozen or record_path):
        K.run_fast(st, spec.dim, spec.offspring.cdf_table(), spec.step.cdf_table(),
                   start, fz[0], fz[1], fz[2], fz[3], kl[0], kl[1], kl[2],
                   tg[0], tg[1], tg[2], tg[3], cf[0], cf[1], cf[2],
                   mg, budget, ee, ef, pos, n2s, pend, conf, out)
        return _outcome_from_row(out)
    rec_in_pos = np.empty((record_cap, spec.dim), dtype=np.int64)
    rec_in_gen = np.empty(record_cap, dtype=np.int64)
    rec_out_pos = np.empty((record_cap, spec.dim), dtype=np.int64)
    rec_out_gen = np.empty(record_cap, dtype=np.int64)
    path_pos = np.empty((spec.max_depth, spec.dim), dtype=np.int64)
    fo_kind, fo_p, fo_q = K.RG_NONE, 0, 1
    K.run_record(st, spec.dim, spec.offspring.cdf_table(), spec.step.cdf_table(),
                 start, fz[0], fz[1], fz[2], fz[3],
                 fo_kind, fo_p, fo_q, kl[0], kl[1], kl[2],
                 tg[0], tg[1], tg[2], tg[3],
                 cf[0], cf[1], cf[2], mg, budget,
                 pos, n2s, pend, conf,
                 rec_in_pos, rec_in_gen, rec_out_pos, rec_out_gen,
                 path_pos, 1 if record_path else 0, out)
    oc = _outcome_from_row(out)
    nf = min(oc.frozen_count, record_cap)
    oc.frozen_particles = [FrozenParticle(tuple(rec_in_pos[i]), int(rec_in_gen[i]))
                           for i in range(nf)]
    plen = int(out[8])
    if record_path and plen >= 0:
        oc.entry_path = [tuple(path_pos[i]) for i in range(plen)]
    return oc


def _outcome_from_row(row) -> RunOutcome:
    code = int(row[6])
    return RunOutcome(
        local_time=int(row[0]), frozen_count=int(row[1]),
        frozen_confined=int(row[2]), confined_count=int(row[3]),
        total_nodes=int(row[4]), killed_count=int(row[7]),
        max_generation_seen=int(row[5]), status=STATUS_NAMES[code],
        status_code=code)


@dataclass
class BatchResult:
    """Column arrays over a batch of independent runs."""

    ell: np.ndarray
    frozen: np.ndarray
    frozen_confined: np.ndarray
    confined: np.ndarray
    nodes: np.ndarray
    max_gen: np.ndarray
    status: np.ndarray
    killed: np.ndarray
    n_runs: int
    seconds: float

    @property
    def undecided(self) -> np.ndarray:
        mask = np.zeros(len(self.status), dtype=bool)
        for c in UNDECIDED_CODES:
            mask |= self.status == c
        return mask

    def throughput(self) -> float:
        return float(self.nodes.sum()) / max(self.seconds, 1e-9)


def run_batch(spec: SimSpec, n_runs: int, master_seed: int,
              replicas: int = DEFAULT_REPLICAS) -> BatchResult:
    """Replica-parallel batch of independent runs (deterministic for fixed
    (spec, master_seed, replicas); runs are padded up to a replica multiple).
    """
    per = -(-int(n_runs) // replicas)
    total = per * replicas
    seeds = K.make_streams(master_seed, replicas)
    fz, kl, tg, cf = spec._regions()
    mg, budget, ee, ef = spec._scalars()
    out = np.empty((total, K.N_OUT), dtype=np.int64)
    t0 = time.perf_counter()
    K.batch_fast(seeds, per, spec.dim, spec.offspring.cdf_table(),
                 spec.step.cdf_table(), np.asarray(spec.start, dtype=np.int64),
                 fz[0], fz[1], fz[2], fz[3], kl[0], kl[1], kl[2],
                 tg[0], tg[1], tg[2], tg[3], cf[0], cf[1], cf[2],
                 mg, budget, ee, ef, spec.max_depth, out)
    dt = time.perf_counter() - t0
    return BatchResult(ell=out[:, 0], frozen=out[:, 1], frozen_confined=out[:, 2],
                       confined=out[:, 3], nodes=out[:, 4], max_gen=out[:, 5],
                       status=out[:, 6], killed=out[:, 7], n_runs=total, seconds=dt)


# ---------------------------------------------------------------------------
# Wave chains
# ---------------------------------------------------------------------------

@dataclass
class WaveRecord:
    index: int
    direction: str               # "outward" | "inward"
    n_start: int
    frozen_total: int            # particles reaching the far shell this wave
    time_in_target: int          # local time accrued in the target ball
    confined_size: int           # alive tree size of this wave's runs
    overflow: bool


def run_wave_chain(dim: int, offspring: OffspringLaw, step: StepLaw,
                   inner_r, outer_r, start, rng, max_waves: int,
                   truncation_shell=None, node_budget: int = 10 ** 7,
                   target_ball=None, record_cap: int = 1 << 16,
                   max_depth: int = DEFAULT_MAX_DEPTH) -> list[WaveRecord]:
    """Alternating freeze waves between the shells of B_inner and B_outer.

    Wave 0 runs the starting particles outward (freeze on the outer shell)
    when they start inside B_inner's shell radius, inward otherwise; each
    subsequent wave restarts independent BRWs from the previous wave's frozen
    particles, so wave k+1 depends on wave k only through those positions.
    ``truncation_shell`` kills inward-wave particles at that distance.
    """
    if max_waves <= 0:
        raise SpecError("max_waves must be positive")
    inner_t = r2_threshold(inner_r)
    outer_t = r2_threshold(outer_r)
    if not inner_t[0] * outer_t[1] < outer_t[0] * inner_t[1]:
        raise SpecError("wave radii must satisfy inner < outer")
    seed = _seed_from(rng)
    sub = np.random.SeedSequence(seed)
    start = np.asarray(start, dtype=np.int64)
    if start.ndim == 1:
        start = start[None, :]
    p_in, q_in = inner_t
    p_out, q_out = outer_t
    d = dim
    n2_start = int((start[0] ** 2).sum())
    outward_first = q_in * n2_start < p_in or _on_shell(start[0], p_in, q_in)
    records = []
    population = start
    counter = 0
    tgt = (K.RG_NONE, 0, 0, np.empty(0, dtype=np.int64))
    if target_ball is not None:
        tp, tq = r2_threshold(target_ball)
        tgt = (K.RG_BALL, tp, tq, np.empty(0, dtype=np.int64))
    if truncation_shell is not None:
        kp, kq = r2_threshold(truncation_shell)
        kill = (K.RG_SHELL, kp, kq)
    else:
        kill = (K.RG_NONE, 0, 1)
    pos, n2s, pend, conf = _workspace(d, max_depth)
    rec_pos = np.empty((record_cap, d), dtype=np.int64)
    rec_gen = np.empty(record_cap, dtype=np.int64)
    dummy_pos = np.empty((1, d), dtype=np.int64)
    dummy_gen = np.empty(1, dtype=np.int64)
    path_buf = np.empty((1, d), dtype=np.int64)
    off_cdf = offspring.cdf_table()
    step_cdf = step.cdf_table()
    row = np.zeros(K.N_OUT, dtype=np.int64)
    for k in range(max_waves):
        outward = (k % 2 == 0) == outward_first
        if outward:
            fz = (K.RG_SHELL, p_out, q_out, np.empty(0, dtype=np.int64))
            kl = (K.RG_NONE, 0, 1)
        else:
            fz = (K.RG_SHELL, p_in, q_in, np.empty(0, dtype=np.int64))
            kl = kill
        nxt = []
        ell_sum = 0
        size_sum = 0
        overflow = False
        for i in range(population.shape[0]):
            counter += 1
            st = np.random.SeedSequence(entropy=seed, spawn_key=(counter,)) \
                .generate_state(2, dtype=np.uint64)
            st[1] |= np.uint64(1)
            K.run_record(st, d, off_cdf, step_cdf, population[i],
                         fz[0], fz[1], fz[2], fz[3],
                         K.RG_NONE, 0, 1, kl[0], kl[1], kl[2],
                         tgt[0], tgt[1], tgt[2], tgt[3],
                         0, 0, 1, -1, node_budget,
                         pos, n2s, pend, conf,
                         rec_pos, rec_gen, dummy_pos, dummy_gen,
                         path_buf, 0, row)
            nf = int(row[1])
            ell_sum += int(row[0])
            size_sum += int(row[4]) - nf   # alive size = |T(freeze ball)|
            if row[6] != K.ST_COMPLETED:
                overflow = True
            for j in range(min(nf, record_cap)):
                nxt.append(rec_pos[j].copy())
        records.append(WaveRecord(index=k, direction="outward" if outward else "inward",
                                  n_start=int(population.shape[0]),
                                  frozen_total=len(nxt), time_in_target=ell_sum,
                                  confined_size=size_sum, overflow=overflow))
        if not nxt:
            break
        population = np.asarray(nxt, dtype=np.int64)
    return records


def _on_shell(z, p, q) -> bool:
    n2 = int((np.asarray(z, dtype=np.int64) ** 2).sum())
    if q * n2 < p:
        return False
    m = int(np.abs(z).max())
    return q * (n2 + 1 - 2 * m) < p


def generation_slice_counts(spec: SimSpec, rng, width: int,
                            gen_cap: int = 1 << 14):
    """Per-run slice totals: counts alive vertices at generations == j mod
    width under the spec's freeze shell.  Returns (slices, tree_size, status).
    """
    if width < 1:
        raise SpecError("slice width must be >= 1")
    if spec.freeze_shell is None:
        raise SpecError("slice counting requires a freeze shell")
    seed = _seed_from(rng)
    st = K.make_streams(seed, 1)[0].copy()
    p, q = r2_threshold(spec.freeze_shell)
    pos, n2s, pend, _ = _workspace(spec.dim, spec.max_depth)
    a_cnt = np.zeros(gen_cap, dtype=np.int64)
    row = np.zeros(K.N_OUT, dtype=np.int64)
    K.run_slices(st, spec.dim, spec.offspring.cdf_table(), spec.step.cdf_table(),
                 np.asarray(spec.start, dtype=np.int64), p, q,
                 spec.node_budget, pos, n2s, pend, a_cnt, row)
    maxg = int(row[5])
    slices = np.zeros(width, dtype=np.int64)
    for g in range(maxg + 1):
        slices[g % width] += a_cnt[g]
    return slices, int(a_cnt[:maxg + 1].sum()), STATUS_NAMES[int(row[6])]


def slice_mean_profile(spec: SimSpec, n_runs: int, master_seed: int, width: int,
                       replicas: int = DEFAULT_REPLICAS, gen_cap: int = 1 << 14):
    """Mean slice totals over a batch; diagnostic for slice balance."""
    if spec.freeze_shell is None:
        raise SpecError("slice counting requires a freeze shell")
    per = -(-int(n_runs) // replicas)
    seeds = K.make_streams(master_seed, replicas)
    p, q = r2_threshold(spec.freeze_shell)
    slice_sums = np.zeros((replicas, width), dtype=np.int64)
    tree_sums = np.zeros(replicas, dtype=np.int64)
    ratio_bad = np.zeros(replicas, dtype=np.int64)
    bad = np.zeros(replicas, dtype=np.int64)
    K.batch_slice_sums(seeds, per, spec.dim, spec.offspring.cdf_table(),
                       spec.step.cdf_table(), np.asarray(spec.start, dtype=np.int64),
                       p, q, spec.node_budget, spec.max_depth, gen_cap, width,
                       slice_sums, tree_sums, ratio_bad, bad)
    total = per * replicas - int(bad.sum())
    return (slice_sums.sum(axis=0) / max(total, 1),
            float(tree_sums.sum()) / max(total, 1), int(bad.sum()), total)


# ---------------------------------------------------------------------------
# Plain branching-process survival (no space)
# ---------------------------------------------------------------------------

def survival_mc(law: OffspringLaw, n_gen: int, n_runs: int, master_seed: int,
                replicas: int = DEFAULT_REPLICAS):
    """Monte Carlo P(Z_n != 0).  The geometric law uses the negative-binomial
    population shortcut (Z_{k+1} | Z_k ~ NB(Z_k, 1/2)); other laws walk the
    tree depth-first.  Returns (alive_count, n_runs_actual).
    """
    if law.kind == "geometric_half":
        rng = np.random.default_rng(np.random.SeedSequence(master_seed))
        z = np.ones(int(n_runs), dtype=np.int64)
        for _ in range(n_gen):
            live = z > 0
            if not live.any():
                break
            z[live] = rng.negative_binomial(z[live], 0.5)
        return int((z > 0).sum()), int(n_runs)
    per = -(-int(n_runs) // replicas)
    seeds = K.make_streams(master_seed, replicas)
    alive = np.zeros(per * replicas, dtype=np.int64)
    K.bgw_survival_runs(seeds, per, law.cdf_table(), n_gen, alive)
    return int(alive.sum()), per * replicas


def measure_throughput(dim: int = 4, seconds_budget: float = 2.0,
                       master_seed: int = 12345) -> float:
    """Engine nodes/second on the default law (soft throughput check)."""
    from .model import geometric_half, uniform_step
    spec = SimSpec(dim=dim, offspring=geometric_half(), step=uniform_step(dim),
                   kill_shell=40, node_budget=10 ** 7)
    n = 20_000
    total_nodes = 0
    total_time = 0.0
    seed = master_seed
    while total_time < seconds_budget:
        b = run_batch(spec, n, seed, replicas=DEFAULT_REPLICAS)
        total_nodes += int(b.nodes.sum()) + int(b.killed.sum())
        total_time += b.seconds
        seed += 1
        n *= 2
    return total_nodes / total_time
