"""Numba kernels: streaming depth-first BRW simulation on Z^d.

One tree vertex costs two PCG32 draws and a handful of integer ops; trees are
never materialized (explicit stack of open vertices, memory O(depth)).  All
randomness flows through explicit per-replica PCG32 states so results are
bit-identical for a given (parameters, seed) regardless of thread count.

Region encodings (origin-centered, exact integer arithmetic):
  ball(p, q):   z inside  <=>  q*|z|^2 < p
  shell(p, q):  z not inside and some unit neighbor inside
                <=>  not inside and q*(|z|^2 + 1 - 2*max|z_i|) < p
  point set:    packed sorted int64 keys (12 bits per coordinate)
  box(L):       kill when a coordinate leaves [-L, L]

Status codes: 0 completed, 1 early local-time exit, 2 early frozen exit,
3 node budget, 4 stack depth limit, 5 record-buffer overflow,
6 generation-array overflow.
"""

import numpy as np
from numba import njit, prange, uint32, uint64

ST_COMPLETED = 0
ST_EARLY_ELL = 1
ST_EARLY_FRZ = 2
ST_BUDGET = 3
ST_STACK = 4
ST_RECORD_OVF = 5
ST_GEN_OVF = 6

# region kinds
RG_NONE = 0
RG_SHELL = 1
RG_POINTS = 2
RG_BALL = 3
RG_BOX = 4

PACK_BITS = 12
PACK_OFF = 1 << (PACK_BITS - 1)

N_OUT = 9  # ell, frozen, frozen_conf, confined, nodes, maxgen, status, killed, frozen_out


@njit(inline="always")
def _pcg32(st):
    old = st[0]
    st[0] = old * uint64(6364136223846793005) + st[1]
    xs = uint32(((old >> uint64(18)) ^ old) >> uint64(27))
    rot = uint32(old >> uint64(59))
    return uint32((xs >> rot) | (xs << ((uint32(32) - rot) & uint32(31))))


@njit(inline="always")
def _unif(st):
    return _pcg32(st) * 2.3283064365386963e-10


@njit(inline="always")
def _draw_cdf(st, cdf):
    u = _unif(st)
    k = 0
    n = cdf.shape[0]
    while k < n - 1 and u >= cdf[k]:
        k += 1
    return k


@njit(inline="always")
def _pack(z, d):
    key = np.int64(0)
    for j in range(d):
        key = (key << PACK_BITS) | (z[j] + PACK_OFF)
    return key


@njit(inline="always")
def _pack_canon(z, d):
    """Pack sorted absolute coordinates (signed-permutation orbit key)."""
    buf = np.empty(d, dtype=np.int64)
    for j in range(d):
        buf[j] = z[j] if z[j] >= 0 else -z[j]
    for j in range(1, d):
        v = buf[j]
        i = j - 1
        while i >= 0 and buf[i] > v:
            buf[i + 1] = buf[i]
            i -= 1
        buf[i + 1] = v
    key = np.int64(0)
    for j in range(d):
        key = (key << PACK_BITS) | (buf[j] + PACK_OFF)
    return key


@njit(inline="always")
def _in_sorted(keys, key):
    lo = 0
    hi = keys.shape[0]
    while lo < hi:
        mid = (lo + hi) >> 1
        if keys[mid] < key:
            lo = mid + 1
        else:
            hi = mid
    return lo < keys.shape[0] and keys[lo] == key


@njit(inline="always")
def _in_ball(n2, p, q):
    return q * n2 < p


@njit(inline="always")
def _in_shell(z, d, n2, p, q):
    if q * n2 < p:
        return False
    m = np.int64(0)
    for j in range(d):
        a = z[j] if z[j] >= 0 else -z[j]
        if a > m:
            m = a
    return q * (n2 + 1 - 2 * m) < p


@njit(inline="always")
def _region_hit(z, d, n2, kind, p, q, keys):
    if kind == RG_NONE:
        return False
    if kind == RG_SHELL:
        return _in_shell(z, d, n2, p, q)
    if kind == RG_BALL:
        return _in_ball(n2, p, q)
    if kind == RG_POINTS:
        return _in_sorted(keys, _pack(z, d))
    return False


@njit(cache=True)
def run_fast(st, d, off_cdf, step_cdf, start,
             fz_kind, fz_p, fz_q, fz_keys,
             kl_kind, kl_p, kl_q,
             tg_kind, tg_p, tg_q, tg_keys,
             cf_on, cf_p, cf_q,
             max_gen, budget, early_ell, early_frz,
             pos, n2s, pend, conf, out):
    """One BRW realization; counters only.  See module docstring for codes."""
    ell = np.int64(0); frozen = np.int64(0); frozen_cf = np.int64(0)
    confined = np.int64(0); nodes = np.int64(0); maxg = np.int64(0)
    killed = np.int64(0)
    status = ST_COMPLETED

    n2 = np.int64(0)
    for j in range(d):
        pos[0, j] = start[j]
        n2 += start[j] * start[j]
    n2s[0] = n2

    # classify the root (generation 0)
    root_alive = True
    if _region_hit(pos[0], d, n2, fz_kind, fz_p, fz_q, fz_keys):
        frozen += 1
        nodes += 1
        if cf_on != 0 and _in_ball(n2, cf_p, cf_q):
            frozen_cf += 1
        if _region_hit(pos[0], d, n2, tg_kind, tg_p, tg_q, tg_keys):
            ell += 1
        root_alive = False
    elif kl_kind == RG_SHELL and _in_shell(pos[0], d, n2, kl_p, kl_q):
        killed += 1
        root_alive = False
    elif kl_kind == RG_BOX:
        for j in range(d):
            if pos[0, j] > kl_p or pos[0, j] < -kl_p:
                killed += 1
                root_alive = False
                break

    depth = 0
    if root_alive:
        nodes += 1
        if _region_hit(pos[0], d, n2, tg_kind, tg_p, tg_q, tg_keys):
            ell += 1
        c0 = np.uint8(0)
        if cf_on != 0 and _in_ball(n2, cf_p, cf_q):
            c0 = np.uint8(1)
            confined += 1
        conf[0] = c0
        if max_gen != 0:
            xi = _draw_cdf(st, off_cdf)
            if xi > 0:
                pend[0] = xi
                depth = 1

    while depth > 0:
        k = depth - 1
        if pend[k] == 0:
            depth -= 1
            continue
        pend[k] -= 1
        # child of the vertex at generation k; child generation == depth
        sidx = _draw_cdf(st, step_cdf)
        ax = sidx >> 1
        dlt = np.int64(1) if (sidx & 1) == 0 else np.int64(-1)
        for j in range(d):
            pos[depth, j] = pos[k, j]
        pos[depth, ax] += dlt
        cn2 = n2s[k] + 2 * dlt * pos[k, ax] + 1
        n2s[depth] = cn2
        g = depth
        if g > maxg:
            maxg = g

        if _region_hit(pos[depth], d, cn2, fz_kind, fz_p, fz_q, fz_keys):
            frozen += 1
            nodes += 1
            if cf_on != 0 and conf[k] != 0 and _in_ball(cn2, cf_p, cf_q):
                frozen_cf += 1
            if _region_hit(pos[depth], d, cn2, tg_kind, tg_p, tg_q, tg_keys):
                ell += 1
                if early_ell > 0 and ell > early_ell:
                    status = ST_EARLY_ELL
                    break
            if early_frz > 0 and frozen >= early_frz:
                status = ST_EARLY_FRZ
                break
            if nodes >= budget:
                status = ST_BUDGET
                break
            continue
        if kl_kind == RG_SHELL and _in_shell(pos[depth], d, cn2, kl_p, kl_q):
            killed += 1
            continue
        if kl_kind == RG_BOX and (pos[depth, ax] > kl_p or pos[depth, ax] < -kl_p):
            killed += 1
            continue

        nodes += 1
        if _region_hit(pos[depth], d, cn2, tg_kind, tg_p, tg_q, tg_keys):
            ell += 1
            if early_ell > 0 and ell > early_ell:
                status = ST_EARLY_ELL
                break
        if cf_on != 0 and conf[k] != 0 and _in_ball(cn2, cf_p, cf_q):
            conf[depth] = np.uint8(1)
            confined += 1
        else:
            conf[depth] = np.uint8(0)
        if nodes >= budget:
            status = ST_BUDGET
            break
        if max_gen <= 0 or g < max_gen:
            xi = _draw_cdf(st, off_cdf)
            if xi > 0:
                if depth + 1 >= pend.shape[0]:
                    status = ST_STACK
                    break
                pend[depth] = xi
                depth += 1

    out[0] = ell
    out[1] = frozen
    out[2] = frozen_cf
    out[3] = confined
    out[4] = nodes
    out[5] = maxg
    out[6] = status
    out[7] = killed
    out[8] = 0


@njit(cache=True, parallel=True)
def batch_fast(seeds, runs_per_rep, d, off_cdf, step_cdf, start,
               fz_kind, fz_p, fz_q, fz_keys,
               kl_kind, kl_p, kl_q,
               tg_kind, tg_p, tg_q, tg_keys,
               cf_on, cf_p, cf_q,
               max_gen, budget, early_ell, early_frz,
               max_depth, out):
    """Replica-parallel batch; replica i owns rows [i*runs_per_rep, ...)."""
    n_rep = seeds.shape[0]
    for rep in prange(n_rep):
        st = seeds[rep].copy()
        pos = np.empty((max_depth, d), dtype=np.int64)
        n2s = np.empty(max_depth, dtype=np.int64)
        pend = np.zeros(max_depth, dtype=np.int64)
        conf = np.zeros(max_depth, dtype=np.uint8)
        row = np.empty(N_OUT, dtype=np.int64)
        base = rep * runs_per_rep
        for i in range(runs_per_rep):
            run_fast(st, d, off_cdf, step_cdf, start,
                     fz_kind, fz_p, fz_q, fz_keys,
                     kl_kind, kl_p, kl_q,
                     tg_kind, tg_p, tg_q, tg_keys,
                     cf_on, cf_p, cf_q,
                     max_gen, budget, early_ell, early_frz,
                     pos, n2s, pend, conf, row)
            for j in range(N_OUT):
                out[base + i, j] = row[j]


@njit(cache=True)
def run_record(st, d, off_cdf, step_cdf, start,
               fz_kind, fz_p, fz_q, fz_keys,
               fo_kind, fo_p, fo_q,
               kl_kind, kl_p, kl_q,
               tg_kind, tg_p, tg_q, tg_keys,
               cf_on, cf_p, cf_q,
               max_gen, budget,
               pos, n2s, pend, conf,
               rec_in_pos, rec_in_gen, rec_out_pos, rec_out_gen,
               path_pos, want_path, out):
    """BRW run recording frozen particles (inner region and optional outer
    shell) and, when ``want_path``, the ancestral path of the first (depth-
    first, i.e. lexicographically smallest) particle frozen in the inner
    region.  Returns the path length through out[8]; -1 if no inner freeze.
    """
    frozen = np.int64(0); frozen_out = np.int64(0); nodes = np.int64(0)
    confined = np.int64(0); frozen_cf = np.int64(0)
    maxg = np.int64(0); killed = np.int64(0); ell = np.int64(0)
    status = ST_COMPLETED
    path_len = np.int64(-1)
    cap_in = rec_in_gen.shape[0]
    cap_out = rec_out_gen.shape[0]

    n2 = np.int64(0)
    for j in range(d):
        pos[0, j] = start[j]
        n2 += start[j] * start[j]
    n2s[0] = n2

    root_alive = True
    if _region_hit(pos[0], d, n2, fz_kind, fz_p, fz_q, fz_keys):
        nodes += 1
        if frozen < cap_in:
            for j in range(d):
                rec_in_pos[frozen, j] = pos[0, j]
            rec_in_gen[frozen] = 0
        else:
            status = ST_RECORD_OVF
        frozen += 1
        if cf_on != 0 and _in_ball(n2, cf_p, cf_q):
            frozen_cf += 1
        if _region_hit(pos[0], d, n2, tg_kind, tg_p, tg_q, tg_keys):
            ell += 1
        if want_path != 0:
            for j in range(d):
                path_pos[0, j] = pos[0, j]
            path_len = 1
        root_alive = False
    elif fo_kind == RG_SHELL and _in_shell(pos[0], d, n2, fo_p, fo_q):
        nodes += 1
        if frozen_out < cap_out:
            for j in range(d):
                rec_out_pos[frozen_out, j] = pos[0, j]
            rec_out_gen[frozen_out] = 0
        else:
            status = ST_RECORD_OVF
        frozen_out += 1
        root_alive = False
    elif kl_kind == RG_SHELL and _in_shell(pos[0], d, n2, kl_p, kl_q):
        killed += 1
        root_alive = False
    elif kl_kind == RG_BOX:
        for j in range(d):
            if pos[0, j] > kl_p or pos[0, j] < -kl_p:
                killed += 1
                root_alive = False
                break

    depth = 0
    if root_alive and status == ST_COMPLETED:
        nodes += 1
        if _region_hit(pos[0], d, n2, tg_kind, tg_p, tg_q, tg_keys):
            ell += 1
        c0 = np.uint8(0)
        if cf_on != 0 and _in_ball(n2, cf_p, cf_q):
            c0 = np.uint8(1)
            confined += 1
        conf[0] = c0
        if max_gen != 0:
            xi = _draw_cdf(st, off_cdf)
            if xi > 0:
                pend[0] = xi
                depth = 1

    while depth > 0 and status == ST_COMPLETED:
        k = depth - 1
        if pend[k] == 0:
            depth -= 1
            continue
        pend[k] -= 1
        sidx = _draw_cdf(st, step_cdf)
        ax = sidx >> 1
        dlt = np.int64(1) if (sidx & 1) == 0 else np.int64(-1)
        for j in range(d):
            pos[depth, j] = pos[k, j]
        pos[depth, ax] += dlt
        cn2 = n2s[k] + 2 * dlt * pos[k, ax] + 1
        n2s[depth] = cn2
        g = depth
        if g > maxg:
            maxg = g

        if _region_hit(pos[depth], d, cn2, fz_kind, fz_p, fz_q, fz_keys):
            nodes += 1
            if frozen < cap_in:
                for j in range(d):
                    rec_in_pos[frozen, j] = pos[depth, j]
                rec_in_gen[frozen] = g
            else:
                status = ST_RECORD_OVF
                break
            if cf_on != 0 and conf[k] != 0 and _in_ball(cn2, cf_p, cf_q):
                frozen_cf += 1
            if _region_hit(pos[depth], d, cn2, tg_kind, tg_p, tg_q, tg_keys):
                ell += 1
            if frozen == 0 and want_path != 0:
                for gg in range(depth):
                    for j in range(d):
                        path_pos[gg, j] = pos[gg, j]
                for j in range(d):
                    path_pos[depth, j] = pos[depth, j]
                path_len = depth + 1
            frozen += 1
            if nodes >= budget:
                status = ST_BUDGET
            continue
        if fo_kind == RG_SHELL and _in_shell(pos[depth], d, cn2, fo_p, fo_q):
            nodes += 1
            if frozen_out < cap_out:
                for j in range(d):
                    rec_out_pos[frozen_out, j] = pos[depth, j]
                rec_out_gen[frozen_out] = g
            else:
                status = ST_RECORD_OVF
                break
            frozen_out += 1
            if nodes >= budget:
                status = ST_BUDGET
            continue
        if kl_kind == RG_SHELL and _in_shell(pos[depth], d, cn2, kl_p, kl_q):
            killed += 1
            continue
        if kl_kind == RG_BOX and (pos[depth, ax] > kl_p or pos[depth, ax] < -kl_p):
            killed += 1
            continue

        nodes += 1
        if _region_hit(pos[depth], d, cn2, tg_kind, tg_p, tg_q, tg_keys):
            ell += 1
        if cf_on != 0 and conf[k] != 0 and _in_ball(cn2, cf_p, cf_q):
            conf[depth] = np.uint8(1)
            confined += 1
        else:
            conf[depth] = np.uint8(0)
        if nodes >= budget:
            status = ST_BUDGET
            break
        if max_gen <= 0 or g < max_gen:
            xi = _draw_cdf(st, off_cdf)
            if xi > 0:
                if depth + 1 >= pend.shape[0]:
                    status = ST_STACK
                    break
                pend[depth] = xi
                depth += 1

    out[0] = ell
    out[1] = frozen
    out[2] = frozen_cf
    out[3] = confined
    out[4] = nodes
    out[5] = maxg
    out[6] = status
    out[7] = killed
    out[8] = path_len


@njit(cache=True)
def run_gen_norm2(st, d, off_cdf, step_cdf, start,
                  fz_p, fz_q,
                  max_gen, budget,
                  pos, n2s, pend,
                  a_cnt, a_q, f_cnt, f_q, out):
    """Run with freeze shell; per-generation exact-integer accumulators.

    a_cnt[g]/a_q[g]: count and sum of |S_u|^2 over alive vertices at
    generation g (all alive vertices are inside the ball when the start is).
    f_cnt[g]/f_q[g]: same for particles frozen at generation g.
    Arrays are NOT cleared here; caller zeros the used prefix (0..maxgen).
    """
    frozen = np.int64(0); nodes = np.int64(0); maxg = np.int64(0)
    status = ST_COMPLETED
    gcap = a_cnt.shape[0]

    n2 = np.int64(0)
    for j in range(d):
        pos[0, j] = start[j]
        n2 += start[j] * start[j]
    n2s[0] = n2

    depth = 0
    if _in_shell(pos[0], d, n2, fz_p, fz_q):
        nodes += 1
        frozen += 1
        f_cnt[0] += 1
        f_q[0] += n2
    else:
        nodes += 1
        a_cnt[0] += 1
        a_q[0] += n2
        if max_gen != 0:
            xi = _draw_cdf(st, off_cdf)
            if xi > 0:
                pend[0] = xi
                depth = 1

    while depth > 0:
        k = depth - 1
        if pend[k] == 0:
            depth -= 1
            continue
        pend[k] -= 1
        sidx = _draw_cdf(st, step_cdf)
        ax = sidx >> 1
        dlt = np.int64(1) if (sidx & 1) == 0 else np.int64(-1)
        for j in range(d):
            pos[depth, j] = pos[k, j]
        pos[depth, ax] += dlt
        cn2 = n2s[k] + 2 * dlt * pos[k, ax] + 1
        n2s[depth] = cn2
        g = depth
        if g > maxg:
            maxg = g
        if g >= gcap:
            status = ST_GEN_OVF
            break
        nodes += 1
        if _in_shell(pos[depth], d, cn2, fz_p, fz_q):
            frozen += 1
            f_cnt[g] += 1
            f_q[g] += cn2
            continue
        a_cnt[g] += 1
        a_q[g] += cn2
        if nodes >= budget:
            status = ST_BUDGET
            break
        if max_gen <= 0 or g < max_gen:
            xi = _draw_cdf(st, off_cdf)
            if xi > 0:
                if depth + 1 >= pend.shape[0]:
                    status = ST_STACK
                    break
                pend[depth] = xi
                depth += 1

    out[0] = 0
    out[1] = frozen
    out[2] = 0
    out[3] = 0
    out[4] = nodes
    out[5] = maxg
    out[6] = status
    out[7] = 0
    out[8] = 0


@njit(cache=True, parallel=True)
def batch_mart_norm2(seeds, runs_per_rep, d, off_cdf, step_cdf, start,
                     fz_p, fz_q, budget, max_depth, gen_cap,
                     checkpoints, sums, sumsq, counts, bad):
    """Accumulate martingale values M_n at checkpoint generations.

    M_n = sum_{alive at n} |S|^2 + sum_{frozen by n} |S|^2
          - (#alive up to n + #frozen by n).
    sums/sumsq/counts are (n_rep, n_checkpoints); bad[rep] counts runs that
    overflowed a limit (excluded from the averages).
    """
    n_rep = seeds.shape[0]
    ncp = checkpoints.shape[0]
    for rep in prange(n_rep):
        st = seeds[rep].copy()
        pos = np.empty((max_depth, d), dtype=np.int64)
        n2s = np.empty(max_depth, dtype=np.int64)
        pend = np.zeros(max_depth, dtype=np.int64)
        a_cnt = np.zeros(gen_cap, dtype=np.int64)
        a_q = np.zeros(gen_cap, dtype=np.int64)
        f_cnt = np.zeros(gen_cap, dtype=np.int64)
        f_q = np.zeros(gen_cap, dtype=np.int64)
        row = np.empty(N_OUT, dtype=np.int64)
        for i in range(runs_per_rep):
            run_gen_norm2(st, d, off_cdf, step_cdf, start, fz_p, fz_q,
                          -1, budget, pos, n2s, pend,
                          a_cnt, a_q, f_cnt, f_q, row)
            if row[6] != ST_COMPLETED:
                bad[rep] += 1
            else:
                maxg = row[5]
                cumA = np.int64(0)
                cumFq = np.int64(0)
                cumFc = np.int64(0)
                gprev = np.int64(0)
                for ci in range(ncp):
                    n = checkpoints[ci]
                    top = n if n < maxg else maxg
                    for g in range(gprev, top + 1):
                        cumA += a_cnt[g]
                        cumFq += f_q[g]
                        cumFc += f_cnt[g]
                    if top >= gprev:
                        gprev = top + 1
                    aq = a_q[n] if n <= maxg else np.int64(0)
                    m = np.float64(aq + cumFq - cumA - cumFc)
                    sums[rep, ci] += m
                    sumsq[rep, ci] += m * m
                    counts[rep, ci] += 1
            top = row[5] if row[5] < gen_cap - 1 else gen_cap - 1
            for g in range(top + 1):
                a_cnt[g] = 0
                a_q[g] = 0
                f_cnt[g] = 0
                f_q[g] = 0


@njit(cache=True)
def run_gen_green(st, d, off_cdf, step_cdf, start,
                  fi_p, fi_q, fo_p, fo_q,
                  budget, gkeys, gvals,
                  pos, n2s, pend,
                  a_g, fi_g, fo_g, out):
    """Annulus run for the Green-value process: freeze on the inner shell
    (of B_rin) and on the outer shell (of B_rout); accumulate per-generation
    sums of G over alive / inner-frozen / outer-frozen vertices.

    out[8] counts alive-vertex generation updates (for residual bounds);
    missing G-table keys are an error reported through status.
    """
    nodes = np.int64(0); maxg = np.int64(0); status = ST_COMPLETED
    fin = np.int64(0); fout = np.int64(0); visits = np.int64(0)
    gcap = a_g.shape[0]

    n2 = np.int64(0)
    for j in range(d):
        pos[0, j] = start[j]
        n2 += start[j] * start[j]
    n2s[0] = n2

    depth = 0
    # start assumed strictly inside the open annulus
    nodes += 1
    key = _pack_canon(pos[0], d)
    lo = np.searchsorted(gkeys, key)
    if lo >= gkeys.shape[0] or gkeys[lo] != key:
        status = ST_RECORD_OVF
    else:
        a_g[0] += gvals[lo]
        visits += 1
        xi = _draw_cdf(st, off_cdf)
        if xi > 0:
            pend[0] = xi
            depth = 1

    while depth > 0 and status == ST_COMPLETED:
        k = depth - 1
        if pend[k] == 0:
            depth -= 1
            continue
        pend[k] -= 1
        sidx = _draw_cdf(st, step_cdf)
        ax = sidx >> 1
        dlt = np.int64(1) if (sidx & 1) == 0 else np.int64(-1)
        for j in range(d):
            pos[depth, j] = pos[k, j]
        pos[depth, ax] += dlt
        cn2 = n2s[k] + 2 * dlt * pos[k, ax] + 1
        n2s[depth] = cn2
        g = depth
        if g > maxg:
            maxg = g
        if g >= gcap:
            status = ST_GEN_OVF
            break
        nodes += 1
        key = _pack_canon(pos[depth], d)
        lo = np.searchsorted(gkeys, key)
        if lo >= gkeys.shape[0] or gkeys[lo] != key:
            status = ST_RECORD_OVF
            break
        gval = gvals[lo]
        if _in_shell(pos[depth], d, cn2, fi_p, fi_q):
            fin += 1
            fi_g[g] += gval
            continue
        if _in_shell(pos[depth], d, cn2, fo_p, fo_q):
            fout += 1
            fo_g[g] += gval
            continue
        a_g[g] += gval
        visits += 1
        if nodes >= budget:
            status = ST_BUDGET
            break
        xi = _draw_cdf(st, off_cdf)
        if xi > 0:
            if depth + 1 >= pend.shape[0]:
                status = ST_STACK
                break
            pend[depth] = xi
            depth += 1

    out[0] = 0
    out[1] = fin
    out[2] = 0
    out[3] = 0
    out[4] = nodes
    out[5] = maxg
    out[6] = status
    out[7] = fout
    out[8] = visits


@njit(cache=True, parallel=True)
def batch_mart_green(seeds, runs_per_rep, d, off_cdf, step_cdf, start,
                     fi_p, fi_q, fo_p, fo_q, budget, max_depth, gen_cap,
                     gkeys, gvals, checkpoints,
                     sums, sumsq, counts, visit_sums, bad):
    """Green-value martingale at checkpoints: Mt_n = sum_alive(n) G +
    cumulative frozen G sums up to n."""
    n_rep = seeds.shape[0]
    ncp = checkpoints.shape[0]
    for rep in prange(n_rep):
        st = seeds[rep].copy()
        pos = np.empty((max_depth, d), dtype=np.int64)
        n2s = np.empty(max_depth, dtype=np.int64)
        pend = np.zeros(max_depth, dtype=np.int64)
        a_g = np.zeros(gen_cap, dtype=np.float64)
        fi_g = np.zeros(gen_cap, dtype=np.float64)
        fo_g = np.zeros(gen_cap, dtype=np.float64)
        row = np.empty(N_OUT, dtype=np.int64)
        for i in range(runs_per_rep):
            run_gen_green(st, d, off_cdf, step_cdf, start,
                          fi_p, fi_q, fo_p, fo_q, budget, gkeys, gvals,
                          pos, n2s, pend, a_g, fi_g, fo_g, row)
            if row[6] != ST_COMPLETED:
                bad[rep] += 1
            else:
                maxg = row[5]
                cum = 0.0
                gprev = np.int64(0)
                for ci in range(ncp):
                    n = checkpoints[ci]
                    top = n if n < maxg else maxg
                    for g in range(gprev, top + 1):
                        cum += fi_g[g] + fo_g[g]
                    if top >= gprev:
                        gprev = top + 1
                    av = a_g[n] if n <= maxg else 0.0
                    m = av + cum
                    sums[rep, ci] += m
                    sumsq[rep, ci] += m * m
                    counts[rep, ci] += 1
                visit_sums[rep] += row[8]
            top = row[5] if row[5] < gen_cap - 1 else gen_cap - 1
            for g in range(top + 1):
                a_g[g] = 0.0
                fi_g[g] = 0.0
                fo_g[g] = 0.0


@njit(cache=True)
def run_slices(st, d, off_cdf, step_cdf, start, fz_p, fz_q,
               budget, pos, n2s, pend, a_cnt, out):
    """Freeze-on-shell run recording alive counts per generation (slices)."""
    frozen = np.int64(0); nodes = np.int64(0); maxg = np.int64(0)
    status = ST_COMPLETED
    gcap = a_cnt.shape[0]
    n2 = np.int64(0)
    for j in range(d):
        pos[0, j] = start[j]
        n2 += start[j] * start[j]
    n2s[0] = n2
    depth = 0
    if _in_shell(pos[0], d, n2, fz_p, fz_q):
        nodes += 1
        frozen += 1
    else:
        nodes += 1
        a_cnt[0] += 1
        xi = _draw_cdf(st, off_cdf)
        if xi > 0:
            pend[0] = xi
            depth = 1
    while depth > 0:
        k = depth - 1
        if pend[k] == 0:
            depth -= 1
            continue
        pend[k] -= 1
        sidx = _draw_cdf(st, step_cdf)
        ax = sidx >> 1
        dlt = np.int64(1) if (sidx & 1) == 0 else np.int64(-1)
        for j in range(d):
            pos[depth, j] = pos[k, j]
        pos[depth, ax] += dlt
        cn2 = n2s[k] + 2 * dlt * pos[k, ax] + 1
        n2s[depth] = cn2
        g = depth
        if g > maxg:
            maxg = g
        if g >= gcap:
            status = ST_GEN_OVF
            break
        nodes += 1
        if _in_shell(pos[depth], d, cn2, fz_p, fz_q):
            frozen += 1
            continue
        a_cnt[g] += 1
        if nodes >= budget:
            status = ST_BUDGET
            break
        xi = _draw_cdf(st, off_cdf)
        if xi > 0:
            if depth + 1 >= pend.shape[0]:
                status = ST_STACK
                break
            pend[depth] = xi
            depth += 1
    out[0] = 0
    out[1] = frozen
    out[2] = 0
    out[3] = 0
    out[4] = nodes
    out[5] = maxg
    out[6] = status
    out[7] = 0
    out[8] = 0


@njit(cache=True, parallel=True)
def batch_slice_sums(seeds, runs_per_rep, d, off_cdf, step_cdf, start,
                     fz_p, fz_q, budget, max_depth, gen_cap, width,
                     slice_sums, tree_sums, ratio_bad, bad):
    """Sum slice totals Upsilon_j (j < width) over runs, per replica."""
    n_rep = seeds.shape[0]
    for rep in prange(n_rep):
        st = seeds[rep].copy()
        pos = np.empty((max_depth, d), dtype=np.int64)
        n2s = np.empty(max_depth, dtype=np.int64)
        pend = np.zeros(max_depth, dtype=np.int64)
        a_cnt = np.zeros(gen_cap, dtype=np.int64)
        row = np.empty(N_OUT, dtype=np.int64)
        for i in range(runs_per_rep):
            run_slices(st, d, off_cdf, step_cdf, start, fz_p, fz_q,
                       budget, pos, n2s, pend, a_cnt, row)
            if row[6] != ST_COMPLETED:
                bad[rep] += 1
            else:
                maxg = row[5]
                tot = np.int64(0)
                for g in range(maxg + 1):
                    slice_sums[rep, g % width] += a_cnt[g]
                    tot += a_cnt[g]
                tree_sums[rep] += tot
            top = row[5] if row[5] < gen_cap - 1 else gen_cap - 1
            for g in range(top + 1):
                a_cnt[g] = 0


@njit(cache=True)
def bgw_survival_runs(seeds, runs_per_rep, off_cdf, n_gen, out_alive):
    """Survival of the plain branching process to generation n_gen (no space).

    Depth-first with generation-capped expansion; early exit at the first
    vertex reaching generation n_gen.
    """
    n_rep = seeds.shape[0]
    for rep in range(n_rep):
        st = seeds[rep].copy()
        pend = np.zeros(n_gen + 1, dtype=np.int64)
        for i in range(runs_per_rep):
            alive = False
            xi = _draw_cdf(st, off_cdf)
            depth = 0
            if n_gen == 0:
                alive = True
            elif xi > 0:
                pend[0] = xi
                depth = 1
            while depth > 0:
                k = depth - 1
                if pend[k] == 0:
                    depth -= 1
                    continue
                pend[k] -= 1
                g = depth
                if g >= n_gen:
                    alive = True
                    # drain the stack
                    for j in range(depth):
                        pend[j] = 0
                    break
                xi = _draw_cdf(st, off_cdf)
                if xi > 0:
                    pend[depth] = xi
                    depth += 1
            out_alive[rep * runs_per_rep + i] = 1 if alive else 0


@njit(cache=True)
def srw_hit_mc(seed, x, p, q, give_up_L, n_walks):
    """Uniform-walk hits of the shell of B_r before leaving [-L, L]^d."""
    d = x.shape[0]
    st = np.empty(2, dtype=np.uint64)
    st[0] = np.uint64(seed)
    st[1] = np.uint64(seed * 2 + 1)
    _pcg32(st)
    hits = 0
    z = np.empty(d, dtype=np.int64)
    for w in range(n_walks):
        for j in range(d):
            z[j] = x[j]
        n2 = np.int64(0)
        for j in range(d):
            n2 += z[j] * z[j]
        while True:
            if _in_shell(z, d, n2, p, q):
                hits += 1
                break
            stop = False
            for j in range(d):
                if z[j] > give_up_L or z[j] < -give_up_L:
                    stop = True
                    break
            if stop:
                break
            k = _pcg32(st) % uint32(2 * d)
            ax = k >> 1
            dlt = np.int64(1) if (k & 1) == 0 else np.int64(-1)
            n2 += 2 * dlt * z[ax] + 1
            z[ax] += dlt
    return hits


# ---------------------------------------------------------------------------
# Fixed-point sweeps for the potential solvers (Jacobi, double-buffered)
# ---------------------------------------------------------------------------

LAW_POLY = 0
LAW_GEOMETRIC = 1
LAW_POISSON1 = 2


@njit(inline="always")
def _pgf_val(s, pmf, law_kind):
    if law_kind == LAW_GEOMETRIC:
        return 1.0 / (2.0 - s)
    if law_kind == LAW_POISSON1:
        return np.exp(s - 1.0)
    # Horner
    v = 0.0
    for k in range(pmf.shape[0] - 1, -1, -1):
        v = v * s + pmf[k]
    return v


@njit(cache=True)
def sweep_avoidance(q, qn, nbr, w, lam, pmf, law_kind, max_sweeps, tol):
    """Iterate q <- 1{off lam} * f(sum_j w_j q(nbr_j)) to its fixed point.

    q has length n+1; the sentinel q[n] holds the boundary condition and is
    never written.  Returns (sweeps_done, last sup-norm step).
    """
    n = nbr.shape[0]
    m = nbr.shape[1]
    delta = 0.0
    for it in range(max_sweeps):
        delta = 0.0
        for i in range(n):
            if lam[i]:
                v = 0.0
            else:
                s = 0.0
                for j in range(m):
                    s += w[j] * q[nbr[i, j]]
                v = _pgf_val(s, pmf, law_kind)
            dd = v - q[i]
            if dd < 0.0:
                dd = -dd
            if dd > delta:
                delta = dd
            qn[i] = v
        for i in range(n):
            q[i] = qn[i]
        if delta < tol:
            return it + 1, delta
    return max_sweeps, delta


@njit(cache=True)
def sweep_linear_kill(h, hn, nbr, w, lam, kill, max_sweeps, tol):
    """Iterate h <- 1 on lam; (1-kill) * sum_j w_j h(nbr_j) off lam."""
    n = nbr.shape[0]
    m = nbr.shape[1]
    delta = 0.0
    for it in range(max_sweeps):
        delta = 0.0
        for i in range(n):
            if lam[i]:
                v = 1.0
            else:
                s = 0.0
                for j in range(m):
                    s += w[j] * h[nbr[i, j]]
                v = (1.0 - kill[i]) * s
            dd = v - h[i]
            if dd < 0.0:
                dd = -dd
            if dd > delta:
                delta = dd
            hn[i] = v
        for i in range(n):
            h[i] = hn[i]
        if delta < tol:
            return it + 1, delta
    return max_sweeps, delta


@njit(cache=True)
def neighbor_average(q, nbr, w, out):
    """out[i] = sum_j w_j q(nbr_j); sentinel value read from q[n]."""
    n = nbr.shape[0]
    m = nbr.shape[1]
    for i in range(n):
        s = 0.0
        for j in range(m):
            s += w[j] * q[nbr[i, j]]
        out[i] = s


def make_streams(master_seed: int, n: int) -> np.ndarray:
    """(n, 2) uint64 PCG32 states/increments derived from (seed, replica)."""
    ss = np.random.SeedSequence(master_seed)
    words = ss.generate_state(2 * n, dtype=np.uint64).reshape(n, 2)
    words[:, 1] |= np.uint64(1)
    return words
