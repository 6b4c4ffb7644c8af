"""Experiment runner: named scenarios, reproducible configs, persisted
results, machine-readable verdicts.

Usage:
    critbrw <scenario> [--config FILE] [--seed N] [--replicas K] [--out DIR]
    critbrw list

Configs are flat structured text ([section] / key = value, values in Python
literal syntax); every run writes a manifest (config hash, inputs, wall
clock, verdicts), per-cell JSONL/CSV results, and a verdict JSON.  The exit
code is nonzero iff any hard verdict fails.  Re-running a scenario with the
same config and seed reproduces every number exactly.

Run-record JSONL schema (version run-record/v1): one object per run with
keys status, ell, frozen, confined, nodes, max_generation.
"""

from __future__ import annotations

import argparse
import ast
import configparser
import csv
import hashlib
import io
import json
import math
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import __version__, lattice, martingale, model, oracle, potential, spine, stats
from .engine import (DEFAULT_REPLICAS, SimSpec, run_batch, run_wave_chain,
                     slice_mean_profile, survival_mc)

# ---------------------------------------------------------------------------
# Config plumbing
# ---------------------------------------------------------------------------

def parse_config(text: str) -> dict:
    """Flat structured text: [section] headers and key = value lines, values
    in Python literal syntax (numbers, strings, lists, dicts)."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp.read_string("[__root__]\n" + text)
    out = {}
    for section in cp.sections():
        tgt = out if section == "__root__" else out.setdefault(section, {})
        for key, raw in cp.items(section):
            try:
                tgt[key] = ast.literal_eval(raw)
            except (ValueError, SyntaxError):
                tgt[key] = raw
    return out


def dump_config(cfg: dict) -> str:
    buf = io.StringIO()
    flat = {k: v for k, v in cfg.items() if not isinstance(v, dict)}
    for k in sorted(flat):
        buf.write("%s = %r\n" % (k, flat[k]))
    for section in sorted(k for k, v in cfg.items() if isinstance(v, dict)):
        buf.write("\n[%s]\n" % section)
        for k in sorted(cfg[section]):
            buf.write("%s = %r\n" % (k, cfg[section][k]))
    return buf.getvalue()


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _laws(cfg):
    off = model.offspring_from_name(cfg.get("offspring", "geometric"))
    stp = model.step_from_name(cfg.get("step", "uniform"), cfg["d"])
    return off, stp


def _write_jsonl(path, records):
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


@dataclass
class ScenarioResult:
    verdicts: dict
    metrics: dict
    files: list


# ---------------------------------------------------------------------------
# Tail machinery shared by several scenarios
# ---------------------------------------------------------------------------

_CG_CACHE = {}
_VISIT_DENOM_CACHE = {}


def visit_bound(dim: int, r: float, dist: float) -> float:
    """Upper bound on the probability that a BRW started at distance ``dist``
    ever visits B_r.  The expected ball time from that distance is
    sum_{y in B_r} G(z-y); dividing by the smallest expected ball time over
    shell entry points gives a hitting-probability bound (a hit forces at
    least one entry-point subtree's worth of visits).  A 1.5 safety factor
    covers the fitted Green constant.  Used as the truncation-bias allowance
    when lineages are killed at distance ``dist``.
    """
    if dim <= 2:
        return 1.0
    if dim not in _CG_CACHE:
        gt = lattice.green_table(dim, 16)
        _CG_CACHE[dim] = gt
    gt = _CG_CACHE[dim]
    key = (dim, str(r))
    if key not in _VISIT_DENOM_CACHE:
        ball = lattice.BallSpec(max(r, 1), dim)
        pts = ball.lattice_points()
        denom = float("inf")
        for z in ball.boundary_points():
            s = sum(gt.lower[gt.wedge.idx(tuple(a - b for a, b in zip(y, z)))]
                    for y in pts)
            denom = min(denom, s)
        _VISIT_DENOM_CACHE[key] = (len(pts), max(denom, 1.0))
    vol, denom = _VISIT_DENOM_CACHE[key]
    num = 1.5 * vol * gt.fit_c * max(dist - float(r), 1.0) ** (2 - dim)
    return min(1.0, num / denom)


def tail_grid(cfg, seed, replicas):
    """One shared batch per (d, r): every u cell is evaluated on the same
    runs (early exit at the largest threshold keeps the event exact)."""
    d, r = cfg["d"], cfg["r"]
    off, stp = _laws(cfg)
    u_grid = list(cfg["u_grid"])
    r4 = float(r) ** 4
    ts = [int(round(u * r4)) for u in u_grid]
    t_max = max(ts)
    kill_factor = cfg.get("kill_factor", 0)
    kill = int(kill_factor * r) if kill_factor else None
    bias = visit_bound(d, r, kill) if kill else 0.0
    spec = SimSpec(dim=d, offspring=off, step=stp, target_ball=r,
                   kill_shell=kill, early_exit_ell=t_max,
                   node_budget=int(cfg.get("budget", 10 ** 8)))
    batch = run_batch(spec, int(cfg["samples"]), seed, replicas)
    und = batch.undecided
    cells = []
    for u, t in zip(u_grid, ts):
        est = stats.tail_probability(batch.ell, und, t, bias_allowance=bias)
        cells.append((u, t, est))
    return cells, batch, bias


def _cells_rows(cells):
    rows = []
    for u, t, e in cells:
        rows.append([u, t, e.successes, e.trials, e.undecided,
                     "%.8g" % e.p_hat, "%.8g" % e.lo, "%.8g" % e.hi,
                     "%.3g" % e.bias_allowance])
    return rows


CELL_HEADER = ["u", "t", "successes", "trials", "undecided", "p_hat", "lo", "hi", "bias"]


def scenario_tail(cfg, out, seed, replicas):
    """Tail of the time spent in the ball, all dimension regimes."""
    d = cfg["d"]
    cells, batch, bias = tail_grid(cfg, seed, replicas)
    files = []
    path = os.path.join(out, "tail_cells_d%d_r%s.csv" % (d, cfg["r"]))
    _write_csv(path, CELL_HEADER, _cells_rows(cells))
    files.append(path)
    verdicts = {}
    metrics = {"bias_allowance": bias,
               "undecided_fraction": float(batch.undecided.mean()),
               "nodes_total": int(batch.nodes.sum())}
    pts_u = [(u, e) for u, t, e in cells]
    pts_t = [(t, e) for u, t, e in cells]
    if d >= 5:
        fit = stats.fit_exponent(pts_u, "log-linear-in-u",
                                 min_points=4, drop_wide=True)
        metrics["r2_linear_in_u"] = fit.r2
        metrics["decay_rate_per_u"] = -fit.slope
        verdicts["tail_linear_in_u_r2"] = fit.r2 >= 0.98
    elif d == 4:
        usable = [(u, e) for u, e in pts_u if e.width_factor <= 2.0]
        if len(usable) < len(pts_u):
            metrics["dropped_cells"] = len(pts_u) - len(usable)
        cmpres = stats.compare_d4_designs(usable)
        metrics["r2_u"] = cmpres.r2_linear
        metrics["r2_sqrt_u"] = cmpres.r2_sqrt
        metrics["delta_r2"] = cmpres.delta_r2
        verdicts["tail_prefers_sqrt_u"] = (cmpres.preferred == "sqrt-u"
                                           and cmpres.delta_r2 > 0.01)
    else:
        slope_targets = {1: (-2.0 / 3.0, 0.15), 2: (-1.0, 0.15), 3: (-2.0, 0.3)}
        fit = stats.fit_exponent(pts_t, "log-log",
                                 min_points=min(5, len(pts_t)), drop_wide=True)
        target, tol = slope_targets[d]
        metrics["slope"] = fit.slope
        metrics["slope_se"] = fit.slope_se
        metrics["slope_target"] = target
        verdicts["tail_exponent_d%d" % d] = abs(fit.slope - target) <= tol
    return ScenarioResult(verdicts, metrics, files)


def scenario_short_time(cfg, out, seed, replicas):
    """Sub-ball-scale regime: P(ell > t) ~ t^{-1/2} for t << r^4."""
    d, r = cfg["d"], cfg["r"]
    off, stp = _laws(cfg)
    ts = [int(t) for t in cfg["t_grid"]]
    spec = SimSpec(dim=d, offspring=off, step=stp, target_ball=r,
                   early_exit_ell=max(ts), node_budget=int(cfg.get("budget", 10 ** 6)))
    batch = run_batch(spec, int(cfg["samples"]), seed, replicas)
    cells = [(t, t, stats.tail_probability(batch.ell, batch.undecided, t))
             for t in ts]
    path = os.path.join(out, "short_time_cells.csv")
    _write_csv(path, CELL_HEADER, _cells_rows([(t, t, e) for t, _, e in cells]))
    fit = stats.fit_exponent([(t, e) for t, _, e in cells], "log-log",
                             min_points=min(5, len(ts)), drop_wide=True)
    verdicts = {"short_time_exponent": abs(fit.slope + 0.5) <= 0.1}
    metrics = {"slope": fit.slope, "slope_se": fit.slope_se,
               "undecided_fraction": float(batch.undecided.mean())}
    return ScenarioResult(verdicts, metrics, [path])


def scenario_low_dim(cfg, out, seed, replicas):
    """Growth exponents of single-site local-time moments in low dimension."""
    rows = []
    verdicts = {}
    metrics = {}
    for item in cfg["checks"]:
        d, order, tol = item["d"], item["order"], item.get("tol", 0.25)
        rep = stats.local_time_moment_check(d, order, item["n_grid"],
                                            int(item["samples"]),
                                            master_seed=seed + 101 * d + order,
                                            tolerance=tol)
        key = "moment_rate_d%d_k%d" % (d, order)
        verdicts[key] = rep.holds
        metrics[key] = {"slope": rep.slope, "expected": rep.expected}
        for n, m, s in zip(rep.ns, rep.moments, rep.ses):
            rows.append([d, order, int(n), "%.8g" % m, "%.3g" % s])
    path = os.path.join(out, "low_dim_moments.csv")
    _write_csv(path, ["d", "order", "n", "moment", "se"], rows)
    return ScenarioResult(verdicts, metrics, [path])


def _frozen_samples(cfg, seed, replicas, start, kill=None):
    off, stp = _laws(cfg)
    spec = SimSpec(dim=cfg["d"], offspring=off, step=stp, start=start,
                   freeze_shell=cfg["r"], kill_shell=kill,
                   node_budget=int(cfg.get("budget", 10 ** 7)))
    batch = run_batch(spec, int(cfg["samples"]), seed, replicas)
    return batch


def scenario_inside_moments(cfg, out, seed, replicas):
    """Exponential moments of the frozen count from inside the ball."""
    r = cfg["r"]
    lam_grid = cfg.get("lambda_grid", [0.05, 0.1, 0.2])
    rows = []
    verdicts = {}
    metrics = {"per_r": {}}
    log_at_ref = {}
    for i, rr in enumerate(r if isinstance(r, list) else [r]):
        c2 = dict(cfg)
        c2["r"] = rr
        scale = float(rr) ** 2
        batch = _frozen_samples(c2, seed + i, replicas, (0,) * cfg["d"])
        eta = batch.frozen[~batch.undecided].astype(float)
        for lam in lam_grid:
            est = stats.empirical_exp_moment(eta, lam, scale)
            cond = stats.empirical_exp_moment(eta, lam, scale, conditional=True)
            rows.append([rr, lam, est.n, "%.8g" % est.estimate,
                         "%.3g" % est.log_se, est.unstable,
                         "%.8g" % cond.estimate, "%.4g" % cond.conditional_p])
            if lam == lam_grid[0]:
                log_at_ref[rr] = est.log_estimate * scale / lam
        mean_eta, se_eta = stats.mean_se(eta)
        metrics["per_r"][str(rr)] = {"mean_frozen": mean_eta, "se": se_eta}
        # from inside, the frozen count has expectation exactly one
        verdicts["frozen_mean_unit_r%s" % rr] = abs(mean_eta - 1.0) <= 3 * se_eta
    path = os.path.join(out, "inside_moments.csv")
    _write_csv(path, ["r", "lambda", "n", "estimate", "log_se", "unstable",
                      "conditional", "p_positive"], rows)
    if len(log_at_ref) >= 2:
        # scaled log-moments should be r-stable: ratio within a factor 2
        vals = list(log_at_ref.values())
        ratio = max(vals) / min(vals)
        metrics["scaled_log_moment_ratio"] = ratio
        verdicts["inside_moment_scaling"] = ratio < 2.0
    return ScenarioResult(verdicts, metrics, [path])


def _contraction(cfg, seed, replicas, scale, kill):
    d, r = cfg["d"], cfg["r"]
    start = (2 * int(r),) + (0,) * (d - 1)
    batch = _frozen_samples(cfg, seed, replicas, start, kill=kill)
    eta = batch.frozen_confined[~batch.undecided].astype(float) \
        if kill is None else batch.frozen[~batch.undecided].astype(float)
    lam = cfg.get("lambda", 0.1)
    est = stats.empirical_exp_moment(eta, lam, scale)
    stat = est.log_estimate * scale / lam
    lo, hi = est.log_ci(3.0)
    return est, stat, (lo * scale / lam, hi * scale / lam)


def scenario_outside_d5(cfg, out, seed, replicas):
    """Contraction of the scaled frozen count from the doubled shell, d>=5."""
    r = cfg["r"]
    kill = int(cfg.get("kill_factor", 16) * r)
    est, stat, ci = _contraction(cfg, seed, replicas, float(r) ** 2, kill)
    bias = visit_bound(cfg["d"], r, kill)
    verdicts = {"outside_contraction": stat < 1.0 and ci[1] < 1.0}
    metrics = {"statistic": stat, "ci": list(ci), "estimate": est.estimate,
               "unstable": est.unstable, "truncation_bias_bound": bias}
    path = os.path.join(out, "outside_d5.json")
    with open(path, "w") as fh:
        json.dump({"metrics": metrics, "verdicts": verdicts}, fh, indent=1, sort_keys=True)
    return ScenarioResult(verdicts, metrics, [path])


def scenario_outside_d4(cfg, out, seed, replicas):
    """d=4 contraction with the definitional distance truncation at R."""
    r = cfg["r"]
    R = int(cfg.get("R_factor", 8) * r)
    scale = float(r) ** 2 * math.log(R / float(r))
    est, stat, ci = _contraction(cfg, seed, replicas, scale, kill=R)
    verdicts = {"outside_contraction_truncated": stat < 1.0 and ci[1] < 1.0}
    metrics = {"statistic": stat, "ci": list(ci), "estimate": est.estimate,
               "unstable": est.unstable, "R": R}
    path = os.path.join(out, "outside_d4.json")
    with open(path, "w") as fh:
        json.dump({"metrics": metrics, "verdicts": verdicts}, fh, indent=1, sort_keys=True)
    return ScenarioResult(verdicts, metrics, [path])


def scenario_localized_tree(cfg, out, seed, replicas):
    """Exponential decay of the confined-tree size at scale r^4."""
    d, r = cfg["d"], cfg["r"]
    off, stp = _laws(cfg)
    r4 = float(r) ** 4
    u_grid = list(cfg.get("u_grid", [0.5, 1, 2, 3, 4]))
    spec = SimSpec(dim=d, offspring=off, step=stp, freeze_shell=r,
                   node_budget=int(cfg.get("budget", 10 ** 7)))
    batch = run_batch(spec, int(cfg["samples"]), seed, replicas)
    sizes = (batch.nodes - batch.frozen).astype(np.int64)
    cells = []
    for u in u_grid:
        t = int(round(u * r4))
        cells.append((u, t, stats.tail_probability(sizes, batch.undecided, t)))
    path = os.path.join(out, "localized_tree.csv")
    _write_csv(path, CELL_HEADER, _cells_rows(cells))
    fit = stats.fit_exponent([(u, e) for u, t, e in cells], "log-linear-in-u",
                             min_points=3, drop_wide=True)
    lam = cfg.get("lambda", 0.1)
    est = stats.empirical_exp_moment(sizes[~batch.undecided].astype(float), lam, r4)
    verdicts = {"confined_size_exponential_tail": fit.r2 >= 0.95}
    metrics = {"r2": fit.r2, "decay_rate_per_u": -fit.slope,
               "scaled_log_moment": est.log_estimate * float(r) ** 2 / lam,
               "unstable": est.unstable}
    return ScenarioResult(verdicts, metrics, [path])


def scenario_martingale(cfg, out, seed, replicas):
    """Drift nullity of both martingales at the configured checkpoints."""
    d, r = cfg["d"], cfg["r"]
    off, stp = _laws(cfg)
    cps = cfg.get("checkpoints", [10, 100])
    dc = martingale.norm2_drift_check(d, off, stp, (0,) * d, r, cps,
                                      int(cfg["samples"]), seed, replicas)
    verdicts = {"norm2_drift_null": dc.holds(3.0)}
    metrics = {"norm2": {"checkpoints": [int(c) for c in dc.checkpoints],
                         "means": list(map(float, dc.means)),
                         "ses": list(map(float, dc.ses)), "m0": dc.m0}}
    records = [{"kind": "norm2", "n": int(n), "mean": float(m), "se": float(s),
                "runs": dc.n_runs} for n, m, s in zip(dc.checkpoints, dc.means, dc.ses)]
    gcfg = cfg.get("green")
    if gcfg:
        gt = lattice.green_table(gcfg["d"], gcfg["L"])
        start = tuple(gcfg["start"])
        gd = martingale.green_drift_check(gcfg["d"], off,
                                          model.uniform_step(gcfg["d"]), start,
                                          gcfg["r_in"], gcfg["r_out"], gt,
                                          gcfg.get("checkpoints", [1, 5, 20]),
                                          int(gcfg["samples"]), seed + 1, replicas)
        verdicts["green_drift_null"] = gd.holds(3.0)
        metrics["green"] = {"m0": gd.m0, "means": list(map(float, gd.means)),
                            "ses": list(map(float, gd.ses)),
                            "residual_term": gd.residual_term}
        records += [{"kind": "green", "n": int(n), "mean": float(m), "se": float(s),
                     "runs": gd.n_runs} for n, m, s in zip(gd.checkpoints, gd.means, gd.ses)]
    path = os.path.join(out, "martingale_traces.jsonl")
    _write_jsonl(path, records)
    return ScenarioResult(verdicts, metrics, [path])


def scenario_waves(cfg, out, seed, replicas):
    """Wave decomposition between two shells: per-wave populations, the
    first-wave frozen-count identity, and the local-time lower bound."""
    d, r = cfg["d"], cfg["r"]
    off, stp = _laws(cfg)
    rng = np.random.default_rng(seed)
    inner, outer = cfg.get("inner", r), cfg.get("outer", 2 * r)
    n_start = int(cfg.get("start_particles", 2000))
    # identity check needs a fixed start: take an axis point of the shell
    x0 = max(lattice.BallSpec(outer, d).boundary_points())
    frozen_first = []
    for i in range(n_start):
        recs = run_wave_chain(d, off, stp, inner, outer,
                              np.asarray(x0), rng, max_waves=1,
                              node_budget=int(cfg.get("budget", 10 ** 6)))
        frozen_first.append(recs[0].frozen_total)
    frozen_first = np.asarray(frozen_first, float)
    mean_f, se_f = stats.mean_se(frozen_first)
    hit = lattice.srw_hit_prob(x0, inner, d,
                               half_width=int(cfg.get("hit_box", 4 * outer)))
    ident_ok = (hit.lo - 3 * se_f) <= mean_f <= (hit.hi + 3 * se_f)
    # multi-wave chain from the origin between the half shell and the shell
    chain_rows = []
    lsum_mean = []
    n_chains = int(cfg.get("chains", 200))
    for i in range(n_chains):
        recs = run_wave_chain(d, off, stp, cfg.get("chain_inner", max(1, r // 2)),
                              r, np.zeros(d, dtype=np.int64), rng,
                              max_waves=int(cfg.get("max_waves", 12)),
                              target_ball=r,
                              node_budget=int(cfg.get("budget", 10 ** 6)))
        total = 0
        for rec in recs:
            chain_rows.append([i, rec.index, rec.direction, rec.n_start,
                               rec.frozen_total, rec.time_in_target,
                               rec.confined_size])
            if rec.direction == "outward":
                # outward runs are frozen on the shell of B_r, so their alive
                # size is time spent in B_r by disjoint pieces of one tree
                total += rec.confined_size
        lsum_mean.append(total)
    off2, stp2 = _laws(cfg)
    free = run_batch(SimSpec(dim=d, offspring=off2, step=stp2, target_ball=r,
                             kill_shell=8 * r, node_budget=10 ** 7),
                     max(4 * n_chains, 2000), seed + 9, replicas)
    ell_mean, ell_se = stats.mean_se(free.ell.astype(float))
    ls_mean, ls_se = stats.mean_se(np.asarray(lsum_mean, float))
    path = os.path.join(out, "waves.csv")
    _write_csv(path, ["chain", "wave", "direction", "n_start", "frozen",
                      "time_in_target", "confined_size"], chain_rows)
    verdicts = {"first_wave_identity": bool(ident_ok),
                "wave_sum_below_total_time": ls_mean <= ell_mean + 3 * (ls_se + ell_se)}
    metrics = {"mean_first_wave": mean_f, "se": se_f,
               "hit_bracket": [hit.lo, hit.hi],
               "mean_wave_time_sum": ls_mean, "mean_free_time": ell_mean}
    return ScenarioResult(verdicts, metrics, [path])


def scenario_slices(cfg, out, seed, replicas):
    """Generation-slice balance diagnostic for the confined tree."""
    d, r = cfg["d"], cfg["r"]
    off, stp = _laws(cfg)
    width = int(cfg.get("width", int(float(r) ** 2)))
    spec = SimSpec(dim=d, offspring=off, step=stp, freeze_shell=r,
                   node_budget=int(cfg.get("budget", 10 ** 7)))
    means, tree_mean, bad, total = slice_mean_profile(spec, int(cfg["samples"]),
                                                      seed, width, replicas)
    ratio = float(means.max() / max(means.min(), 1e-300))
    path = os.path.join(out, "slices.csv")
    _write_csv(path, ["slice", "mean"], [[j, "%.8g" % m] for j, m in enumerate(means)])
    verdicts = {"slice_balance": ratio <= 3.0}
    metrics = {"max_min_ratio": ratio, "mean_tree_size": tree_mean,
               "sum_check": float(means.sum()), "bad_runs": bad}
    return ScenarioResult(verdicts, metrics, [path])


def scenario_spine_check(cfg, out, seed, replicas):
    """Entry-path equivalence: direct conditioned simulation vs the biased
    construction, path-weight identity, and sampler kernel checks."""
    d, r = cfg["d"], cfg["r"]
    off, stp = _laws(cfg)
    L = int(cfg.get("box", 12 * int(r)))
    sys = potential.build_spine_system(d, ("shell", r), L, off, stp)
    x = tuple(cfg.get("start", (2 * int(r),) + (0,) * (d - 1)))
    rng = np.random.default_rng(seed)
    n = int(cfg.get("samples", 10 ** 4))
    direct = np.empty(n, dtype=np.int64)
    dpaths = []
    for i in range(n):
        dc = spine.conditioned_entry_path_direct(sys, ("shell", r), x, rng)
        direct[i] = dc.frozen_count
        dpaths.append(tuple(dc.path.points))
    built = np.empty(n, dtype=np.int64)
    for i in range(n):
        p = spine.sample_spine(sys, x, rng)
        built[i] = spine.build_gamma_biased(sys, ("shell", r), p, rng).frozen_total
    ts = stats.two_sample_equal(direct, built, seed=seed)
    # path-weight identity on the most frequent short paths
    from collections import Counter
    freq = Counter(dpaths)
    path_rows = []
    ok_paths = 0
    n_paths = int(cfg.get("paths_to_check", 5))
    for pth, count in freq.most_common(n_paths):
        w = sys.path_weight(list(pth))
        lo, hi = stats.clopper_pearson(count, n, conf=0.997)
        # frequencies are conditional on the hit; weights are unconditional
        hit_p = sys.reach_at(x)
        ok = lo * hit_p <= w <= hi * hit_p
        ok_paths += ok
        path_rows.append([repr(pth), count, "%.6g" % (w / hit_p),
                          "%.6g" % (count / n), ok])
    pj = os.path.join(out, "spine_paths.csv")
    _write_csv(pj, ["path", "count", "predicted_freq", "observed_freq", "ok"], path_rows)
    rec = os.path.join(out, "spine_samples.jsonl")
    _write_jsonl(rec, [{"direct": int(a), "built": int(b)}
                       for a, b in zip(direct[:2000], built[:2000])])
    verdicts = {"two_sample_equivalence": ts.passed,
                "path_weight_identity": ok_paths == len(path_rows)}
    metrics = {"ks_p": ts.ks_p, "chi2_p": ts.chi2_p,
               "mean_direct": float(direct.mean()), "mean_built": float(built.mean()),
               "hit_probability": sys.reach_at(x)}
    return ScenarioResult(verdicts, metrics, [pj, rec])


def scenario_many_spines(cfg, out, seed, replicas):
    """Qualitative cascade of conditioned paths across dyadic shells: spines
    spawn biased side trees; side trees that hit the inner shell contribute
    new spines.  Reports per-shell spine-induced hit counts."""
    d, r = cfg["d"], cfg["r"]
    off, stp = _laws(cfg)
    n_shells = int(cfg.get("shells", 3))
    R = int(r * 2 ** n_shells)
    L = int(cfg.get("box", 3 * R))
    target = ("shell", max(1, int(r) // 2))
    sys = potential.build_spine_system(d, target, L, off, stp)
    rng = np.random.default_rng(seed)
    x = (R,) + (0,) * (d - 1)
    records = []
    spines = [spine.sample_spine(sys, x, rng)]
    total_hits = 0
    for gen in range(int(cfg.get("max_spines", 8))):
        if gen >= len(spines):
            break
        sp = spines[gen]
        hits_per_shell = {}
        for i, z in enumerate(sp.points[:-1]):
            pmf = sys.biased_pmf(z)
            m = int(np.searchsorted(np.cumsum(pmf), rng.random(), side="right"))
            shell_idx = max(0, int(math.floor(math.log2(max(np.linalg.norm(z), 1) / float(r))))) \
                if np.linalg.norm(z) >= r else -1
            for _ in range(m):
                e = stp.vectors()[int(np.searchsorted(stp.cdf_table(), rng.random(), side="right"))]
                child = tuple(int(a) + int(b) for a, b in zip(z, e))
                oc = spine_run_side(sys, target, child, rng)
                if oc.frozen_count > 0:
                    hits_per_shell[shell_idx] = hits_per_shell.get(shell_idx, 0) + 1
                    total_hits += oc.frozen_count
                    if len(spines) < int(cfg.get("max_spines", 8)) and oc.entry_path:
                        spines.append(spine.SpinePath(list(oc.entry_path), True))
        records.append({"spine": gen, "length": sp.steps,
                        "hits_per_shell": {str(k): v for k, v in sorted(hits_per_shell.items())}})
    path = os.path.join(out, "many_spines.jsonl")
    _write_jsonl(path, records)
    verdicts = {"cascade_produced_spines": len(spines) > 1}
    metrics = {"n_spines": len(spines), "total_inner_hits": total_hits}
    return ScenarioResult(verdicts, metrics, [path])


def spine_run_side(sys, target_descr, child, rng):
    from .engine import run
    from .spine import _freeze_kwargs
    fz = _freeze_kwargs(sys, target_descr)
    spec = SimSpec(dim=sys.graph.dim, offspring=sys.offspring, step=sys.step,
                   start=child, kill_box=sys.graph.half_width,
                   node_budget=10 ** 6, **fz)
    return run(spec, rng, record_frozen=True, record_path=True)


def scenario_hitting_scan(cfg, out, seed, replicas):
    """Reach-probability scalings: inside start over r; outside start over
    distance at fixed r."""
    rows = []
    verdicts = {}
    metrics = {}
    ins = cfg.get("inside")
    if ins:
        d = ins["d"]
        cells = []
        for i, r in enumerate(ins["r_grid"]):
            spec = SimSpec(dim=d, offspring=model.offspring_from_name(cfg.get("offspring", "geometric")),
                           step=model.uniform_step(d), freeze_shell=r,
                           early_exit_frozen=1, node_budget=int(ins.get("budget", 10 ** 7)))
            batch = run_batch(spec, int(ins["samples"]), seed + i, replicas)
            est = stats.tail_probability((batch.frozen > 0).astype(np.int64),
                                         batch.undecided, 0)
            cells.append((r, est))
            rows.append(["inside", d, r, 0, est.successes, est.trials,
                         "%.8g" % est.p_hat, "%.3g" % est.lo, "%.3g" % est.hi])
        fit = stats.fit_exponent(cells, "log-log", min_points=3, drop_wide=True)
        metrics["inside_slope"] = fit.slope
        verdicts["inside_hit_scaling"] = abs(fit.slope + 2.0) <= 0.2
    outs = cfg.get("outside")
    if outs:
        d, r = outs["d"], outs["r"]
        kill_f = outs.get("kill_factor", 0)
        budgets = outs.get("budgets")
        cells = []
        for i, dist in enumerate(outs["x_grid"]):
            start = (int(dist),) + (0,) * (d - 1)
            kill = int(kill_f * dist) if kill_f else None
            budget = int(budgets[i]) if budgets else int(outs.get("budget", 10 ** 7))
            spec = SimSpec(dim=d, offspring=model.offspring_from_name(cfg.get("offspring", "geometric")),
                           step=model.uniform_step(d), start=start, freeze_shell=r,
                           kill_shell=kill, early_exit_frozen=1,
                           node_budget=budget)
            batch = run_batch(spec, int(outs["samples"]), seed + 31 + i, replicas)
            bias = visit_bound(d, r, kill) if kill else 0.0
            est = stats.tail_probability((batch.frozen > 0).astype(np.int64),
                                         batch.undecided, 0, bias_allowance=bias)
            cells.append((dist, est))
            rows.append(["outside", d, r, dist, est.successes, est.trials,
                         "%.8g" % est.p_hat, "%.3g" % est.lo, "%.3g" % est.hi])
        fit = stats.fit_exponent(cells, "log-log", min_points=3, drop_wide=True)
        metrics["outside_slope"] = fit.slope
        target = -(d - 2.0)
        verdicts["outside_hit_scaling"] = abs(fit.slope - target) <= 0.3
    path = os.path.join(out, "hitting_scan.csv")
    _write_csv(path, ["mode", "d", "r", "x", "successes", "trials", "p_hat", "lo", "hi"], rows)
    return ScenarioResult(verdicts, metrics, [path])


def scenario_potential(cfg, out, seed, replicas):
    """Potential solver dump and consistency: biased-law normalization,
    kernel row sums, and the Monte Carlo hit-frequency bracket."""
    rng = np.random.default_rng(seed)
    verdicts = {}
    metrics = {}
    files = []
    for inst in cfg["instances"]:
        d, L = inst["d"], inst["L"]
        target = tuple(inst["target"]) if isinstance(inst["target"], list) \
            else inst["target"]
        if isinstance(target, tuple) and target and isinstance(target[0], (list, tuple)):
            target = [tuple(p) for p in target]
        off = model.offspring_from_name(inst.get("offspring", "geometric"))
        stp = model.uniform_step(d)
        sys = potential.build_spine_system(d, target, L, off, stp,
                                           max_sweeps=int(inst.get("max_sweeps", 10 ** 5)))
        tag = "d%d" % d
        # normalization and kernel rows at sampled off-target points
        n_pts = int(inst.get("sample_points", 20))
        idxs = rng.choice(np.nonzero(~sys.lam)[0], size=n_pts)
        norm_defect = 0.0
        row_defect = 0.0
        for i in idxs:
            z = sys.graph.point(int(i))
            norm_defect = max(norm_defect, potential.biased_normalization_defect(
                off, sys.kill_at(z), sys.single_at(z)))
            if sys.reach_at(z) > 1e-12:
                row_defect = max(row_defect, abs(sys.kernel_row(z).sum() - 1.0))
        verdicts["biased_normalization_%s" % tag] = norm_defect <= 1e-9
        verdicts["kernel_rows_%s" % tag] = row_defect <= 1e-8
        # MC hit frequency within the (1 - q) bracket
        x = tuple(inst["probe"])
        qlo, qhi = sys.avoid_field.bracket(x)
        n = int(inst.get("mc_samples", 10 ** 5))
        fz = spine._freeze_kwargs(sys, target)
        spec = SimSpec(dim=d, offspring=off, step=stp, start=x,
                       early_exit_frozen=1,
                       node_budget=int(inst.get("budget", 10 ** 6)), **fz)
        batch = run_batch(spec, n, seed + d, replicas)
        est = stats.tail_probability((batch.frozen > 0).astype(np.int64),
                                     batch.undecided, 0)
        se3 = 3 * est.se
        ok = (1 - qhi) - se3 <= est.p_hat <= (1 - qlo) + se3 \
            or (est.lo <= 1 - qlo and est.hi >= 1 - qhi)
        verdicts["mc_hit_bracket_%s" % tag] = bool(ok)
        metrics[tag] = {"norm_defect": norm_defect, "row_defect": row_defect,
                        "q_bracket": [qlo, qhi], "mc_p": est.p_hat,
                        "mc_ci": [est.lo, est.hi],
                        "undecided": est.undecided}
        fpath = os.path.join(out, "potential_%s.txt" % tag)
        sys.avoid_field.save(fpath, meta="target=%r law=%s" % (target, off.kind))
        files.append(fpath)
    return ScenarioResult(verdicts, metrics, files)


def scenario_oracle_compare(cfg, out, seed, replicas):
    """Engine vs oracle: survival probability, local-time moments, and the
    exact small-instance distribution."""
    off = model.geometric_half()
    verdicts = {}
    metrics = {}
    # survival at the configured generation
    n_gen = int(cfg.get("survival_generation", 1000))
    n_runs = int(cfg.get("survival_samples", 4 * 10 ** 6))
    alive, total = survival_mc(off, n_gen, n_runs, seed)
    p_exact = oracle.survival_probability(off, n_gen)
    p_hat = alive / total
    se = math.sqrt(p_exact * (1 - p_exact) / total)
    verdicts["survival_exact"] = abs(p_hat - p_exact) <= 3 * se
    norm = n_gen * p_hat * off.variance / 2.0
    verdicts["survival_asymptotic_constant"] = 0.95 <= norm <= 1.05
    metrics["survival"] = {"p_hat": p_hat, "exact": p_exact, "normalized": norm}

    # local-time moment oracles vs MC (d=1, tiny horizon)
    stp = model.uniform_step(1)
    horizon, r = int(cfg.get("moment_horizon", 4)), 2
    ball = lattice.BallSpec(r, 1)
    e1 = oracle.expected_local_time(1, stp, (0,), ball, horizon)
    e2 = oracle.second_moment_local_time(1, off, stp, (0,), ball, horizon)
    spec = SimSpec(dim=1, offspring=off, step=stp, target_ball=r,
                   max_generation=horizon, node_budget=10 ** 6)
    batch = run_batch(spec, int(cfg.get("moment_samples", 10 ** 6)), seed + 1, replicas)
    ell = batch.ell.astype(float)
    m1, s1 = stats.mean_se(ell)
    m2, s2 = stats.mean_se(ell ** 2)
    verdicts["first_moment_oracle"] = abs(m1 - e1) <= 3 * s1
    verdicts["second_moment_oracle"] = abs(m2 - e2) <= 3 * s2
    metrics["moments"] = {"e1": e1, "mc1": m1, "e2": e2, "mc2": m2}

    # exact distribution vs MC with the same node cap
    cap = int(cfg.get("enum_nodes", 22))
    dist = oracle.exact_distribution_small(model.binary(), r, 0, cap)
    spec2 = SimSpec(dim=1, offspring=model.binary(), step=stp, target_ball=r,
                    node_budget=cap)
    b2 = run_batch(spec2, int(cfg.get("enum_samples", 10 ** 6)), seed + 2, replicas)
    n2 = b2.n_runs
    dec = ~b2.undecided
    tv = 0.0
    se_sum = 0.0
    for v in range(cap + 1):
        p_mc = float(((b2.ell == v) & dec).sum()) / n2
        p_ex = float(dist.values[v])
        tv += abs(p_mc - p_ex)
        se_sum += math.sqrt(max(p_ex * (1 - p_ex), 1e-12) / n2)
    p_mc_trunc = float(b2.undecided.sum()) / n2
    tv = 0.5 * (tv + abs(p_mc_trunc - dist.truncated_mass))
    se_sum = 0.5 * (se_sum + math.sqrt(dist.truncated_mass
                                       * (1 - dist.truncated_mass) / n2))
    verdicts["small_distribution_tv"] = tv <= 4 * se_sum
    metrics["small_distribution"] = {"tv": tv, "se_bound": se_sum,
                                     "truncated_exact": dist.truncated_mass,
                                     "truncated_mc": p_mc_trunc}
    path = os.path.join(out, "oracle_compare.json")
    with open(path, "w") as fh:
        json.dump({"verdicts": verdicts, "metrics": metrics}, fh, indent=1, sort_keys=True)
    return ScenarioResult(verdicts, metrics, [path])


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------

@dataclass
class ScenarioDef:
    fn: object
    covers: tuple
    default: dict


SCENARIOS = {
    "tail": ScenarioDef(scenario_tail, ("tail-exponents",), {
        "d": 5, "r": 3, "u_grid": [1, 2, 4, 6, 8], "samples": 10 ** 6,
        "kill_factor": 16, "offspring": "geometric", "step": "uniform"}),
    "short-time": ScenarioDef(scenario_short_time, ("tail-short-time-prefactor",), {
        "d": 4, "r": 8, "t_grid": [10, 25, 64, 160, 400], "samples": 10 ** 6,
        "budget": 10 ** 6, "offspring": "geometric", "step": "uniform"}),
    "low-dim": ScenarioDef(scenario_low_dim, ("local-time-moment-rates",), {
        "checks": [{"d": 1, "order": 2, "n_grid": [32, 64, 128, 256], "samples": 200000},
                   {"d": 2, "order": 2, "n_grid": [32, 64, 128, 256], "samples": 200000}]}),
    "inside-moments": ScenarioDef(scenario_inside_moments, ("frozen-inside-exp-moments",), {
        "d": 4, "r": [3, 6], "samples": 3 * 10 ** 5, "lambda_grid": [0.05, 0.1, 0.2],
        "offspring": "geometric", "step": "uniform"}),
    "outside-moments-d5": ScenarioDef(scenario_outside_d5, ("frozen-outside-exp-moments-5d",), {
        "d": 5, "r": 4, "lambda": 0.1, "samples": 10 ** 6, "kill_factor": 16,
        "offspring": "geometric", "step": "uniform"}),
    "outside-moments-d4": ScenarioDef(scenario_outside_d4, ("frozen-outside-exp-moments-4d",), {
        "d": 4, "r": 4, "lambda": 0.1, "samples": 10 ** 6, "R_factor": 8,
        "offspring": "geometric", "step": "uniform"}),
    "localized-tree": ScenarioDef(scenario_localized_tree, ("confined-tree-exp-moments",), {
        "d": 5, "r": 3, "samples": 10 ** 6, "u_grid": [0.5, 1, 2, 3, 4],
        "offspring": "geometric", "step": "uniform"}),
    "martingale-check": ScenarioDef(scenario_martingale,
                                    ("norm2-martingale", "green-martingale"), {
        "d": 4, "r": 5, "checkpoints": [10, 100], "samples": 10 ** 6,
        "offspring": "geometric", "step": "uniform",
        "green": {"d": 5, "L": 14, "r_in": 3, "r_out": 12, "start": [6, 0, 0, 0, 0],
                  "checkpoints": [1, 5, 20], "samples": 2 * 10 ** 5}}),
    "waves": ScenarioDef(scenario_waves, ("wave-decomposition",), {
        "d": 5, "r": 4, "start_particles": 2000, "chains": 200,
        "offspring": "geometric", "step": "uniform"}),
    "spine-check": ScenarioDef(scenario_spine_check, ("entry-path-equivalence",), {
        "d": 4, "r": 2, "samples": 10 ** 4, "box": 24,
        "offspring": "geometric", "step": "uniform"}),
    "many-spines": ScenarioDef(scenario_many_spines, ("many-spines-cascade",), {
        "d": 4, "r": 4, "shells": 3, "offspring": "geometric", "step": "uniform"}),
    "hitting-scan": ScenarioDef(scenario_hitting_scan, ("hitting-probability-scaling",), {
        "offspring": "geometric", "step": "uniform",
        "inside": {"d": 4, "r_grid": [2, 3, 4, 6, 8], "samples": 10 ** 6},
        "outside": {"d": 5, "r": 3, "x_grid": [8, 12, 16, 24], "samples": 10 ** 6}}),
    "potential": ScenarioDef(scenario_potential, ("potential-fixed-points",), {
        "instances": [
            {"d": 1, "L": 60, "target": [[0]], "probe": [1], "max_sweeps": 10 ** 6},
            {"d": 4, "L": 24, "target": ("shell", 2), "probe": [4, 0, 0, 0]}]}),
    "oracle-compare": ScenarioDef(scenario_oracle_compare,
                                  ("survival-asymptotics", "local-time-moment-oracles",
                                   "small-instance-distribution"), {}),
    "slices": ScenarioDef(scenario_slices, ("slice-decomposition",), {
        "d": 4, "r": 4, "samples": 10 ** 6, "offspring": "geometric", "step": "uniform"}),
}

# every in-scope claim must be reachable from exactly one scenario
CLAIM_COVERAGE = {c: name for name, sd in SCENARIOS.items() for c in sd.covers}


def run_scenario(name: str, config: dict | None = None, out_dir: str = "results",
                 seed: int = 0, replicas: int = DEFAULT_REPLICAS) -> dict:
    if name not in SCENARIOS:
        raise SystemExit("unknown scenario %r; choose from %s"
                         % (name, ", ".join(sorted(SCENARIOS))))
    sd = SCENARIOS[name]
    cfg = json.loads(json.dumps(sd.default))  # deep copy
    for k, v in (config or {}).items():
        if isinstance(v, dict) and isinstance(cfg.get(k), dict):
            cfg[k].update(v)
        else:
            cfg[k] = v
    if cfg.get("samples") == 0:
        raise SystemExit("config error: samples must be positive")
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.time()
    res = sd.fn(cfg, out_dir, int(seed), int(replicas))
    wall = time.time() - t0
    res.verdicts = {k: bool(v) for k, v in res.verdicts.items()}
    manifest = {
        "scenario": name,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seed": int(seed),
        "replicas": int(replicas),
        "code_version": __version__,
        "wall_clock_s": round(wall, 3),
        "files": res.files,
        "verdicts": res.verdicts,
        "metrics": res.metrics,
    }
    man_path = os.path.join(out_dir, "manifest_%s.json" % name)
    with open(man_path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True, default=str)
    ver_path = os.path.join(out_dir, "verdict_%s.json" % name)
    with open(ver_path, "w") as fh:
        json.dump({"scenario": name, "pass": all(res.verdicts.values()),
                   "verdicts": res.verdicts}, fh, indent=1, sort_keys=True)
    with open(os.path.join(out_dir, "config_%s.txt" % name), "w") as fh:
        fh.write(dump_config(cfg))
    return manifest


def emit_tables(manifest: dict, out_dir: str) -> str:
    """Summary CSV from a manifest: one row per verdict plus scalar metrics.
    Byte-stable for a fixed manifest."""
    rows = []
    for k in sorted(manifest["verdicts"]):
        rows.append(["verdict", k, str(manifest["verdicts"][k])])
    def _flatten(prefix, obj):
        for k in sorted(obj):
            v = obj[k]
            if isinstance(v, dict):
                _flatten(prefix + k + ".", v)
            elif isinstance(v, (int, float, str, bool)):
                rows.append(["metric", prefix + k,
                             "%.10g" % v if isinstance(v, float) else str(v)])
    _flatten("", manifest["metrics"])
    path = os.path.join(out_dir, "summary_%s.csv" % manifest["scenario"])
    _write_csv(path, ["kind", "name", "value"], rows)
    return path


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="critbrw",
                                 description="critical BRW experiment runner")
    ap.add_argument("scenario", help="scenario name, or 'list'")
    ap.add_argument("--config", help="config file (flat key = value text)")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--replicas", type=int, default=DEFAULT_REPLICAS)
    ap.add_argument("--out", default="results")
    args = ap.parse_args(argv)
    if args.scenario == "list":
        for name in sorted(SCENARIOS):
            print("%-20s covers: %s" % (name, ", ".join(SCENARIOS[name].covers)))
        return 0
    cfg = None
    if args.config:
        with open(args.config) as fh:
            cfg = parse_config(fh.read())
    manifest = run_scenario(args.scenario, cfg, args.out, args.seed, args.replicas)
    emit_tables(manifest, args.out)
    failed = [k for k, v in manifest["verdicts"].items() if not v]
    for k in sorted(manifest["verdicts"]):
        print("%-40s %s" % (k, "PASS" if manifest["verdicts"][k] else "FAIL"))
    if failed:
        print("FAILED: %s" % ", ".join(failed), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
