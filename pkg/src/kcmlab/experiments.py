"""Experiment runners behind the CLI: one function per experiment kind,
CSV + JSON-manifest persistence, and re-verification of stored runs.

Determinism contract: with a fixed (config, seed) the CSV outputs are byte
identical across reruns, whatever the parallelism degree, because replica
randomness is keyed by (seed, replica) and reductions are order-fixed.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .automata import bp_closure, bp_map, run_bp, run_ca_death
from .clocks import ClockField
from .clusters import (DecoratedSet, cluster_tail, diameter_tail, dist_sq,
                       extract_chain, is_k_connected, regularize, verify_chain)
from .config import ConfigError, ExperimentConfig
from .coupling import (dominating_inits, estimate_mixing_time, grand_coupling_check,
                       survival_curve, track_orange)
from .engine import Layout, run_coupled
from .lattice import Domain, FamilyClass, UpdateFamily, UpdateRule, classify, find_oriented_rule
from .lpp import lpp_times, lpp_times_from_clocks, run_monotone_set_chain
from .renorm import build_geometry, measure_warmup, renorm_passage_times, \
    passage_coupling_check, renormalised_bp_check
from .stats import fit_exponential


@dataclass
class RunRecord:
    kind: str
    config_hash: str
    code_version: str
    wall_time: float
    outputs: list = field(default_factory=list)
    verdicts: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())

    def manifest(self) -> dict:
        return {
            "kind": self.kind,
            "config_hash": self.config_hash,
            "code_version": self.code_version,
            "wall_time": self.wall_time,
            "outputs": self.outputs,
            "verdicts": self.verdicts,
            "metrics": self.metrics,
        }


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue())


def _family(cfg: ExperimentConfig) -> UpdateFamily:
    spec = cfg.params.get("family")
    if spec is None:
        raise ConfigError(f"{cfg.kind}.family: required")
    if isinstance(spec, str):
        return UpdateFamily.named(spec)
    return UpdateFamily([UpdateRule(r) for r in spec["rules"]], spec["dim"])


def _init_spec(params, key="init", default="ones"):
    v = params.get(key, default)
    if isinstance(v, float):
        return ("bernoulli", v, 0)
    return v


def _geometry(cfg, fam):
    p = cfg.params
    pair = find_oriented_rule(fam)
    if pair is None:
        raise ConfigError(f"{cfg.kind}: family has no oriented rule")
    rule, witness = pair
    dirs = [tuple(d) for d in p["dirs"]] if "dirs" in p else None
    return build_geometry(rule, witness, R=p.get("R", 1), T=float(p.get("T", 2.5)),
                          norm_sq=fam.norm_sq, dirs=dirs)


# ---------------------------------------------------------------------------
# runners
# ---------------------------------------------------------------------------


def _run_classify(cfg, out):
    fam = _family(cfg)
    got = classify(fam).value
    rows = [(cfg.params.get("family"), got)]
    write_csv(out / "classification.csv", ["family", "class"], rows)
    verdicts = {}
    if "expect" in cfg.params:
        verdicts["classification_matches"] = got == cfg.params["expect"]
    return ["classification.csv"], verdicts, {"class": got}


def _traj_outputs(traj, out, stem):
    lines = [json.dumps({"t": float(t), "row": int(r), "new": int(b)})
             for t, r, b in zip(traj.times, traj.rows, traj.newbits)]
    (out / f"{stem}_events.jsonl").write_text("\n".join(lines) + ("\n" if lines else ""))
    write_csv(out / f"{stem}_final.csv", ["row", "bit"],
              list(enumerate(int(b) for b in traj.final)))
    return [f"{stem}_events.jsonl", f"{stem}_final.csv"]


def write_frames(traj, out, stem, times):
    """Frame snapshots: one header line (dim, box corners, time), then the
    flat row-major bit string."""
    dom = traj.domain
    hi = tuple(l + s - 1 for l, s in zip(dom.lo, dom.shape))
    lines = []
    for t in times:
        frame = traj.frame_at(float(t))
        lines.append(json.dumps({"dim": dom.dim, "lo": list(dom.lo), "hi": list(hi),
                                 "t": float(t)}))
        lines.append("".join(str(int(b)) for b in frame))
    name = f"{stem}_frames.txt"
    (out / name).write_text("\n".join(lines) + "\n")
    return name


def _run_process(cfg, out, kind):
    fam = _family(cfg)
    p = cfg.params
    n = p["n"]
    dom = Domain.box(n, fam.dim, boundary=p.get("boundary", "ones"))
    cf = ClockField(cfg.seed, fam.dim)
    qkey = "q" if kind == "kcm" else "q0"
    res = run_coupled(fam, dom, [(kind, float(p[qkey]), _init_spec(p))], float(p["horizon"]), cf)
    traj = res.trajectories[0]
    outputs = _traj_outputs(traj, out, kind)
    if "record_frames" in p:
        outputs.append(write_frames(traj, out, kind, p["record_frames"]))
    replay_ok = np.array_equal(traj.frame_at(traj.horizon), traj.final)
    metrics = {"n_events": res.n_events, "n_changes": int(len(traj.times)),
               "final_density": float(traj.final.mean())}
    return outputs, {"replay_consistent": bool(replay_ok)}, metrics


def _run_bp(cfg, out):
    fam = _family(cfg)
    p = cfg.params
    dom = Domain.box(p["n"], fam.dim, boundary=p.get("boundary", "zeros"))
    init = _init_spec(p, default="zeros")
    if isinstance(init, tuple) and init[0] == "bernoulli":
        cf = ClockField(cfg.seed, fam.dim)
        lay = Layout(fam, dom)
        init = cf.bernoulli_field(lay.coords, init[1]).reshape(dom.shape)
    traj = run_bp(fam, init, p.get("steps", p["n"] * p["n"]), dom)
    dens = [(t, float(traj.frames[t].mean())) for t in range(traj.steps + 1)]
    write_csv(out / "bp_density.csv", ["step", "density"], dens)
    mono = all(np.all(traj.frames[t + 1] >= traj.frames[t]) for t in range(traj.steps))
    return ["bp_density.csv"], {"monotone": bool(mono)}, {"final_density": dens[-1][1]}


def _run_ca_death(cfg, out):
    fam = _family(cfg)
    p = cfg.params
    n, steps, burn = p["n"], p["steps"], p.get("burn_in", 0)
    init = _init_spec(p)
    if isinstance(init, tuple):
        raise ConfigError("ca-death.init: use 'ones' or 'zeros'")
    traj = run_ca_death(bp_map(fam), float(p["death_delta"]), init, burn + steps, cfg.seed,
                        shape=(n,) * fam.dim)
    dens = [(t, float(traj.frames[t].mean())) for t in range(burn, burn + steps + 1)]
    write_csv(out / "ca_density.csv", ["step", "density"], dens)
    mean_d = float(np.mean([d for _, d in dens]))
    return ["ca_density.csv"], {}, {"mean_density": mean_d}


def _run_lpp(cfg, out):
    fam = _family(cfg)
    p = cfg.params
    rule = UpdateRule(p["rule"]) if "rule" in p else find_oriented_rule(fam)[0]
    rows = []
    means = {}
    field_rows = []
    for n in p["ns"]:
        vals = []
        for s in range(p.get("seeds", 50)):
            cf = ClockField(cfg.seed, rule.dim, replica=s)
            field = lpp_times(rule, n, cf)
            smax = float(field.max())
            rows.append((n, s, smax, smax / n))
            vals.append(smax / n)
            if s == 0 and n == p["ns"][0]:
                for idx in np.ndindex(*field.shape):
                    field_rows.append([c + 1 for c in idx] + [float(field[idx])])
        means[n] = float(np.mean(vals))
    write_csv(out / "lpp_filling.csv", ["n", "seed", "max_s", "max_s_over_n"], rows)
    write_csv(out / "lpp_field.csv", [f"x{i + 1}" for i in range(rule.dim)] + ["s"],
              field_rows)
    # exact identity: clock-coupled passage sublevel sets equal the infected
    # sets of the single-rule dynamics at density 1 (same clock field)
    n0 = int(p["ns"][0])
    single = UpdateFamily([rule], rule.dim)
    dom = Domain((1,) * rule.dim, (n0,) * rule.dim, boundary="ones")
    mism = []
    for s in range(min(5, p.get("seeds", 50))):
        cf = ClockField(cfg.seed, rule.dim, replica=s)
        sfield = lpp_times_from_clocks(rule, n0, cf)
        traj = run_coupled(single, dom, [("kcm", 1.0, "zeros")],
                           float(sfield.max()) + 1.0, cf).trajectories[0]
        inf_time = np.full(sfield.size, np.inf)
        for t, r in zip(traj.times, traj.rows):
            inf_time[int(r)] = min(inf_time[int(r)], t)
        if not np.array_equal(inf_time.reshape(sfield.shape), sfield):
            mism.append({"seed": s})
    (out / "lpp_identity_violations.json").write_text(json.dumps(mism, indent=1))
    ns = sorted(means)
    ratios = [means[b] / means[a] for a, b in zip(ns, ns[1:])]
    verdicts = {"growth_identity": not mism}
    if "ratio_window" in p:
        lo, hi = p["ratio_window"]
        verdicts["filling_ratios_in_window"] = all(lo <= r <= hi for r in ratios)
    return (["lpp_filling.csv", "lpp_field.csv", "lpp_identity_violations.json"],
            verdicts, {"means": means, "consecutive_ratios": ratios})


def _run_monotone_set(cfg, out):
    p = cfg.params
    ell, d = p["ell"], cfg.params.get("dim", 2)
    rule = UpdateRule([tuple(-1 if j == i else 0 for j in range(d)) for i in range(d)])
    rows = []
    mism = []
    for s in range(p.get("seeds", 20)):
        cf = ClockField(cfg.seed, d, replica=s)
        rec = run_monotone_set_chain(ell, d, cf)
        spf = lpp_times_from_clocks(rule, ell, cf)
        equal = bool(np.array_equal(rec.add_times, spf))
        if not equal:
            mism.append({"seed": s})
        rows.append((s, rec.absorbed_time, equal))
    write_csv(out / "monotone_chain.csv", ["seed", "absorbed_time", "matches_lpp"], rows)
    (out / "monotone_violations.json").write_text(json.dumps(mism, indent=1))
    return (["monotone_chain.csv", "monotone_violations.json"],
            {"chain_equals_lpp": not mism}, {"seeds": p.get("seeds", 20)})


def _run_orange(cfg, out):
    fam = _family(cfg)
    p = cfg.params
    dom = Domain.box(p["n"], fam.dim, boundary="ones")
    cf = ClockField(cfg.seed, fam.dim)
    res = run_coupled(fam, dom, [("cp", float(p["q0"]), ("bernoulli", float(p["p_init"]), 0))],
                      float(p["horizon"]), cf, track_orange=True, olog_mode=2)
    traj = res.trajectories[0]
    rep = track_orange(traj, cf, inject_fault=p.get("inject_fault"))
    ot, orr, ofl = res.orange_log
    mism = []
    if len(rep.times) != len(ot) or not (np.array_equal(rep.times, ot)
                                         and np.array_equal(rep.rows, orr)
                                         and np.array_equal(rep.flags, ofl)):
        la, lb = len(rep.times), len(ot)
        for i in range(max(la, lb)):
            a = (float(rep.times[i]), int(rep.rows[i]), int(rep.flags[i])) if i < la else None
            b = (float(ot[i]), int(orr[i]), int(ofl[i])) if i < lb else None
            if a != b:
                mism.append({"index": i, "replay": a, "online": b})
            if len(mism) >= 32:
                break
    (out / "orange_violations.json").write_text(json.dumps(mism, indent=1))
    write_csv(out / "orange_log.csv", ["time", "row", "joined"],
              list(zip(ot.tolist(), orr.tolist(), ofl.tolist())))
    verdicts = {"replay_matches_online": not mism}
    metrics = {"n_orange_changes": int(len(ot)), "empty_time": res.empty_time}
    return ["orange_violations.json", "orange_log.csv"], verdicts, metrics


def _run_grand_coupling(cfg, out):
    fam = _family(cfg)
    p = cfg.params
    dom = Domain.box(p["n"], fam.dim, boundary="ones")
    lay = Layout(fam, dom)
    q, q0 = float(p["q"]), float(p["q0"])
    seeds = p.get("seeds", 1)
    all_viol = []
    certs = []
    coupled_flags = []
    outputs = []
    fault = p.get("inject_fault")
    fault_detected = False
    for s in range(seeds):
        cf = ClockField(cfg.seed, fam.dim, replica=s)
        xi = lay.parse_init(("bernoulli", float(p["p_init"]), 0), cf)
        xps = dominating_inits(xi, p.get("n_dominated", 10), cf, lay.coords)
        rep = grand_coupling_check(fam, dom, q, q0, float(p["horizon"]), cf, xi, xps,
                                   record_changes=(s == 0))
        all_viol.extend([{"seed": s, "time": v[0], "site": list(v[1]), "kind": v[2],
                          "process": v[3]} for v in rep.violations])
        certs.append((s, rep.empty_time if rep.empty_time is not None else float("nan")))
        coupled_flags.append(rep.final_coupled)
        if s == 0 and rep.trajectories:
            outputs += _traj_outputs(rep.trajectories[0], out, "cp_reference")
            if fault:
                repl = track_orange(rep.trajectories[0], cf, inject_fault=fault)
                res_ol = run_coupled(fam, dom, [("cp", q0, xi)], float(p["horizon"]), cf,
                                     track_orange=True, olog_mode=2)
                ot = res_ol.orange_log[0]
                if len(repl.times) != len(ot) or not np.array_equal(repl.times, ot):
                    fault_detected = True
                    all_viol.append({"seed": s, "kind": "tracker-corruption",
                                     "detail": "replay log diverges from online log"})
    (out / "coupling_violations.json").write_text(json.dumps(all_viol, indent=1))
    write_csv(out / "certificates.csv", ["seed", "empty_time"], certs)
    outputs += ["coupling_violations.json", "certificates.csv"]
    verdicts = {"no_violations": not all_viol,
                "coupled_after_certificate": all(c is not False for c in coupled_flags)}
    if fault:
        verdicts["fault_injected_and_detected"] = fault_detected and not verdicts["no_violations"]
    return outputs, verdicts, {"seeds": seeds}


def _run_mixing(cfg, out):
    fam = _family(cfg)
    p = cfg.params
    rows = []
    ests = []
    for n in p["ns"]:
        est = estimate_mixing_time(
            fam, int(n), float(p["q"]), int(p["replicas"]), cfg.seed,
            delta=float(p.get("mix_delta", 0.25)), q0=p.get("q0"),
            d=fam.dim, jobs=cfg.jobs,
        )
        ests.append(est)
        rows.append((est.n, est.t_hat, est.ci[0], est.ci[1], est.first_update,
                     est.replicas, est.horizon_capped))
    write_csv(out / "mixing_scaling.csv",
              ["n", "t_hat", "ci_lo", "ci_hi", "first_update_median", "replicas", "capped"],
              rows)
    t_ratios = [b.t_hat / a.t_hat for a, b in zip(ests, ests[1:])]
    p_ratios = [b.first_update / a.first_update for a, b in zip(ests, ests[1:])]
    verdicts = {}
    if "ratio_window" in p:
        lo, hi = p["ratio_window"]
        verdicts["t_hat_ratios_in_window"] = all(lo <= r <= hi for r in t_ratios)
        verdicts["lower_bound_grows"] = all(r >= lo for r in p_ratios)
    return (["mixing_scaling.csv"], verdicts,
            {"t_hat_ratios": t_ratios, "first_update_ratios": p_ratios})


def _run_survival(cfg, out):
    fam = _family(cfg)
    p = cfg.params
    sc = survival_curve(
        fam, float(p["q0"]), float(p["p_init"]), float(p["horizon"]),
        int(p["replicas"]), cfg.seed, d=fam.dim,
        halfwidth=p.get("halfwidth"), burn_in=float(p.get("burn_in", 0.0)),
        validate=int(p.get("validate_buffer", 0)),
        jobs=cfg.jobs,
    )
    write_csv(out / "survival.csv",
              ["t", "p_hat", "ci_lo", "ci_hi", "count", "replicas"], list(sc.rows()))
    fit = fit_exponential(sc.times, sc.p_hat, sc.replicas, boot_seed=cfg.seed)
    verdicts = {}
    if sc.buffer_validated is not None:
        verdicts["buffer_insensitive"] = bool(sc.buffer_validated)
    if "min_r2" in p:
        verdicts["exponential_fit"] = bool(fit.ok and fit.r_squared >= p["min_r2"] and fit.decaying)
    metrics = {"fit_ok": fit.ok, "rate": fit.rate, "r_squared": fit.r_squared,
               "rate_ci": list(fit.rate_ci), "n_points": fit.n_points}
    return ["survival.csv"], verdicts, metrics


def _run_renorm_check(cfg, out):
    fam = _family(cfg)
    p = cfg.params
    geom = _geometry(cfg, fam)
    dom = Domain.box(p["n"], fam.dim, boundary="ones")
    viol = []
    stats = []
    first_good = []
    for s in range(p.get("seeds", 10)):
        cf = ClockField(cfg.seed, fam.dim, replica=s)
        rep = renormalised_bp_check(geom, dom, float(p["q0"]), int(p["tau_max"]), cf,
                                    init=_init_spec(p))
        viol.extend([{"seed": s, "box": list(v[0]), "tau": v[1], "site": list(v[2]),
                      "window_lo": v[3]} for v in rep.violations])
        stats.append((s, rep.n_infected_boxes, rep.n_cp_zero_boxes, rep.initial_infected))
        if s == 0:
            first_good = rep.good_bits
    (out / "renorm_violations.json").write_text(json.dumps(viol, indent=1))
    write_csv(out / "renorm_stats.csv",
              ["seed", "infected_box_assertions", "boxes_with_healthy_site", "initial_infected"],
              stats)
    write_csv(out / "good_boxes_seed0.csv",
              [f"x{i}" for i in range(fam.dim)] + ["tau", "good"],
              [list(x) + [tau, bit] for x, tau, bit in first_good])
    asserted = sum(r[1] for r in stats)
    verdicts = {"no_violations": not viol, "non_vacuous": asserted > 0}
    return (["renorm_violations.json", "renorm_stats.csv", "good_boxes_seed0.csv"],
            verdicts, {"infected_box_assertions": asserted})


def _run_passage(cfg, out):
    fam = _family(cfg)
    p = cfg.params
    geom = _geometry(cfg, fam)
    dom = Domain.box(p["n"], fam.dim, boundary="ones")
    viol = []
    rows = []
    field_rows = []
    for s in range(p.get("seeds", 10)):
        cf = ClockField(cfg.seed, fam.dim, replica=s)
        pf = renorm_passage_times(geom, dom, float(p["q0"]), cf)
        pc = passage_coupling_check(geom, dom, float(p["q0"]), cf, pf)
        viol.extend([{"seed": s, "site": list(v[0]), "disagreement_end": v[1],
                      "threshold": v[2]} for v in pc.violations])
        rows.append((s, pf.max_time(), len(pf.xi)))
        if s == 0:
            field_rows = [list(x) + [pf.t[x]] for x in pf.xi]
    (out / "passage_violations.json").write_text(json.dumps(viol, indent=1))
    write_csv(out / "passage_max.csv", ["seed", "max_t", "n_boxes"], rows)
    write_csv(out / "passage_field_seed0.csv",
              [f"x{i}" for i in range(fam.dim)] + ["t"], field_rows)
    verdicts = {"no_violations": not viol}
    return (["passage_violations.json", "passage_max.csv", "passage_field_seed0.csv"],
            verdicts, {"max_times": [r[1] for r in rows]})


def _run_warmup(cfg, out):
    fam = _family(cfg)
    p = cfg.params
    ests = measure_warmup(fam, float(p["q"]), float(p["p"]), int(p["R"]),
                          [float(t) for t in p["T_list"]], int(p["boxes_per_side"]),
                          int(p.get("replicas", 1)), cfg.seed, d=fam.dim,
                          margin=p.get("margin"))
    write_csv(out / "warmup.csv", ["T", "density", "ci_lo", "ci_hi", "n_boxes"],
              [(e.T, e.density, e.ci[0], e.ci[1], e.n_boxes) for e in ests])
    dens = {e.T: e.density for e in ests}
    ts = sorted(dens)
    verdicts = {"density_increases_with_T": all(dens[a] <= dens[b] for a, b in zip(ts, ts[1:]))}
    return ["warmup.csv"], verdicts, {"densities": dens}


def _run_cluster_tail(cfg, out):
    fam = _family(cfg)
    p = cfg.params
    mode = p.get("mode", "ca-death")
    k_sq = int(p["k_sq"])
    ell = [float(x) for x in p["ell_grid"]]
    if mode == "ca-death":
        n, steps, burn = p["n"], p["steps"], p.get("burn_in", 0)
        traj = run_ca_death(bp_map(fam), float(p["death_delta"]), "ones", burn + steps,
                            cfg.seed, shape=(n,) * fam.dim)
        table = cluster_tail(traj, k_sq, ell, burn_in=burn)
    elif mode == "bp":
        cls = classify(fam)
        if cls not in (FamilyClass.SUBCRITICAL_NONTRIVIAL, FamilyClass.TRIVIAL_SUBCRITICAL):
            raise ConfigError(f"cluster-tail.mode=bp needs a subcritical family, got {cls.value}")
        n = p["n"]
        dom = Domain.box(n, fam.dim, boundary="zeros")
        table = None
        for s in range(p.get("seeds", 1)):
            cf = ClockField(cfg.seed, fam.dim, replica=s)
            lay = Layout(fam, dom)
            init = cf.bernoulli_field(lay.coords, float(p["p"])).reshape(dom.shape)
            closure, _ = bp_closure(fam, init, dom)
            tt = diameter_tail(closure.astype(bool), k_sq, ell)
            table = tt if table is None else table.merged(tt)
    else:
        raise ConfigError(f"cluster-tail.mode: unknown mode {mode!r}")
    write_csv(out / "cluster_tail.csv",
              ["ell", "count", "censored", "p_hat", "ci_lo", "ci_hi", "n_samples"],
              list(table.rows()))
    fit = fit_exponential(table.ell, table.p_hat, table.n_samples, boot_seed=cfg.seed)
    verdicts = {"tail_nonincreasing": bool(np.all(np.diff(table.p_hat) <= 1e-12))}
    if "min_r2" in p:
        verdicts["exponential_fit"] = bool(fit.ok and fit.r_squared >= p["min_r2"])
    metrics = {"rate": fit.rate, "r_squared": fit.r_squared, "fit_ok": fit.ok}
    return ["cluster_tail.csv"], verdicts, metrics


def random_chain_instance(rng, k_sq, max_path, dim=2):
    """A random k-connected path plus random small decorated sets through
    each point (shared sets are allowed: neighbouring points may reuse one)."""
    k = int(np.sqrt(k_sq))
    length = int(rng.integers(1, max_path))
    p = [tuple(rng.integers(-3, 4, size=dim).tolist())]
    while len(p) < length:
        step = rng.integers(-k, k + 1, size=dim)
        if 0 < int((step * step).sum()) <= k_sq:
            p.append(tuple(int(a + b) for a, b in zip(p[-1], step)))
    sets_map = {}
    for pt in p:
        if pt in sets_map:
            continue
        extra = rng.integers(0, 3)
        pts = {pt}
        cur = pt
        for _ in range(extra):
            cur = tuple(int(c + d) for c, d in zip(cur, rng.integers(-1, 2, size=dim)))
            pts.add(cur)
        sets_map[pt] = DecoratedSet(pts, gamma=int(rng.integers(0, 1 << 30)))
    return p, sets_map


def check_extraction_invariants(path, sets_map, k_sq):
    """Run the extraction with a trace and evaluate every structural claim;
    returns a dict of named booleans (all must be true)."""
    chain, trace = extract_chain(path, sets_map, k_sq, with_trace=True)

    def reg(j):
        return regularize(sets_map[path[j]].points)

    def xset(idx_set):
        x = set()
        for j in idx_set:
            x |= reg(j)
        return x

    res = {}
    xs = [xset(I) for I in trace.I_t]
    pset = set(path)
    res["covered_monotone"] = all((xs[t - 1] & pset) <= (xs[t] & pset)
                                  for t in range(1, len(xs)))
    res["strict_progress"] = all(
        path[trace.i_t[t - 1]] in xs[t] and path[trace.i_t[t - 1]] not in xs[t - 1]
        for t in range(1, len(xs)))
    res["terminates_in_path_length"] = len(trace.i_t) <= len(path)
    disjoint = True
    for I in trace.I_t:
        cores = [sets_map[path[j]].points for j in I]
        for i in range(len(cores)):
            for j in range(i + 1, len(cores)):
                if cores[i] & cores[j]:
                    disjoint = False
    res["cores_disjoint_each_step"] = disjoint
    res["final_cover_k_connected"] = is_k_connected(xs[-1], k_sq)
    res["path_covered"] = pset <= xs[-1]
    nesting = True
    for t in range(1, len(xs)):
        new_reg = reg(trace.i_t[t - 1])
        for j in trace.J_t[t - 1]:
            if not (reg(j) <= new_reg):
                nesting = False
    res["nesting"] = nesting
    n_sq = dist_sq(path[0], path[-1])
    res["chain_verifies"] = verify_chain(chain, path[0], float(np.sqrt(n_sq)), k_sq,
                                         n_sq=n_sq)
    return res


def _run_chain_props(cfg, out):
    p = cfg.params
    k_sq = int(p.get("k_sq", 4))
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((cfg.seed, 0xC4A1))))
    fails = []
    n_inst = int(p["instances"])
    for i in range(n_inst):
        path, sets_map = random_chain_instance(rng, k_sq, int(p.get("max_path", 20)))
        res = check_extraction_invariants(path, sets_map, k_sq)
        bad = [k for k, v in res.items() if not v]
        if bad:
            fails.append({"instance": i, "failed": bad, "path": [list(x) for x in path]})
    (out / "chain_failures.json").write_text(json.dumps(fails, indent=1))
    return (["chain_failures.json"], {"all_invariants_hold": not fails},
            {"instances": n_inst, "failures": len(fails)})


_RUNNERS = {
    "classify": _run_classify,
    "kcm": lambda c, o: _run_process(c, o, "kcm"),
    "cp": lambda c, o: _run_process(c, o, "cp"),
    "bp": _run_bp,
    "ca-death": _run_ca_death,
    "lpp": _run_lpp,
    "monotone-set": _run_monotone_set,
    "orange": _run_orange,
    "grand-coupling": _run_grand_coupling,
    "mixing-scaling": _run_mixing,
    "survival": _run_survival,
    "renorm-check": _run_renorm_check,
    "passage-times": _run_passage,
    "warmup": _run_warmup,
    "cluster-tail": _run_cluster_tail,
    "chain-props": _run_chain_props,
}


def run_experiment(cfg: ExperimentConfig, out_dir=None, seed=None, jobs=None) -> RunRecord:
    if seed is not None:
        cfg = ExperimentConfig(cfg.kind, int(seed), cfg.jobs, cfg.out, cfg.params)
    if jobs is not None:
        cfg = ExperimentConfig(cfg.kind, cfg.seed, int(jobs), cfg.out, cfg.params)
    out = Path(out_dir if out_dir is not None else (cfg.out or "."))
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.monotonic()
    outputs, verdicts, metrics = _RUNNERS[cfg.kind](cfg, out)
    wall = time.monotonic() - t0
    rec = RunRecord(cfg.kind, cfg.hash(), __version__, wall, outputs, verdicts, metrics)
    manifest = rec.manifest()
    manifest["config"] = {"kind": cfg.kind, "seed": cfg.seed, **cfg.params}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return rec


_SUMMARY_METRICS = ("t_hat_ratios", "first_update_ratios", "consecutive_ratios",
                    "rate", "r_squared", "densities", "class")


def emit_summary(records) -> str:
    lines = []
    for r in records:
        status = "PASS" if r.passed else "FAIL"
        details = ", ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in r.verdicts.items())
        extra = []
        for key in _SUMMARY_METRICS:
            if key in r.metrics:
                v = r.metrics[key]
                if isinstance(v, float):
                    extra.append(f"{key}={v:.4g}")
                elif isinstance(v, list):
                    extra.append(f"{key}=[" + ", ".join(f"{x:.3g}" for x in v) + "]")
                else:
                    extra.append(f"{key}={v}")
        line = f"{r.kind:16s} {status}  {details}"
        if extra:
            line += "  | " + "; ".join(extra)
        lines.append(line)
    return "\n".join(lines)


def verify_manifest(path) -> tuple[bool, list]:
    """Re-check the exact invariants a stored run claims.

    Violation files must be empty, verdicts true; for runs that stored a
    reference trajectory, the trajectory is replayed from its clock
    provenance and the recorded change log is re-validated event by event.
    """
    path = Path(path)
    man = json.loads(path.read_text())
    base = path.parent
    msgs = []
    ok = True
    for key, value in man.get("verdicts", {}).items():
        if not value:
            ok = False
            msgs.append(f"verdict {key} failed at run time")
    for name in man.get("outputs", []):
        if not (base / name).exists():
            ok = False
            msgs.append(f"missing output {name}")
            continue
        if name.endswith("violations.json"):
            viol = json.loads((base / name).read_text())
            if viol:
                ok = False
                msgs.append(f"{name}: {len(viol)} stored violations")
    cfg = man.get("config", {})
    ev_name = next((n for n in man.get("outputs", []) if n.endswith("_events.jsonl")), None)
    if ev_name and cfg:
        ok2, msg = _reverify_trajectory(base / ev_name, cfg)
        ok &= ok2
        if msg:
            msgs.append(msg)
    return ok, msgs


def _reverify_trajectory(events_path: Path, cfg: dict) -> tuple[bool, str]:
    """Re-simulate the stored reference process and compare change logs."""
    kind = cfg.get("kind")
    if kind not in ("kcm", "cp", "grand-coupling"):
        return True, ""
    fam = UpdateFamily.named(cfg["family"]) if isinstance(cfg["family"], str) else \
        UpdateFamily([UpdateRule(r) for r in cfg["family"]["rules"]], cfg["family"]["dim"])
    dom = Domain.box(cfg["n"], fam.dim, boundary=cfg.get("boundary", "ones"))
    cf = ClockField(cfg["seed"], fam.dim)
    if kind == "grand-coupling":
        lay = Layout(fam, dom)
        init = lay.parse_init(("bernoulli", float(cfg["p_init"]), 0), cf)
        proc = ("cp", float(cfg["q0"]), init)
    elif kind == "cp":
        proc = ("cp", float(cfg["q0"]), _init_spec(cfg))
    else:
        proc = ("kcm", float(cfg["q"]), _init_spec(cfg))
    res = run_coupled(fam, dom, [proc], float(cfg["horizon"]), cf)
    traj = res.trajectories[0]
    stored = [json.loads(line) for line in events_path.read_text().splitlines() if line]
    if len(stored) != len(traj.times):
        return False, f"stored change log has {len(stored)} entries, replay has {len(traj.times)}"
    for i, ent in enumerate(stored):
        if (ent["t"] != float(traj.times[i]) or ent["row"] != int(traj.rows[i])
                or ent["new"] != int(traj.newbits[i])):
            return False, f"stored change {i} diverges from replay"
    return True, ""
