"""Couplings between the constrained dynamics and the contact process.

The orange set is the history-dependent subset of healthy contact-process
sites outside of which all constrained-dynamics copies started from
dominating initial conditions provably agree.  Its rules, replayed at every
clock event of the reference contact process:

  * the site's post-event state is 1      -> the site leaves the set;
  * the state is 0 and some member of the set is within the family norm
                                          -> the site joins the set;
  * otherwise                             -> no change.

Emptiness of the set is an absorbing certificate: from that moment on all
coupled copies are equal, which upper-bounds worst-case total-variation
mixing by the usual coupling inequality.  Nothing here estimates the
total-variation distance directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .clocks import ClockField
from .engine import Layout, Trajectory, run_coupled
from .lattice import Domain, FamilyClass, UpdateFamily, classify
from .stats import bootstrap_quantile_ci, quantile_upper, wilson_interval


@dataclass
class CouplingCertificate:
    empty_time: float | None
    horizon: float

    @property
    def coupled(self) -> bool:
        return self.empty_time is not None


@dataclass
class OrangeProcess:
    """Replayed orange-set history: initial members plus a (time, row, flag)
    change log (flag 1 = joined, 0 = left)."""

    domain: Domain
    initial: np.ndarray           # interior uint8
    times: np.ndarray
    rows: np.ndarray
    flags: np.ndarray
    horizon: float

    def members_at(self, t: float) -> np.ndarray:
        state = self.initial.copy()
        n = np.searchsorted(self.times, t, side="right")
        state[self.rows[:n]] = self.flags[:n]
        return state

    def empty_time(self) -> float | None:
        count = int(self.initial.sum())
        if count == 0:
            return 0.0
        state = self.initial.copy()
        for t, r, f in zip(self.times, self.rows, self.flags):
            r = int(r)
            if f and not state[r]:
                state[r] = 1
                count += 1
            elif not f and state[r]:
                state[r] = 0
                count -= 1
            if count == 0:
                return float(t)
        return None


def track_orange(cp_traj: Trajectory, clocks: ClockField | None = None,
                 inject_fault: str | None = None) -> OrangeProcess:
    """Replay the orange set of a contact-process trajectory.

    Independent of the simulation kernel's online tracker: the full event
    stream is regenerated from the trajectory's clock provenance and the
    state is replayed from the recorded change log.  `inject_fault` is a
    negative-control hook ('drop_add' suppresses the first join) used to
    prove the violation detectors actually fire.
    """
    if cp_traj.kind != "cp":
        raise ValueError("orange tracking is defined for contact-process trajectories; "
                         f"got kind={cp_traj.kind!r}")
    if not cp_traj.meta.get("recorded", True):
        raise ValueError("trajectory was run without change recording; cannot replay")
    fam, dom = cp_traj.family, cp_traj.domain
    cf = clocks if clocks is not None else ClockField(cp_traj.seed, dom.dim, cp_traj.replica)
    lay = Layout(fam, dom)
    coords = lay.coords
    m = coords.shape[0]

    state = cp_traj.init.copy()
    orange = (state == 0).astype(np.uint8)
    initial = orange.copy()

    # neighbour rows within the family norm, per site (small balls)
    coord_index = {tuple(c): i for i, c in enumerate(coords)}
    ball = fam.ball_offsets()
    neigh = []
    for i in range(m):
        x = coords[i]
        lst = []
        for o in ball:
            j = coord_index.get(tuple(x + np.asarray(o, dtype=np.int64)))
            if j is not None:
                lst.append(j)
        neigh.append(np.asarray(lst, dtype=np.int64))

    times, rows, flags = [], [], []
    ci = 0  # pointer into the trajectory change log
    n_chg = len(cp_traj.times)
    dropped = False
    t_start = float(cp_traj.meta.get("t_start", 0.0))
    ev_times, ev_rows, _, _ = cf.merged(coords, t_start, cp_traj.horizon)
    for t, r in zip(ev_times, ev_rows):
        r = int(r)
        if ci < n_chg and cp_traj.times[ci] < t:
            raise AssertionError("change log out of sync with the regenerated event stream")
        # a state change, when the event produced one, carries this exact time
        if ci < n_chg and cp_traj.times[ci] == t and int(cp_traj.rows[ci]) == r:
            state[r] = cp_traj.newbits[ci]
            ci += 1
        if state[r] == 1:
            if orange[r]:
                orange[r] = 0
                times.append(t)
                rows.append(r)
                flags.append(0)
        else:
            if not orange[r] and orange[neigh[r]].any():
                if inject_fault == "drop_add" and not dropped:
                    dropped = True
                else:
                    orange[r] = 1
                    times.append(t)
                    rows.append(r)
                    flags.append(1)
    return OrangeProcess(dom, initial, np.asarray(times), np.asarray(rows, dtype=np.int64),
                         np.asarray(flags, dtype=np.uint8), cp_traj.horizon)


@dataclass
class GrandCouplingReport:
    violations: list
    n_violations: int
    certificate: CouplingCertificate
    final_coupled: bool | None     # all copies equal at the horizon (None: no certificate)
    empty_time: float | None
    n_events: int
    trajectories: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.n_violations == 0


def dominating_inits(base: np.ndarray, count: int, clocks: ClockField, coords: np.ndarray,
                     extra_p: float = 0.5, channel_base: int = 200):
    """`count` initial conditions dominating `base`, by switching on an
    independent Bernoulli field over the healthy sites of `base`."""
    out = []
    base = base.reshape(-1)
    for k in range(count):
        extra = (clocks.uniforms(coords, channel=channel_base + k) < extra_p).astype(np.uint8)
        out.append((base | extra).astype(np.uint8))
    return out


def grand_coupling_check(
    family: UpdateFamily,
    domain: Domain,
    q: float,
    q0: float,
    horizon: float,
    clocks: ClockField,
    cp_init,
    kcm_inits,
    *,
    record_changes: bool = True,
    stop_on_empty: bool = False,
    viol_cap: int = 64,
) -> GrandCouplingReport:
    """Run the reference contact process, the all-ones constrained dynamics
    and every supplied dominating copy on one clock stream; verify at every
    event that (i) the contact process never exceeds any copy and (ii) any
    disagreement with the all-ones copy lies inside the orange set.

    The per-event checks are exhaustive by induction: states and the orange
    set only change at the event's site.
    """
    if not 0 <= q0 <= q <= 1:
        raise ValueError("need 0 <= q0 <= q <= 1")
    lay = Layout(family, domain)
    xi = lay.parse_init(cp_init, clocks, channel=0)
    parsed = [lay.parse_init(k, clocks, channel=100 + i) for i, k in enumerate(kcm_inits)]
    for i, arr in enumerate(parsed):
        if np.any(arr < xi):
            raise ValueError(f"initial condition {i} does not dominate the contact-process one")

    procs = [("cp", q0, xi), ("kcm", q, "ones")] + [("kcm", q, a) for a in parsed]
    res = run_coupled(
        family, domain, procs, horizon, clocks,
        track_orange=True,
        dom_pairs=[(0, i) for i in range(1, len(procs))],
        inc_ref=1, inc_procs=list(range(2, len(procs))),
        record_changes=record_changes,
        stop_on_empty=stop_on_empty,
        viol_cap=viol_cap,
        layout=lay,
    )
    final_coupled = None
    if res.empty_time is not None and not res.stopped_early:
        ref = res.trajectories[1].final
        final_coupled = all(np.array_equal(ref, t.final) for t in res.trajectories[2:])
    return GrandCouplingReport(
        violations=res.violations,
        n_violations=res.n_violations,
        certificate=CouplingCertificate(res.empty_time, horizon),
        final_coupled=final_coupled,
        empty_time=res.empty_time,
        n_events=res.n_events,
        trajectories=res.trajectories if record_changes else [],
    )


def parallel_map(fn, items, jobs: int):
    """Order-preserving map, fanned out over processes when jobs != 1.

    Results are reduced in item order regardless of scheduling, so parallel
    runs reproduce serial ones bit for bit.
    """
    items = list(items)
    if jobs == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    import os
    from concurrent.futures import ProcessPoolExecutor

    workers = jobs if jobs and jobs > 0 else (os.cpu_count() or 1)
    workers = min(workers, len(items))
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


def _mixing_replica(args):
    (family, n, d, q, q0, seed, replica, probe, h0, max_doublings) = args
    dom = Domain.box(n, d, boundary="ones")
    cf = ClockField(seed, d, replica=replica)
    h = h0
    for _ in range(max_doublings + 1):
        res = run_coupled(
            family, dom,
            [("cp", q0, "zeros"), ("kcm", q, "ones"), ("kcm", q, "zeros")],
            h, cf,
            track_orange=True,
            dom_pairs=[(0, 1), (0, 2)],
            inc_ref=1, inc_procs=[2],
            record_changes=False,
            probe_box=probe,
            stop_on_empty=True,
        )
        if res.n_violations:
            raise AssertionError(f"coupling invariant violated: {res.violations[:3]}")
        if res.empty_time is not None:
            first = res.first_change[2] if res.first_change[2] is not None else float("nan")
            return res.empty_time, first
        h *= 2.0
    first = res.first_change[2] if res.first_change[2] is not None else float("nan")
    return float("inf"), first


@dataclass
class MixingEstimate:
    n: int
    t_hat: float
    ci: tuple
    delta: float
    replicas: int
    empty_times: np.ndarray
    first_update: float            # median first state change in the centred probe box
    first_update_times: np.ndarray
    horizon_capped: int            # replicas that never certified within the cap


def estimate_mixing_time(
    family: UpdateFamily,
    n: int,
    q: float,
    replicas: int,
    seed: int,
    *,
    delta: float = 0.25,
    q0: float | None = None,
    d: int = 2,
    probe_halfwidth: int = 1,
    horizon0: float | None = None,
    max_doublings: int = 4,
    boot: int = 300,
    jobs: int = 1,
) -> MixingEstimate:
    """Coupling-certificate estimate of the mixing time on the n-box with
    fully infected boundary.

    Each replica runs, on one clock field: the contact process from all
    zeros (every site initially orange), and the constrained dynamics from
    all ones and from all zeros.  t_hat is the empirical (1-delta) quantile
    of the certificate times; by the coupling inequality it estimates an
    upper bound on the true mixing time.  The median time of the first
    state change inside the centred probe box of the all-zeros copy is the
    matching lower-bound proxy (nothing can mix before the middle moves).
    """
    cls = classify(family)
    if cls == FamilyClass.TRIVIAL_SUBCRITICAL:
        raise ValueError("trivial subcritical families are not ergodic; refusing to estimate mixing")
    if q0 is None:
        q0 = q
    if not 0 <= q0 <= q <= 1:
        raise ValueError("need q0 <= q")
    mid = n // 2
    probe = (tuple(mid - probe_halfwidth for _ in range(d)),
             tuple(mid + probe_halfwidth for _ in range(d)))
    h0 = horizon0 if horizon0 is not None else 8.0 * n + 40.0

    args = [(family, n, d, q, q0, seed, r, probe, h0, max_doublings) for r in range(replicas)]
    results = parallel_map(_mixing_replica, args, jobs)
    empties = np.asarray([e for e, _ in results])
    firsts = np.asarray([f for _, f in results])
    capped = int(np.sum(~np.isfinite(empties)))

    t_hat = quantile_upper(empties, 1.0 - delta)
    ci = bootstrap_quantile_ci(empties, 1.0 - delta, n_boot=boot, seed=seed)
    fu = np.array([f for f in firsts if np.isfinite(f)])
    return MixingEstimate(
        n=n, t_hat=t_hat, ci=ci, delta=delta, replicas=replicas,
        empty_times=empties,
        first_update=float(np.median(fu)) if fu.size else float("nan"),
        first_update_times=firsts,
        horizon_capped=capped,
    )


@dataclass
class SurvivalCurve:
    times: np.ndarray
    p_hat: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    counts: np.ndarray
    replicas: int
    buffer_validated: bool | None = None

    def rows(self):
        for i in range(len(self.times)):
            yield (float(self.times[i]), float(self.p_hat[i]), float(self.ci_lo[i]),
                   float(self.ci_hi[i]), int(self.counts[i]), self.replicas)


def _probe_membership(initial_member: bool, toggle_times, toggle_flags, ts):
    """Membership indicator at each grid time from the probe's change log."""
    out = np.empty(len(ts), dtype=bool)
    for i, t in enumerate(ts):
        k = np.searchsorted(toggle_times, t, side="right")
        out[i] = bool(toggle_flags[k - 1]) if k > 0 else initial_member
    return out


def _survival_replica(args):
    (family, q0, p_init, horizon, seed, replica, hw, d, times, burn_in, boundary) = args
    origin = (0,) * d
    dom = Domain(tuple(-hw for _ in range(d)), tuple(2 * hw + 1 for _ in range(d)), boundary)
    cf = ClockField(seed, d, replica=replica)
    kw = dict(track_orange=True, olog_mode=1, orange_probe=origin,
              record_changes=False, stop_on_empty=True)
    if burn_in > 0.0:
        # tracking starts only after the burn-in phase, on the same field;
        # every healthy site at that moment is orange
        res0 = run_coupled(family, dom, [("cp", q0, ("bernoulli", p_init, 0))], burn_in, cf,
                           record_changes=False)
        st = res0.trajectories[0].final
        res = run_coupled(family, dom, [("cp", q0, st)], burn_in + horizon, cf,
                          t_start=burn_in, **kw)
    else:
        res = run_coupled(family, dom, [("cp", q0, ("bernoulli", p_init, 0))], horizon, cf, **kw)
    lay = res.layout
    oi = int(np.nonzero((lay.coords == np.asarray(origin)).all(axis=1))[0][0])
    init_member = bool(res.trajectories[0].init[oi] == 0)
    ot, orr, ofl = res.orange_log
    sel = orr == oi
    abs_times = times + burn_in  # curve times are measured from tracking start
    member = _probe_membership(init_member, ot[sel], ofl[sel], abs_times)
    if res.empty_time is not None:
        member[abs_times >= res.empty_time] = False
    return member


def survival_curve(
    family: UpdateFamily,
    q0: float,
    p_init: float,
    horizon: float,
    replicas: int,
    seed: int,
    *,
    d: int = 2,
    times=None,
    halfwidth: int | None = None,
    buffer_speed: float = 2.0,
    margin: int = 8,
    burn_in: float = 0.0,
    validate: int = 0,
    boundary: str = "ones",
    jobs: int = 1,
) -> SurvivalCurve:
    """Monte Carlo estimate of P(origin is orange at time t) for the
    single-parameter contact process started from a Bernoulli(p_init) state
    with every healthy site initially orange.

    The box is a finite stand-in for the full lattice: its half-width covers
    buffer_speed * horizon + margin sites so that nothing outside can reach
    the origin within the horizon; `validate` > 0 re-runs that many replicas
    on a doubled box and demands identical probe traces.
    """
    if times is None:
        times = np.geomspace(max(horizon / 64.0, 0.25), horizon, 12)
    times = np.asarray(times, dtype=float)
    hw = halfwidth if halfwidth is not None else int(math.ceil(buffer_speed * horizon * max(family.norm, 1.0))) + margin

    def args_for(replica, hw_):
        return (family, q0, p_init, horizon, seed, replica, hw_, d, times, burn_in, boundary)

    validated = None
    if validate > 0:
        validated = True
        for r in range(validate):
            if not np.array_equal(_survival_replica(args_for(r, hw)),
                                  _survival_replica(args_for(r, 2 * hw))):
                validated = False
                break

    members = parallel_map(_survival_replica, [args_for(r, hw) for r in range(replicas)], jobs)
    counts = np.sum(np.asarray(members, dtype=np.int64), axis=0)
    p = counts / replicas
    ci = np.array([wilson_interval(int(c), replicas) for c in counts])
    return SurvivalCurve(times, p, ci[:, 0], ci[:, 1], counts, replicas, validated)
