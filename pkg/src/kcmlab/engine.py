"""Event-driven simulation of the constrained spin models and contact
processes, all fed by one shared clock field.

The engine never discretises time: it walks the globally ordered stream of
clock events and applies the single-site update at each one.  Several
processes (with different parameters or initial conditions) can ride the
same stream in one pass, which is what makes dominations, discrepancy
inclusions and coupling certificates checkable exactly, event by event.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backend import coupled_loop
from .clocks import ClockField
from .lattice import Domain, UpdateFamily

KCM = 1
CP = 0

_KIND_CODE = {"kcm": KCM, "cp": CP}


class Layout:
    """Precomputed geometry of a (family, domain) pair.

    Interior sites are numbered in row-major (lexicographic) order; the
    state lives on an extended array with a boundary shell of width equal to
    the family range, so constraint reads never branch.
    """

    def __init__(self, family: UpdateFamily, domain: Domain):
        self.family = family
        self.domain = domain
        d = domain.dim
        if family.dim != d:
            raise ValueError("family and domain dimension mismatch")
        w = family.range
        self.width = w
        self.ext_shape = tuple(s + 2 * w for s in domain.shape)
        strides = [1] * d
        for i in range(d - 2, -1, -1):
            strides[i] = strides[i + 1] * self.ext_shape[i + 1]
        self.strides = tuple(strides)
        self.ext_size = int(np.prod(self.ext_shape))

        self.coords = np.asarray(domain.sites(), dtype=np.int64)  # (m, d) lexicographic
        rel = self.coords - np.asarray(domain.lo, dtype=np.int64) + w
        self.int2ext = rel @ np.asarray(strides, dtype=np.int64)

        ptr = [0]
        deltas = []
        for r in family.rules:
            for o in r.offsets:
                deltas.append(sum(c * s for c, s in zip(o, strides)))
            ptr.append(len(deltas))
        self.rule_ptr = np.asarray(ptr, dtype=np.int32)
        self.rule_deltas = np.asarray(deltas, dtype=np.int64)
        self.ball_deltas = np.asarray(
            [sum(c * s for c, s in zip(o, strides)) for o in family.ball_offsets()],
            dtype=np.int64,
        )

    def boundary_template(self) -> np.ndarray:
        """Extended uint8 array with the shell filled per the boundary
        condition and the interior zeroed."""
        ext = np.zeros(self.ext_shape, dtype=np.uint8)
        b = self.domain.boundary
        if b == "ones":
            ext[...] = 1
        elif isinstance(b, dict):
            w = self.width
            lo = self.domain.lo
            for site, bit in b.items():
                idx = tuple(c - l + w for c, l in zip(site, lo))
                if all(0 <= i < s for i, s in zip(idx, self.ext_shape)):
                    ext[idx] = 1 if bit else 0
            self._check_explicit_coverage(b)
        inner = tuple(slice(self.width, self.width + s) for s in self.domain.shape)
        ext[inner] = 0
        return ext.reshape(-1)

    def _check_explicit_coverage(self, bmap):
        # every exterior site actually readable by some rule offset must be given
        w = self.width
        lo = np.asarray(self.domain.lo)
        need = set()
        offsets = {o for r in self.family.rules for o in r.offsets}
        for o in offsets:
            shifted = self.coords + np.asarray(o, dtype=np.int64)
            outside = ~np.all(
                (shifted >= lo) & (shifted < lo + np.asarray(self.domain.shape)), axis=1
            )
            for s in map(tuple, shifted[outside]):
                need.add(s)
        missing = [s for s in need if s not in bmap]
        if missing:
            raise ValueError(f"explicit boundary misses {len(missing)} readable exterior sites, e.g. {missing[0]}")

    def interior_view(self, ext_flat: np.ndarray) -> np.ndarray:
        return ext_flat[self.int2ext]

    def parse_init(self, init, clocks: ClockField, channel: int = 0) -> np.ndarray:
        """Initial condition over interior sites (row-major uint8)."""
        m = self.coords.shape[0]
        if isinstance(init, str):
            if init == "ones":
                return np.ones(m, dtype=np.uint8)
            if init == "zeros":
                return np.zeros(m, dtype=np.uint8)
            raise ValueError(f"unknown init {init!r}")
        if isinstance(init, tuple) and init and init[0] == "bernoulli":
            p = float(init[1])
            ch = init[2] if len(init) > 2 else channel
            return clocks.bernoulli_field(self.coords, p, channel=ch)
        arr = np.asarray(init, dtype=np.uint8)
        if arr.shape == tuple(self.domain.shape):
            return arr.reshape(-1).copy()
        if arr.shape == (m,):
            return arr.copy()
        raise ValueError("init array shape does not match the domain")


@dataclass
class Trajectory:
    """Piecewise-constant record of one process: initial state plus the
    ordered list of state changes.  Frames at any time are replayed from
    these; the clock provenance is kept so the full event stream (needed
    e.g. by the orange tracker) can be regenerated."""

    family: UpdateFamily
    domain: Domain
    kind: str
    q: float
    horizon: float
    seed: int
    replica: int
    init: np.ndarray          # interior uint8, row-major
    times: np.ndarray         # change times
    rows: np.ndarray          # interior site rows
    newbits: np.ndarray
    final: np.ndarray         # interior uint8 at the horizon
    meta: dict = field(default_factory=dict)

    def frame_at(self, t: float) -> np.ndarray:
        """State (interior, row-major) at time t (changes at time <= t applied)."""
        if t < 0 or t > self.horizon:
            raise ValueError("time outside the recorded horizon")
        state = self.init.copy()
        n = np.searchsorted(self.times, t, side="right")
        # later writes win; applying in order is fine
        state[self.rows[:n]] = self.newbits[:n]
        return state

    def frames(self, ts) -> list[np.ndarray]:
        return [self.frame_at(t) for t in ts]

    def grid(self) -> np.ndarray:
        return self.frame_at(self.horizon).reshape(self.domain.shape)

    def zero_intervals(self):
        """Per-site list of half-open intervals [a, b) during which the site
        is healthy, covering [0, horizon]."""
        m = self.init.shape[0]
        out = [[] for _ in range(m)]
        start = [0.0 if self.init[i] == 0 else None for i in range(m)]
        for t, r, nb in zip(self.times, self.rows, self.newbits):
            r = int(r)
            if nb == 0 and start[r] is None:
                start[r] = float(t)
            elif nb == 1 and start[r] is not None:
                out[r].append((start[r], float(t)))
                start[r] = None
        for i in range(m):
            if start[i] is not None:
                out[i].append((start[i], float(self.horizon)))
        return out

    def to_events_json(self):
        return [
            {"t": float(t), "site": [int(c) for c in self.domain.sites()[int(r)]], "new": int(b)}
            for t, r, b in zip(self.times, self.rows, self.newbits)
        ]


@dataclass
class CoupledResult:
    layout: Layout
    horizon: float
    trajectories: list
    empty_time: float | None          # first time the orange set is empty
    orange_final: np.ndarray | None   # interior uint8
    orange_log: tuple                 # (times, rows, newflags) per tracked change
    violations: list                  # (time, site tuple, kind, process index)
    n_violations: int
    first_change: list                # per process: time of first change in probe box
    n_events: int
    stopped_early: bool


def _viol_kind_name(code):
    return {0: "domination", 1: "inclusion"}[int(code)]


def run_coupled(
    family: UpdateFamily,
    domain: Domain,
    processes,                 # list of (kind, q, init)
    horizon: float,
    clocks: ClockField,
    *,
    track_orange: bool = False,
    orange_init=None,          # None -> healthy sites of process 0's init
    dom_pairs=(),              # (lo, hi) process pairs: require lo <= hi sitewise
    inc_ref: int = -1,         # reference process for the discrepancy-inclusion check
    inc_procs=(),
    record_changes: bool = True,
    olog_mode: int = 0,        # 0 none, 1 probe only, 2 full
    orange_probe=None,         # site whose orange membership is logged (mode 1)
    probe_box=None,            # (lo, hi) inclusive site box: first-change detection
    stop_on_empty: bool = False,
    slab: float = 64.0,
    viol_cap: int = 64,
    layout: Layout | None = None,
    t_start: float = 0.0,
) -> CoupledResult:
    """Drive several processes over one shared clock stream.

    Event order is (time, site) with lexicographic site tie-break, so every
    run with the same clock field sees the identical total order.  With
    t_start > 0 the run covers (t_start, horizon] of the same field, so a
    run can be continued phase by phase (hand the previous finals in as
    inits); times are always absolute.
    """
    if horizon < t_start or t_start < 0:
        raise ValueError("need 0 <= t_start <= horizon")
    lay = layout if layout is not None else Layout(family, domain)
    K = len(processes)
    if K == 0:
        raise ValueError("need at least one process")

    kinds = np.zeros(K, dtype=np.uint8)
    qs = np.zeros(K, dtype=np.float64)
    inits = []
    template = lay.boundary_template()
    bits = np.empty((K, lay.ext_size), dtype=np.uint8)
    for k, (kind, q, init) in enumerate(processes):
        if not 0.0 <= q <= 1.0:
            raise ValueError("q must lie in [0, 1]")
        kinds[k] = _KIND_CODE[kind]
        qs[k] = q
        iv = lay.parse_init(init, clocks, channel=k)
        inits.append(iv)
        bits[k] = template
        bits[k, lay.int2ext] = iv

    if track_orange:
        if kinds[0] != CP:
            raise ValueError("orange tracking requires process 0 to be a contact process")
        orange = np.zeros(lay.ext_size, dtype=np.uint8)
        o0 = (inits[0] == 0).astype(np.uint8) if orange_init is None else np.asarray(orange_init, dtype=np.uint8).reshape(-1)
        orange[lay.int2ext] = o0
        ocount = int(o0.sum())
    else:
        orange = np.zeros(0, dtype=np.uint8)
        ocount = 0

    dom_lo = np.asarray([p[0] for p in dom_pairs], dtype=np.int32)
    dom_hi = np.asarray([p[1] for p in dom_pairs], dtype=np.int32)
    inc_procs_arr = np.asarray(list(inc_procs), dtype=np.int32)

    if probe_box is not None:
        probe_mask = np.zeros(lay.ext_size, dtype=np.uint8)
        plo, phi = probe_box
        sel = np.all((lay.coords >= np.asarray(plo)) & (lay.coords <= np.asarray(phi)), axis=1)
        probe_mask[lay.int2ext[sel]] = 1
    else:
        probe_mask = np.zeros(0, dtype=np.uint8)

    if orange_probe is not None:
        rel = tuple(c - l + lay.width for c, l in zip(orange_probe, domain.lo))
        probe_ext = int(sum(i * s for i, s in zip(rel, lay.strides)))
    else:
        probe_ext = -1

    first_change = np.full(K, -1, dtype=np.int64)
    viol_evt = np.zeros(viol_cap, dtype=np.int64)
    viol_site = np.zeros(viol_cap, dtype=np.int64)
    viol_kind = np.zeros(viol_cap, dtype=np.int32)
    viol_proc = np.zeros(viol_cap, dtype=np.int32)

    state = None
    t0 = t_start
    evt_base = 0
    total_processed = 0
    chg_t, chg_r, chg_p, chg_b = [], [], [], []
    olog_t, olog_r, olog_f = [], [], []
    empty_evt_global = -1
    empty_before_start = track_orange and ocount == 0
    n_viol_total = 0
    viol_records = []
    stopped = False
    first_change_time = [None] * K

    while t0 < horizon and not stopped:
        t1 = min(t0 + slab, horizon)
        times, rows, marks, state = clocks.merged(lay.coords, t0, t1, state=state)
        sites_ext = lay.int2ext[rows]  # rows index the row-major interior order
        n = times.shape[0]
        if record_changes:
            chg_evt = np.zeros(n * K, dtype=np.int64)
            chg_proc = np.zeros(n * K, dtype=np.int32)
            chg_new = np.zeros(n * K, dtype=np.uint8)
        else:
            chg_evt = np.zeros(0, dtype=np.int64)
            chg_proc = np.zeros(0, dtype=np.int32)
            chg_new = np.zeros(0, dtype=np.uint8)
        if olog_mode:
            olog_evt = np.zeros(n, dtype=np.int64)
            olog_new = np.zeros(n, dtype=np.uint8)
        else:
            olog_evt = np.zeros(0, dtype=np.int64)
            olog_new = np.zeros(0, dtype=np.uint8)

        n_chg, n_olog, n_viol, ocount, empty_evt, processed = coupled_loop(
            bits, kinds, qs,
            times, sites_ext, marks,
            evt_base,
            lay.rule_ptr, lay.rule_deltas,
            orange, ocount, lay.ball_deltas,
            dom_lo, dom_hi,
            int(inc_ref), inc_procs_arr,
            probe_mask, int(olog_mode), probe_ext,
            int(record_changes), int(stop_on_empty),
            chg_evt, chg_proc, chg_new,
            olog_evt, olog_new,
            viol_evt, viol_site, viol_kind, viol_proc,
            first_change,
        )
        if n_chg:
            idx = chg_evt[:n_chg] - evt_base
            chg_t.append(times[idx])
            chg_r.append(rows[idx])
            chg_p.append(chg_proc[:n_chg].copy())
            chg_b.append(chg_new[:n_chg].copy())
        if n_olog:
            idx = olog_evt[:n_olog] - evt_base
            olog_t.append(times[idx])
            olog_r.append(rows[idx])
            olog_f.append(olog_new[:n_olog].copy())
        # the kernel restarts its violation buffer each slab; keep at most
        # viol_cap records overall but count every violation
        for j in range(min(int(n_viol), viol_cap)):
            if len(viol_records) >= viol_cap:
                break
            t = times[viol_evt[j] - evt_base]
            site = tuple(int(c) for c in lay.coords[rows[viol_evt[j] - evt_base]])
            viol_records.append((float(t), site, _viol_kind_name(viol_kind[j]), int(viol_proc[j])))
        n_viol_total += int(n_viol)
        if empty_evt >= 0 and empty_evt_global < 0 and not empty_before_start:
            empty_evt_global = empty_evt
            empty_time_val = float(times[empty_evt - evt_base])
        for k in range(K):
            if first_change[k] >= 0 and first_change_time[k] is None:
                first_change_time[k] = float(times[first_change[k] - evt_base])
        total_processed += processed
        evt_base += n
        t0 = t1
        if stop_on_empty and track_orange and ocount == 0:
            stopped = True

    if empty_before_start:
        empty_time = 0.0
    elif empty_evt_global >= 0:
        empty_time = empty_time_val
    else:
        empty_time = None

    times_all = np.concatenate(chg_t) if chg_t else np.empty(0)
    rows_all = np.concatenate(chg_r) if chg_r else np.empty(0, dtype=np.int64)
    procs_all = np.concatenate(chg_p) if chg_p else np.empty(0, dtype=np.int32)
    bits_all = np.concatenate(chg_b) if chg_b else np.empty(0, dtype=np.uint8)

    trajectories = []
    kind_names = {v: k for k, v in _KIND_CODE.items()}
    for k in range(K):
        sel = procs_all == k
        trajectories.append(
            Trajectory(
                family=family,
                domain=domain,
                kind=kind_names[int(kinds[k])],
                q=float(qs[k]),
                horizon=horizon,
                seed=clocks.seed,
                replica=clocks.replica,
                init=inits[k],
                times=times_all[sel].copy(),
                rows=rows_all[sel].copy(),
                newbits=bits_all[sel].copy(),
                final=lay.interior_view(bits[k]).copy(),
                meta={"recorded": bool(record_changes), "t_start": t_start},
            )
        )

    ol = (
        np.concatenate(olog_t) if olog_t else np.empty(0),
        np.concatenate(olog_r) if olog_r else np.empty(0, dtype=np.int64),
        np.concatenate(olog_f) if olog_f else np.empty(0, dtype=np.uint8),
    )
    return CoupledResult(
        layout=lay,
        horizon=horizon,
        trajectories=trajectories,
        empty_time=empty_time,
        orange_final=(orange[lay.int2ext].copy() if track_orange else None),
        orange_log=ol,
        violations=viol_records,
        n_violations=n_viol_total,
        first_change=first_change_time,
        n_events=total_processed,
        stopped_early=stopped,
    )


def run_kcm(family, domain, init, q, horizon, clocks, **kw) -> Trajectory:
    """Constrained dynamics: a site resamples to 1 with probability q only
    when some rule around it is fully infected."""
    res = run_coupled(family, domain, [("kcm", q, init)], horizon, clocks, **kw)
    t = res.trajectories[0]
    t.meta["produced_by"] = "run_kcm"
    return t


def run_cp(family, domain, init, q, horizon, clocks, **kw) -> Trajectory:
    """Contact process: writes of 0 need no constraint."""
    res = run_coupled(family, domain, [("cp", q, init)], horizon, clocks, **kw)
    t = res.trajectories[0]
    t.meta["produced_by"] = "run_cp"
    return t
