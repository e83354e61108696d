"""Renormalised space-time boxes: the geometry that turns the single-rule
contact process into a corner-rule closure process with death, and into a
last-passage field.

All geometric predicates are integer arithmetic.  With integer direction
vectors D_i and the orthogonalised integer vectors W_i (W_i proportional to
the component of D_i orthogonal to the span of the others), the box index
of a lattice site a along axis i is floor(<a, D_i> / N_i) with
N_i = R * <W_i, D_i>: the irrational normalisations of the unit-vector
picture cancel, so box membership, the covering inclusion and the sweep
conditions are all decided exactly.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .clocks import ClockField
from .engine import run_coupled
from .lattice import Domain, UpdateFamily, UpdateRule, dot, primitive


class GeometryError(ValueError):
    pass


def _orthogonal_complement(dirs, i):
    """Primitive integer vector proportional to the component of dirs[i]
    orthogonal to the span of the other directions (exact)."""
    d = len(dirs[0])
    others = [dirs[j] for j in range(len(dirs)) if j != i]
    u = [Fraction(c) for c in dirs[i]]
    if others:
        k = len(others)
        gram = [[Fraction(dot(others[a], others[b])) for b in range(k)] for a in range(k)]
        rhs = [Fraction(dot(others[a], dirs[i])) for a in range(k)]
        coef = _solve_exact(gram, rhs)
        if coef is None:
            raise GeometryError("directions are linearly dependent")
        for a in range(k):
            for c in range(d):
                u[c] -= coef[a] * others[a][c]
    if all(v == 0 for v in u):
        raise GeometryError("directions are linearly dependent")
    den = 1
    for v in u:
        den = den * v.denominator // math.gcd(den, v.denominator)
    return primitive(tuple(int(v * den) for v in u))


def _solve_exact(a, b):
    """Solve a square rational system by Gaussian elimination; None if singular."""
    n = len(b)
    m = [row[:] + [b[i]] for i, row in enumerate(a)]
    for c in range(n):
        piv = next((r for r in range(c, n) if m[r][c] != 0), None)
        if piv is None:
            return None
        m[c], m[piv] = m[piv], m[c]
        inv = m[c][c]
        m[c] = [v / inv for v in m[c]]
        for r in range(n):
            if r != c and m[r][c] != 0:
                f = m[r][c]
                m[r] = [vr - f * vc for vr, vc in zip(m[r], m[c])]
    return [m[r][n] for r in range(n)]


@dataclass(frozen=True)
class BoxGeometry:
    """Space-time tessellation data.

    dirs[i] are the integer direction vectors (each keeping the oriented
    rule strictly in its negative half-space), ortho[i] the exact integer
    orthogonalisations, thresholds[i] = R * <ortho[i], dirs[i]> the integer
    box denominators; T is the time height and witness the common direction
    the sweep order uses.
    """

    rule: UpdateRule
    dirs: tuple
    ortho: tuple
    thresholds: tuple
    R: int
    T: float
    witness: tuple
    norm_sq: int     # squared family norm used in the covering inequality

    def __post_init__(self):
        object.__setattr__(self, "_base_cache", {})

    @property
    def dim(self):
        return len(self.dirs)

    # -- exact predicates ---------------------------------------------------

    def box_of(self, site) -> tuple:
        return tuple(dot(site, self.dirs[i]) // self.thresholds[i] for i in range(self.dim))

    def box_of_sites(self, coords: np.ndarray) -> np.ndarray:
        dirs = np.asarray(self.dirs, dtype=np.int64)
        proj = coords @ dirs.T
        return proj // np.asarray(self.thresholds, dtype=np.int64)

    def base_sites(self, x) -> list:
        """Integer points of the box base with index x, lexicographic order."""
        x = tuple(int(c) for c in x)
        cached = self._base_cache.get(x)
        if cached is not None:
            return cached
        d = self.dim
        w = np.asarray(self.ortho, dtype=np.int64)
        base = np.asarray(x, dtype=np.int64) @ (self.R * w)
        corners = [base + np.asarray(eps, dtype=np.int64) @ (self.R * w)
                   for eps in itertools.product((0, 1), repeat=d)]
        lo = np.floor(np.min(corners, axis=0)).astype(np.int64) - 1
        hi = np.ceil(np.max(corners, axis=0)).astype(np.int64) + 1
        pts = np.stack(np.meshgrid(*[np.arange(l, h + 1) for l, h in zip(lo, hi)],
                                   indexing="ij"), axis=-1).reshape(-1, d)
        inside = np.all(self.box_of_sites(pts) == np.asarray(x, dtype=np.int64), axis=1)
        out = [tuple(p) for p in pts[inside]]
        self._base_cache[x] = out
        return out

    def window(self, tau: int):
        """Time window of height tau, as the half-open pair (lo, hi]."""
        return tau * self.T, (tau + 1) * self.T

    def sweep_order(self, sites) -> list:
        """Sites sorted by increasing witness projection, lexicographic
        tie-break (the deterministic refinement of the partial order)."""
        return sorted(sites, key=lambda s: (dot(s, self.witness), s))

    def verify(self):
        """Assert every geometric invariant; raises GeometryError."""
        d = self.dim
        dirs = [list(map(int, v)) for v in self.dirs]
        mat = [[Fraction(dirs[i][j]) for j in range(d)] for i in range(d)]
        if _solve_exact(mat, [Fraction(0)] * d) is None:
            raise GeometryError("direction vectors are linearly dependent")
        for i in range(d):
            for x in self.rule.offsets:
                if dot(x, self.dirs[i]) >= 0:
                    raise GeometryError(
                        f"rule offset {x} is not strictly below direction {self.dirs[i]}")
            for j in range(d):
                got = dot(self.ortho[i], self.dirs[j])
                if i != j and got != 0:
                    raise GeometryError(f"ortho[{i}] not orthogonal to dirs[{j}]")
                if i == j and got <= 0:
                    raise GeometryError("orthogonalisation flipped orientation")
            if self.thresholds[i] != self.R * dot(self.ortho[i], self.dirs[i]):
                raise GeometryError("threshold mismatch")
            # covering inclusion: R <W_i,D_i> must exceed norm * |D_i|
            lhs = self.thresholds[i] ** 2
            rhs = self.norm_sq * dot(self.dirs[i], self.dirs[i])
            if lhs <= rhs:
                raise GeometryError(
                    f"R = {self.R} too small: axis {i} fails the covering inequality "
                    f"(R*<W,D>)^2 = {lhs} <= norm^2*|D|^2 = {rhs}")
        for x in self.rule.offsets:
            if dot(x, self.witness) >= 0:
                raise GeometryError(f"witness {self.witness} does not orient the rule")
        if not (self.T > 0 and self.R >= 1):
            raise GeometryError("need T > 0 and R >= 1")

    def to_json(self) -> str:
        """Exact serialisation: every geometric quantity is an integer (a
        rational with denominator one in this parametrisation); only the
        time height is a float."""
        import json

        return json.dumps({
            "rule": [list(o) for o in self.rule.offsets],
            "dirs": [list(v) for v in self.dirs],
            "ortho": [list(v) for v in self.ortho],
            "thresholds": list(self.thresholds),
            "R": self.R,
            "T": self.T,
            "witness": list(self.witness),
            "norm_sq": self.norm_sq,
        })

    @staticmethod
    def from_json(text: str) -> "BoxGeometry":
        import json

        d = json.loads(text)
        geom = BoxGeometry(
            rule=UpdateRule(d["rule"]),
            dirs=tuple(tuple(v) for v in d["dirs"]),
            ortho=tuple(tuple(v) for v in d["ortho"]),
            thresholds=tuple(d["thresholds"]),
            R=int(d["R"]),
            T=float(d["T"]),
            witness=tuple(d["witness"]),
            norm_sq=int(d["norm_sq"]),
        )
        geom.verify()
        return geom

    def check_covering(self, x) -> bool:
        """Direct lattice check of the covering inclusion on box x: every
        rule offset of every base site lands in the lower 2^d neighbours."""
        xs = np.asarray(x, dtype=np.int64)
        for a in self.base_sites(x):
            for o in self.rule.offsets:
                b = tuple(ai + oi for ai, oi in zip(a, o))
                bx = self.box_of(b)
                if any(bx[i] not in (x[i] - 1, x[i]) for i in range(self.dim)):
                    return False
                # the proof also needs b strictly below a in witness order
                if dot(b, self.witness) >= dot(a, self.witness):
                    return False
        return True


def build_geometry(
    rule: UpdateRule,
    witness,
    R: int,
    T: float,
    *,
    norm_sq: int | None = None,
    perturbation_budget: int = 3,
    dirs=None,
) -> BoxGeometry:
    """Assemble and fully verify the box geometry.

    When `dirs` is not given, integer direction candidates are enumerated in
    a Euclidean ball of radius `perturbation_budget` around the scaled
    witness, kept when they leave every rule offset strictly negative,
    ordered by distance to the scaled witness (lexicographic tie-break), and
    greedily accepted while linearly independent.
    """
    d = rule.dim
    witness = primitive(witness)
    for x in rule.offsets:
        if dot(x, witness) >= 0:
            raise GeometryError(f"witness {witness} does not put offset {x} strictly below")
    nsq = int(norm_sq) if norm_sq is not None else rule.norm_sq

    if dirs is None:
        s = max(1, int(perturbation_budget))
        centre = tuple(s * c for c in witness)
        cands = []
        rejected = []
        rad2 = perturbation_budget * perturbation_budget
        for delta in itertools.product(range(-perturbation_budget, perturbation_budget + 1), repeat=d):
            if dot(delta, delta) > rad2:
                continue
            v = tuple(c + dl for c, dl in zip(centre, delta))
            if all(c == 0 for c in v):
                continue
            bad = next((x for x in rule.offsets if dot(x, v) >= 0), None)
            if bad is None:
                cands.append((dot(delta, delta), v))
            else:
                rejected.append((v, bad))
        cands.sort(key=lambda t: (t[0], t[1]))
        chosen = []
        for _, v in cands:
            trial = chosen + [v]
            mat = [[Fraction(c) for c in w] for w in trial]
            # accept iff trial has full row rank
            if _rank(mat) == len(trial):
                chosen.append(v)
            if len(chosen) == d:
                break
        if len(chosen) < d:
            detail = "; ".join(f"{v} violates <{x},u> < 0" for v, x in rejected[:3])
            raise GeometryError(
                f"only {len(chosen)} admissible directions within budget {perturbation_budget} "
                f"around {centre}: {detail or 'independence could not be reached'}")
        dirs = chosen
    dirs = tuple(primitive(v) for v in dirs)
    if len(dirs) != d:
        raise GeometryError(f"need exactly {d} directions")

    ortho = tuple(_orthogonal_complement(dirs, i) for i in range(d))
    thresholds = tuple(R * dot(ortho[i], dirs[i]) for i in range(d))
    geom = BoxGeometry(rule=rule, dirs=dirs, ortho=ortho, thresholds=thresholds,
                       R=int(R), T=float(T), witness=witness, norm_sq=nsq)
    geom.verify()
    return geom


def _rank(mat):
    if not mat:
        return 0
    m = [row[:] for row in mat]
    rows, cols = len(m), len(m[0])
    r = 0
    for c in range(cols):
        piv = next((i for i in range(r, rows) if m[i][c] != 0), None)
        if piv is None:
            continue
        m[r], m[piv] = m[piv], m[r]
        inv = m[r][c]
        m[r] = [v / inv for v in m[r]]
        for i in range(rows):
            if i != r and m[i][c] != 0:
                f = m[i][c]
                m[i] = [vi - f * vr for vi, vr in zip(m[i], m[r])]
        r += 1
        if r == rows:
            break
    return r


# ---------------------------------------------------------------------------
# event tables and good boxes
# ---------------------------------------------------------------------------


class EventTable:
    """Per-site event streams over a horizon, with on-demand extension.

    Wraps the clock field for the renormalisation predicates; with `coords`
    given, all those sites are generated in one vectorized pass.  Tests may
    override entries to probe locality (a good-box bit must not react to
    events outside its declared dependency region).
    """

    def __init__(self, clocks: ClockField, horizon: float, coords=None):
        self.clocks = clocks
        self.horizon = float(horizon)
        self._cache = {}
        self._overrides = {}
        self._coords = np.asarray(coords, dtype=np.int64) if coords is not None else None
        if self._coords is not None:
            self._bulk()

    def _bulk(self):
        keys = self.clocks.site_keys(self._coords)
        times, rows, marks, _ = self.clocks.generate(keys, self.horizon)
        starts = np.searchsorted(rows, np.arange(len(self._coords) + 1))
        for i, c in enumerate(map(tuple, self._coords)):
            self._cache[c] = (times[starts[i]:starts[i + 1]], marks[starts[i]:starts[i + 1]])
        self._cache.update(self._overrides)

    def events(self, site):
        site = tuple(int(c) for c in site)
        if site not in self._cache:
            self._cache[site] = self.clocks.stream(site, self.horizon)
        return self._cache[site]

    def override(self, site, times, marks):
        ent = (np.asarray(times, dtype=float), np.asarray(marks, dtype=float))
        self._overrides[tuple(site)] = ent
        self._cache[tuple(site)] = ent

    def extend(self, horizon: float):
        if horizon > self.horizon:
            self.horizon = horizon
            self._cache.clear()
            if self._coords is not None:
                self._bulk()
            self._cache.update(self._overrides)

    def in_window(self, site, lo, hi):
        times, marks = self.events(site)
        a, b = np.searchsorted(times, [lo, hi], side="right")
        return times[a:b], marks[a:b]


def _restrict(sites, domain: Domain | None):
    if domain is None:
        return list(sites)
    return [s for s in sites if domain.contains(s)]


def good_box(geom: BoxGeometry, table: EventTable, x, tau: int, q0: float,
             domain: Domain | None = None) -> bool:
    """The two renormalisation conditions at space index x, height tau >= 1.

    (i)  every mark over the 2^d lower bases during heights tau-1 and tau is
         at most q0 (no unconstrained kills anywhere they could matter);
    (ii) the base of x is swept during height tau-1 by per-site events in
         increasing witness order (greedy earliest-feasible choice in the
         lexicographically refined order).

    Sites outside `domain` (frozen boundary, when given) need no guarantee
    and are skipped.
    """
    if tau < 1:
        raise ValueError("good-box event needs tau >= 1")
    d = geom.dim
    lo_i, _ = geom.window(tau - 1)
    _, hi_i = geom.window(tau)
    if table.horizon < hi_i:
        table.extend(hi_i * 2)
    dep = set()
    for y in itertools.product((0, -1), repeat=d):
        dep.update(geom.base_sites(tuple(a + b for a, b in zip(x, y))))
    for z in _restrict(dep, domain):
        _, marks = table.in_window(z, lo_i, hi_i)
        if np.any(marks > q0):
            return False
    base = _restrict(geom.base_sites(x), domain)
    lo_ii, hi_ii = geom.window(tau - 1)
    prev = -np.inf
    for z in geom.sweep_order(base):
        times, _ = table.in_window(z, lo_ii, hi_ii)
        nxt = times[times > prev]
        if nxt.size == 0:
            return False
        prev = nxt[0]
    return True


# ---------------------------------------------------------------------------
# contact process -> closure-with-death implication check
# ---------------------------------------------------------------------------


@dataclass
class RenormCheckReport:
    violations: list            # (x, tau, site, window_lo)
    n_boxes: int
    n_heights: int
    n_infected_boxes: int       # renormalised 1s actually asserted
    n_cp_zero_boxes: int        # boxes that saw a healthy site (must be renormalised 0)
    initial_infected: int
    n_infected_later: int = 0   # assertions strictly above the base height
    good_bits: list = field(default_factory=list)   # (x, tau, good) for tau >= 1

    @property
    def passed(self):
        return not self.violations

    @property
    def vacuous(self):
        return self.n_infected_boxes == 0 or self.n_cp_zero_boxes == 0


def renormalised_bp_check(
    geom: BoxGeometry,
    domain: Domain,
    q0: float,
    tau_max: int,
    clocks: ClockField,
    init="ones",
) -> RenormCheckReport:
    """Exact implication check: build the renormalised corner-rule closure
    process with deaths at bad boxes and the prescribed initial condition,
    then verify on the shared trajectory that a renormalised 1 at (x, tau)
    forces the contact process to be fully infected on that space-time box.

    The contact process runs on `domain` with fully infected boundary;
    frozen exterior sites need no clock guarantees (they can never turn 0),
    so all conditions quantify over interior sites only.
    """
    if domain.boundary != "ones":
        raise ValueError("the implication check is set up for the fully infected boundary")
    d = geom.dim
    fam = UpdateFamily([geom.rule], d)
    horizon = (tau_max + 1) * geom.T
    traj = run_cp_for_renorm(fam, domain, init, q0, horizon, clocks)
    table = EventTable(clocks, horizon)

    coords = [tuple(c) for c in domain.sites()]
    boxes = sorted({geom.box_of(s) for s in coords})
    box_set = set(boxes)

    # initial renormalised state: base fully infected and no kill marks in
    # the first height
    w0_lo, w0_hi = geom.window(0)
    init_bits = traj.init
    site_row = {s: i for i, s in enumerate(coords)}
    omega = {}
    for x in boxes:
        base = _restrict(geom.base_sites(x), domain)
        ok = all(init_bits[site_row[z]] == 1 for z in base)
        if ok:
            for z in base:
                _, marks = table.in_window(z, w0_lo, w0_hi)
                if np.any(marks > q0):
                    ok = False
                    break
        omega[x] = 1 if ok else 0
    initial_infected = sum(omega.values())

    corner = [y for y in itertools.product((0, -1), repeat=d) if any(y)]
    zero_iv = traj.zero_intervals()

    def box_has_zero(x, tau):
        lo = tau * geom.T
        hi = (tau + 1) * geom.T
        for z in _restrict(geom.base_sites(x), domain):
            for a, b in zero_iv[site_row[z]]:
                if a < hi and b > lo:
                    return True, z, lo
        return False, None, None

    violations = []
    n_inf = 0
    n_later = 0
    n_zero = 0
    good_bits = []
    states = {0: omega}
    for tau in range(0, tau_max + 1):
        if tau > 0:
            prev = states[tau - 1]
            cur = {}
            for x in boxes:
                good = good_box(geom, table, x, tau, q0, domain)
                good_bits.append((x, tau, int(good)))
                if not good:
                    cur[x] = 0
                    continue
                if prev[x] == 1:
                    cur[x] = 1
                else:
                    cur[x] = int(all(prev.get(tuple(a + b for a, b in zip(x, y)), 1) == 1
                                     for y in corner))
            states[tau] = cur
        st = states[tau]
        for x in boxes:
            has_zero, z, lo = box_has_zero(x, tau)
            if has_zero:
                n_zero += 1
                if st[x] == 1:
                    violations.append((x, tau, z, lo))
            if st[x] == 1:
                n_inf += 1
                if tau > 0:
                    n_later += 1
    return RenormCheckReport(violations, len(boxes), tau_max + 1, n_inf, n_zero,
                             initial_infected, n_later, good_bits)


def run_cp_for_renorm(fam, domain, init, q0, horizon, clocks):
    res = run_coupled(fam, domain, [("cp", q0, init)], horizon, clocks)
    return res.trajectories[0]


# ---------------------------------------------------------------------------
# passage times
# ---------------------------------------------------------------------------


@dataclass
class RenormPassageField:
    geom: BoxGeometry
    xi: list                    # renormalised indices with base meeting the domain
    t: dict                     # x -> passage time (0 off xi)

    def t_of(self, x):
        return self.t.get(tuple(x), 0.0)

    def max_time(self):
        return max(self.t.values()) if self.t else 0.0


def renorm_passage_times(geom: BoxGeometry, domain: Domain, q0: float,
                         clocks: ClockField, horizon0: float | None = None) -> RenormPassageField:
    """First times after which each renormalised box is swept by kill marks
    (marks strictly above q0) in increasing witness order, starting after
    all its lower neighbours' times.

    The recursion runs in increasing coordinate-sum order; neighbours off
    the index set contribute time 0.
    """
    if not 0.0 <= q0 < 1.0:
        raise ValueError("passage times need kill marks: q0 must lie in [0, 1)")
    d = geom.dim
    coords_arr = np.asarray(domain.sites(), dtype=np.int64)
    coords = [tuple(c) for c in coords_arr]
    xi = sorted({geom.box_of(s) for s in coords}, key=lambda x: (sum(x), x))
    lower = [y for y in itertools.product((-1, 0), repeat=d) if any(y)]
    if horizon0 is None:
        # expected depth of the recursion times the mean sweep length, padded
        dirs = np.asarray(geom.dirs, dtype=np.int64)
        proj = coords_arr @ dirs.T
        levels = sum(int(proj[:, i].max() - proj[:, i].min()) // geom.thresholds[i] + 1
                     for i in range(d))
        base = max(len(geom.base_sites(x)) for x in xi[:4])
        horizon0 = 1.6 * levels * base / max(1e-9, 1.0 - q0) + 16.0 * geom.T

    # slab-wise generation keeps memory at one time-slab of raw events;
    # only the kill marks (the ~(1-q0) fraction that matter here) are kept
    keys = clocks.site_keys(coords_arr)
    m = len(coords)
    kills = [[] for _ in range(m)]
    state = None
    generated = 0.0
    slab = max(32.0, min(512.0, horizon0 / 8.0))

    def extend_to(target):
        nonlocal state, generated
        while generated < target:
            hi = generated + slab
            times, rows, marks, state = clocks.generate(keys, hi, state)
            sel = marks > q0
            times, rows = times[sel], rows[sel]
            starts = np.searchsorted(rows, np.arange(m + 1))
            for i in range(m):
                if starts[i + 1] > starts[i]:
                    kills[i].append(times[starts[i]:starts[i + 1]])
            generated = hi

    extend_to(horizon0)
    flat = [np.concatenate(k) if k else np.empty(0) for k in kills]
    row_of = {z: i for i, z in enumerate(coords)}
    t = {}
    for x in xi:
        tilde = 0.0
        for y in lower:
            nb = tuple(a + b for a, b in zip(x, y))
            tilde = max(tilde, t.get(nb, 0.0))
        base = geom.sweep_order(_restrict(geom.base_sites(x), domain))
        while True:
            prev = tilde
            ok = True
            for z in base:
                arr = flat[row_of[z]]
                k = np.searchsorted(arr, prev, side="right")
                if k >= arr.size:
                    ok = False
                    break
                prev = float(arr[k])
            if ok:
                t[x] = prev
                break
            extend_to(generated * 2)
            flat = [np.concatenate(k) if k else np.empty(0) for k in kills]
    return RenormPassageField(geom, xi, t)


@dataclass
class PassageCouplingReport:
    violations: list            # (site, disagreement_end, threshold)
    max_passage: float
    n_sites: int

    @property
    def passed(self):
        return not self.violations


def passage_coupling_check(geom: BoxGeometry, domain: Domain, q0: float,
                           clocks: ClockField, pf: RenormPassageField | None = None,
                           slack: float = 1.05) -> PassageCouplingReport:
    """Exact verification that the two extreme contact processes agree on
    each box base from that box's passage time onward (shared clocks)."""
    if domain.boundary != "ones":
        raise ValueError("passage times are defined for the fully infected boundary")
    if pf is None:
        pf = renorm_passage_times(geom, domain, q0, clocks)
    horizon = pf.max_time() * slack + 1.0
    fam = UpdateFamily([geom.rule], geom.dim)
    res = run_coupled(
        fam, domain,
        [("cp", q0, "ones"), ("cp", q0, "zeros")],
        horizon, clocks,
        dom_pairs=[(1, 0)],  # attractiveness: the all-zeros copy never exceeds the all-ones one
    )
    t1, t0v = res.trajectories[0], res.trajectories[1]
    coords = [tuple(c) for c in domain.sites()]
    thresholds = np.asarray([pf.t_of(geom.box_of(s)) for s in coords])

    m = len(coords)
    # per-site disagreement intervals from the two change logs; both copies
    # can flip at one shared clock event, so changes are grouped by
    # (time, site) before the states are compared
    state1 = t1.init.astype(np.int8).copy()
    state0 = t0v.init.astype(np.int8).copy()
    disagree_since = np.where(state1 != state0, 0.0, np.nan)
    last_end = np.zeros(m)  # end of the latest nonempty disagreement interval
    events = sorted(
        [(float(t), int(r), 0, int(b)) for t, r, b in zip(t1.times, t1.rows, t1.newbits)]
        + [(float(t), int(r), 1, int(b)) for t, r, b in zip(t0v.times, t0v.rows, t0v.newbits)]
    )
    i = 0
    while i < len(events):
        t, r = events[i][0], events[i][1]
        while i < len(events) and events[i][0] == t and events[i][1] == r:
            _, _, which, b = events[i]
            if which == 0:
                state1[r] = b
            else:
                state0[r] = b
            i += 1
        if state1[r] != state0[r]:
            if np.isnan(disagree_since[r]):
                disagree_since[r] = t
        else:
            if not np.isnan(disagree_since[r]):
                if t > disagree_since[r]:  # zero-length excursions do not count
                    last_end[r] = max(last_end[r], t)
                disagree_since[r] = np.nan
    viol = []
    for i in range(m):
        if not np.isnan(disagree_since[i]):
            last_end[i] = horizon  # still disagreeing at the horizon
        if last_end[i] > thresholds[i]:
            viol.append((coords[i], float(last_end[i]), float(thresholds[i])))
    return PassageCouplingReport(viol, pf.max_time(), m)


# ---------------------------------------------------------------------------
# warm-up density
# ---------------------------------------------------------------------------


@dataclass
class WarmupEstimate:
    T: float
    density: float
    ci: tuple
    n_boxes: int
    replicas: int


def measure_warmup(
    family: UpdateFamily,
    q: float,
    p: float,
    R: int,
    T_list,
    boxes_per_side: int,
    replicas: int,
    seed: int,
    *,
    d: int = 2,
    margin: int | None = None,
) -> list[WarmupEstimate]:
    """Fraction of renormalised R-cells fully infected by the constrained
    dynamics at each time in T_list, started from a Bernoulli(p) state.

    The measured cells sit in the middle of a larger box with healthy
    boundary; `margin` buffers the window from the boundary (healthy
    boundary only suppresses infection, so the estimate errs low).
    """
    from .stats import wilson_interval

    t_max = max(T_list)
    mar = margin if margin is not None else int(math.ceil(t_max)) + 4
    side = boxes_per_side * R + 2 * mar
    dom = Domain((0,) * d, (side,) * d, boundary="zeros")
    succ = {T: 0 for T in T_list}
    total = 0
    for rep in range(replicas):
        cf = ClockField(seed, d, replica=rep)
        traj = run_coupled(family, dom, [("kcm", q, ("bernoulli", p, 0))], t_max, cf).trajectories[0]
        for T in T_list:
            frame = traj.frame_at(T).reshape(dom.shape)
            inner = frame[(slice(mar, mar + boxes_per_side * R),) * d]
            cells = _cellify(inner, boxes_per_side, R, d)
            full = np.all(cells == 1, axis=tuple(range(d, 2 * d)))
            succ[T] += int(full.sum())
        total += boxes_per_side ** d
    out = []
    for T in T_list:
        lo, hi = wilson_interval(succ[T], total)
        out.append(WarmupEstimate(T=float(T), density=succ[T] / total, ci=(lo, hi),
                                  n_boxes=total, replicas=replicas))
    return out


def _cellify(arr: np.ndarray, nb: int, R: int, d: int) -> np.ndarray:
    """Reshape a (nb*R,)*d array into (nb,)*d cells of shape (R,)*d."""
    shape = []
    for _ in range(d):
        shape.extend([nb, R])
    moved = arr.reshape(shape)
    order = list(range(0, 2 * d, 2)) + list(range(1, 2 * d, 2))
    return np.transpose(moved, order)
