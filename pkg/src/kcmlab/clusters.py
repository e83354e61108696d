"""Cluster geometry: k-connected components, the lattice regularisation of
point sets, chain extraction over decorated sets, and empirical
cluster-diameter tails.

Distance thresholds are carried as squared values (`k_sq`, integer or
Fraction), so every adjacency and diameter comparison is exact integer
arithmetic; Euclidean diameters only turn into floats at reporting time.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .stats import wilson_interval


def ball_offsets(k_sq, dim: int, include_zero: bool = False):
    """Integer vectors with squared norm <= k_sq (k_sq rational)."""
    if k_sq < 0:
        raise ValueError("k_sq must be >= 0")
    r = int(math.isqrt(int(k_sq)))
    out = []
    for o in itertools.product(range(-r, r + 1), repeat=dim):
        n2 = sum(c * c for c in o)
        if n2 <= k_sq and (include_zero or any(o)):
            out.append(o)
    return out


def dist_sq(a, b) -> int:
    return sum((x - y) * (x - y) for x, y in zip(a, b))


def diam_sq(points) -> int:
    """Exact squared Euclidean diameter; -1 stands in for the empty set."""
    pts = list(points)
    if not pts:
        return -1
    arr = np.asarray(pts, dtype=np.int64)
    if len(arr) > 512:
        arr = _extreme_candidates(arr)
    best = 0
    for i in range(len(arr) - 1):
        d = arr[i + 1:] - arr[i]
        best = max(best, int((d * d).sum(axis=1).max()))
    return best


def _extreme_candidates(arr: np.ndarray) -> np.ndarray:
    """Convex hull vertices (diameter endpoints are always among them); on
    degenerate inputs fall back to the full set."""
    try:
        from scipy.spatial import ConvexHull

        return arr[np.unique(ConvexHull(arr.astype(float)).vertices)]
    except Exception:
        return arr


def k_component(cloud, seed, k_sq) -> set:
    """Maximal subset of the cloud reachable from `seed` via hops of squared
    length <= k_sq (breadth-first search over the offset ball)."""
    pts = {tuple(int(c) for c in p) for p in cloud}
    seed = tuple(int(c) for c in seed)
    if seed not in pts:
        raise ValueError("seed is not in the cloud")
    dim = len(seed)
    offs = ball_offsets(k_sq, dim)
    comp = {seed}
    frontier = [seed]
    while frontier:
        nxt = []
        for p in frontier:
            for o in offs:
                q = tuple(a + b for a, b in zip(p, o))
                if q in pts and q not in comp:
                    comp.add(q)
                    nxt.append(q)
        frontier = nxt
    return comp


def is_k_connected(points, k_sq) -> bool:
    pts = [tuple(int(c) for c in p) for p in points]
    if not pts:
        return True
    return len(k_component(pts, pts[0], k_sq)) == len(set(pts))


# ---------------------------------------------------------------------------
# regularisation and chains
# ---------------------------------------------------------------------------


def _within_regularised_radius(d2: int, diam2: int) -> bool:
    """Exact test of d(x,Z) <= 3(1 + diam(Z)) given squared quantities:
    d2 <= 9 + 9*diam2 + 6*sqrt(9*diam2)."""
    lhs = d2 - 9 - 9 * diam2
    if lhs <= 0:
        return True
    return lhs * lhs <= 36 * 9 * diam2


def regularize(z) -> set:
    """All lattice points within 3(1 + diam(Z)) of the non-empty set Z."""
    pts = [tuple(int(c) for c in p) for p in z]
    if not pts:
        raise ValueError("the empty set has no regularisation (its diameter is -inf)")
    dim = len(pts[0])
    d2 = diam_sq(pts)
    pad = 3 + math.isqrt(9 * d2) + 1
    arr = np.asarray(pts, dtype=np.int64)
    lo = arr.min(axis=0) - pad
    hi = arr.max(axis=0) + pad
    grid = np.stack(np.meshgrid(*[np.arange(l, h + 1) for l, h in zip(lo, hi)],
                                indexing="ij"), axis=-1).reshape(-1, dim)
    diff = grid[:, None, :] - arr[None, :, :]
    dmin = (diff * diff).sum(axis=2).min(axis=1)
    keep = np.array([_within_regularised_radius(int(v), d2) for v in dmin])
    return {tuple(p) for p in grid[keep]}


@dataclass(frozen=True)
class DecoratedSet:
    points: frozenset
    gamma: object = None       # opaque decoration; never interpreted here

    def __init__(self, points, gamma=None):
        pts = frozenset(tuple(int(c) for c in p) for p in points)
        if not pts:
            raise ValueError("decorated sets are non-empty")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "gamma", gamma)


@dataclass
class Chain:
    """Disjoint decorated sets whose regularisations step by at most k from
    an anchor out to distance at least n."""

    sets: list
    anchor: tuple
    target: tuple

    def to_json(self) -> str:
        import json

        return json.dumps({
            "sets": [{"points": sorted(list(p) for p in s.points), "gamma": s.gamma}
                     for s in self.sets],
            "anchor": list(self.anchor),
            "target": list(self.target),
        })

    @staticmethod
    def from_json(text: str) -> "Chain":
        import json

        d = json.loads(text)
        return Chain(
            [DecoratedSet([tuple(p) for p in s["points"]], s["gamma"]) for s in d["sets"]],
            tuple(d["anchor"]),
            tuple(d["target"]),
        )


class DecoratedSetSystem:
    """Interface for families of decorated sets with negatively associated
    occurrence events.

    Implementations provide `enumerate_at(point, size)` (all decorated sets
    of that core size containing the point), `occurs(dset, sample)` (whether
    the set's event holds in a realisation of the randomness), and the
    constant `C` of the three growth conditions.  The negative-association
    inequality across disjoint sets is a contract of the implementation,
    not something this layer can check generically.
    """

    C = None

    def enumerate_at(self, point, size):
        raise NotImplementedError

    def occurs(self, dset, sample) -> bool:
        raise NotImplementedError

    def check_diameter_condition(self, dset) -> bool:
        """Condition: diam(Z) <= C |Z| (checkable per set, exactly)."""
        return diam_sq(dset.points) <= (self.C * len(dset.points)) ** 2

    def count_at(self, point, size) -> int:
        return sum(1 for _ in self.enumerate_at(point, size))


class PathSetSystem(DecoratedSetSystem):
    """The worked toy system: cores are 1-connected lattice paths, the
    (single) decoration is trivial, and a set occurs when an iid bit field
    is 1 on all of it.  Disjoint sets occur independently, so the negative
    association contract holds with equality."""

    def __init__(self, dim: int = 2):
        self.dim = dim
        self.C = 2 * dim + 1  # paths of n steps: diameter <= n, count <= (2d)^n * n

    def enumerate_at(self, point, size):
        # walks of `size` points starting at the point, translated so the
        # point sits at each position; self-intersecting traces belong to a
        # smaller core size and are skipped
        point = tuple(int(c) for c in point)
        steps = ball_offsets(1, self.dim)
        seen = set()
        out = []
        for w in _walks_from(point, size, steps):
            for shift_idx in range(size):
                shifted = [tuple(a - b + c for a, b, c in zip(p, w[shift_idx], point))
                           for p in w]
                pts = frozenset(shifted)
                if len(pts) == size and pts not in seen:
                    seen.add(pts)
                    out.append(DecoratedSet(pts))
        return out

    def occurs(self, dset, sample) -> bool:
        return all(sample.get(p, 0) == 1 for p in dset.points)


def _walks_from(start, size, steps):
    if size == 1:
        yield [start]
        return
    for tail in _walks_from(start, size - 1, steps):
        for o in steps:
            nxt = tuple(a + b for a, b in zip(tail[-1], o))
            yield tail + [nxt]


def _set_min_dist_sq(a: set, b: set) -> int:
    aa = np.asarray(sorted(a), dtype=np.int64)
    bb = np.asarray(sorted(b), dtype=np.int64)
    try:
        from scipy.spatial import cKDTree

        tree = cKDTree(bb.astype(float))
        _, idx = tree.query(aa.astype(float), k=1)
        d = aa - bb[idx]
        return int((d * d).sum(axis=1).min())
    except Exception:
        best = None
        for p in aa:
            d = bb - p
            v = int((d * d).sum(axis=1).min())
            best = v if best is None else min(best, v)
        return best


def verify_chain(chain: Chain, x, n, k_sq, n_sq=None) -> bool:
    """All chain invariants, exactly: pairwise disjoint cores, regularised
    neighbours within k, anchor in the first regularisation, some target in
    the last one at distance >= n from the anchor.

    Pass the squared length as `n_sq` to keep the final comparison exact
    (floats that came out of a square root do not round-trip)."""
    x = tuple(int(c) for c in x)
    if not chain.sets:
        return False
    cores = [s.points for s in chain.sets]
    for i in range(len(cores)):
        for j in range(i + 1, len(cores)):
            if cores[i] & cores[j]:
                return False
    regs = [regularize(c) for c in cores]
    for i in range(len(regs) - 1):
        if _set_min_dist_sq(regs[i], regs[i + 1]) > k_sq:
            return False
    if x not in regs[0]:
        return False
    n2 = n_sq if n_sq is not None else n * n
    far = max(dist_sq(x, y) for y in regs[-1])
    return far >= n2


@dataclass
class ChainTrace:
    """Per-iteration record of the extraction loop, for property checks."""

    i_t: list = field(default_factory=list)
    J_t: list = field(default_factory=list)
    I_t: list = field(default_factory=list)   # index sets after each step (t >= 0)


def extract_chain(path, sets_map, k_sq, with_trace: bool = False):
    """Cover a k-connected path by disjoint decorated sets and extract a
    chain from its start towards its end.

    The covering loop keeps an index set I of path positions whose
    regularised sets currently build the cover X; while some path point is
    uncovered, the first such point's set is swapped in and every index
    whose core meets the new core is swapped out.  The loop terminates
    because the covered part of the path strictly grows; the cover stays
    k-connected, so a neighbour walk over it yields the chain.
    """
    path = [tuple(int(c) for c in p) for p in path]
    if not path:
        raise ValueError("empty path")
    for a, b in zip(path, path[1:]):
        if dist_sq(a, b) > k_sq:
            raise ValueError(f"path hop {a} -> {b} exceeds k")
    sets_map = {tuple(int(c) for c in p): s for p, s in sets_map.items()}
    for p in path:
        if p not in sets_map:
            raise ValueError(f"no decorated set for path point {p}")
        if p not in sets_map[p].points:
            raise ValueError(f"decorated set at {p} does not contain it")

    reg_cache = {}

    def reg(j):
        s = sets_map[path[j]]
        if s.points not in reg_cache:
            reg_cache[s.points] = regularize(s.points)
        return reg_cache[s.points]

    trace = ChainTrace()
    I = [0]
    X = set(reg(0))
    trace.I_t.append(list(I))
    guard = 0
    while not all(p in X for p in path):
        guard += 1
        if guard > len(path) + 1:
            raise AssertionError("extraction loop failed to terminate")
        i_t = next(j for j, p in enumerate(path) if p not in X)
        core_new = sets_map[path[i_t]].points
        J = [j for j in I if sets_map[path[j]].points & core_new]
        I = [i_t] + [j for j in I if j not in J]
        X = set()
        for j in I:
            X |= reg(j)
        trace.i_t.append(i_t)
        trace.J_t.append(J)
        trace.I_t.append(list(I))

    # walk from a set containing the start to one containing the end,
    # hopping between regularisations at distance <= k
    start = next(j for j in I if path[0] in reg(j))
    goal = next(j for j in I if path[-1] in reg(j))
    adj = {j: [] for j in I}
    for a_i in range(len(I)):
        for b_i in range(a_i + 1, len(I)):
            a, b = I[a_i], I[b_i]
            if _set_min_dist_sq(reg(a), reg(b)) <= k_sq:
                adj[a].append(b)
                adj[b].append(a)
    parent = {start: None}
    queue = [start]
    while queue:
        cur = queue.pop(0)
        if cur == goal:
            break
        for nxt in adj[cur]:
            if nxt not in parent:
                parent[nxt] = cur
                queue.append(nxt)
    if goal not in parent:
        raise AssertionError("cover is not k-connected: no walk start -> goal")
    seq = []
    cur = goal
    while cur is not None:
        seq.append(cur)
        cur = parent[cur]
    seq.reverse()
    chain = Chain([sets_map[path[j]] for j in seq], anchor=path[0], target=path[-1])
    if with_trace:
        return chain, trace
    return chain


# ---------------------------------------------------------------------------
# dense component labeling and diameter tails
# ---------------------------------------------------------------------------


def label_mask(mask: np.ndarray, k_sq) -> np.ndarray:
    """Label k-connected components of a boolean array (any dimension).

    The 3^D-structuring-element case is delegated to scipy; larger balls go
    through a union-find over the offset ball (compiled when available).
    Labels are positive integers, 0 is background.
    """
    mask = np.ascontiguousarray(mask.astype(bool))
    dim = mask.ndim
    r = int(math.isqrt(int(k_sq)))
    if r <= 1:
        from scipy import ndimage

        structure = np.zeros((3,) * dim, dtype=bool)
        for o in ball_offsets(k_sq, dim, include_zero=True):
            structure[tuple(c + 1 for c in o)] = True
        labels, _ = ndimage.label(mask, structure=structure)
        return labels.astype(np.int32)

    offs = ball_offsets(k_sq, dim)
    padded = np.pad(mask, r, mode="constant", constant_values=False)
    strides = [1] * dim
    for i in range(dim - 2, -1, -1):
        strides[i] = strides[i + 1] * padded.shape[i + 1]
    deltas = np.asarray(sorted({sum(c * s for c, s in zip(o, strides)) for o in offs} - {0}),
                        dtype=np.int64)
    flat = padded.reshape(-1).astype(np.uint8)
    from .backend import label_components_compiled

    compiled = label_components_compiled()
    if compiled is not None:
        lab = compiled(flat, deltas)
    else:
        lab = _label_py(flat, deltas)
    inner = tuple(slice(r, r + s) for s in mask.shape)
    return lab.reshape(padded.shape)[inner].copy()


def _label_py(mask_flat: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    n = mask_flat.shape[0]
    parent = np.arange(n, dtype=np.int64)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    idx = np.nonzero(mask_flat)[0]
    for i in idx:
        for d in deltas:
            j = i + d
            if mask_flat[j]:
                ri, rj = find(i), find(j)
                if ri != rj:
                    if ri < rj:
                        parent[rj] = ri
                    else:
                        parent[ri] = rj
    labels = np.zeros(n, dtype=np.int32)
    nxt = 0
    for i in idx:
        r = find(i)
        if r == i:
            nxt += 1
            labels[i] = nxt
        else:
            labels[i] = labels[r]
    return labels


@dataclass
class ComponentStats:
    sizes: np.ndarray           # per label (1-indexed: sizes[label-1])
    diam2: np.ndarray
    censored: np.ndarray        # touches the analysis window boundary


def component_stats(labels: np.ndarray) -> ComponentStats:
    nlab = int(labels.max())
    shape = labels.shape
    sizes = np.bincount(labels.reshape(-1), minlength=nlab + 1)[1:]
    diam2 = np.zeros(nlab, dtype=np.int64)
    censored = np.zeros(nlab, dtype=bool)
    if nlab == 0:
        return ComponentStats(sizes, diam2, censored)
    flat = labels.reshape(-1)
    order = np.argsort(flat, kind="stable")
    sorted_labels = flat[order]
    starts = np.searchsorted(sorted_labels, np.arange(1, nlab + 2))
    coords = np.stack(np.unravel_index(order, shape), axis=1)
    upper = np.asarray(shape) - 1
    for lab in range(1, nlab + 1):
        cells = coords[starts[lab - 1]:starts[lab]]
        if cells.size == 0:
            continue
        diam2[lab - 1] = diam_sq(cells)
        censored[lab - 1] = bool(np.any(cells == 0) or np.any(cells == upper))
    return ComponentStats(sizes, diam2, censored)


@dataclass
class TailTable:
    ell: np.ndarray
    count: np.ndarray           # samples certainly at diameter >= ell
    censored: np.ndarray        # censored samples that might reach ell but were not observed to
    p_hat: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    n_samples: int

    def rows(self):
        for i in range(len(self.ell)):
            yield (float(self.ell[i]), int(self.count[i]), int(self.censored[i]),
                   float(self.p_hat[i]), float(self.ci_lo[i]), float(self.ci_hi[i]),
                   self.n_samples)

    def merged(self, other: "TailTable") -> "TailTable":
        if not np.array_equal(self.ell, other.ell):
            raise ValueError("tail tables use different thresholds")
        count = self.count + other.count
        cens = self.censored + other.censored
        n = self.n_samples + other.n_samples
        ci = np.array([wilson_interval(int(c), n) for c in count])
        return TailTable(self.ell, count, cens, count / n, ci[:, 0], ci[:, 1], n)


def diameter_tail(mask: np.ndarray, k_sq, ell_grid) -> TailTable:
    """Tail of the component diameter at a uniformly sampled cell.

    Every cell of the mask window is a sample point: cells outside the mask
    contribute empty components.  A censored component (touching the window
    boundary) counts towards `count` only at thresholds its observed
    diameter already certifies; at larger thresholds its cells are tallied
    in `censored` instead of being silently dropped.
    """
    labels = label_mask(mask, k_sq)
    st = component_stats(labels)
    ell = np.asarray(sorted(ell_grid), dtype=float)
    n_samples = int(np.prod(mask.shape))
    count = np.zeros(len(ell), dtype=np.int64)
    cens = np.zeros(len(ell), dtype=np.int64)
    for i, l in enumerate(ell):
        l2 = l * l
        ge = st.diam2 >= l2
        count[i] = int(st.sizes[ge].sum())
        cens[i] = int(st.sizes[st.censored & ~ge].sum())
    ci = np.array([wilson_interval(int(c), n_samples) for c in count]) if len(ell) else np.zeros((0, 2))
    return TailTable(ell, count, cens, count / n_samples,
                     ci[:, 0] if len(ell) else np.array([]),
                     ci[:, 1] if len(ell) else np.array([]), n_samples)


def space_time_zero_mask(frames: np.ndarray, zero_level: int = 0) -> np.ndarray:
    """Space-time indicator of cells at `zero_level` (unit time spacing)."""
    return frames == zero_level


def cluster_tail(trajectory, k_sq, ell_grid, zero_level: int = 0, burn_in: int = 0) -> TailTable:
    """Diameter tail of k-connected space-time clusters of a trajectory.

    Frame-indexed records are clustered on the unit-spaced space-time
    lattice of cells at `zero_level`; event-driven records go through the
    healthy-interval atoms (zero_level is then necessarily 0).
    """
    from .automata import DiscreteTrajectory

    if isinstance(trajectory, DiscreteTrajectory):
        return diameter_tail(space_time_zero_mask(trajectory.frames[burn_in:], zero_level),
                             k_sq, ell_grid)
    if zero_level != 0:
        raise ValueError("event-driven records cluster healthy (0) stretches only")
    return trajectory_zero_tail(trajectory, k_sq, ell_grid)


# ---------------------------------------------------------------------------
# continuous-time route: interval atoms
# ---------------------------------------------------------------------------


def atom_component_diam_sq(atoms) -> float:
    """Squared diameter of a component of (site, a, b) interval atoms,
    treating each atom as the segment {site} x [a, b] in space-time."""
    best = 0.0
    for i in range(len(atoms)):
        s1, a1, b1 = atoms[i]
        for j in range(i, len(atoms)):
            s2, a2, b2 = atoms[j]
            dt = max(b2 - a1, b1 - a2)  # sup |t - t'|; never negative here
            best = max(best, dist_sq(s1, s2) + dt * dt)
    return best


def trajectory_zero_tail(traj, k_sq, ell_grid) -> TailTable:
    """Continuous-time cluster tail: healthy stretches of an event-driven
    trajectory become interval atoms; components follow the interval
    adjacency; the tail is weighted by healthy duration against the full
    space-time volume of the run.  Atoms touching the time horizon, time
    zero from a healthy start, or the spatial boundary of the domain are
    censored.
    """
    sites = traj.domain.sites()
    ivs = {site: iv for site, iv in zip(sites, traj.zero_intervals()) if iv}
    comps = interval_components(ivs, k_sq)
    lo = traj.domain.lo
    hi = tuple(l + s - 1 for l, s in zip(lo, traj.domain.shape))
    total = traj.domain.size * traj.horizon
    ell = np.asarray(sorted(ell_grid), dtype=float)
    count = np.zeros(len(ell))
    cens = np.zeros(len(ell))
    for atoms in comps:
        weight = sum(b - a for _, a, b in atoms)
        d2 = atom_component_diam_sq(atoms)
        censored = any(a <= 0.0 or b >= traj.horizon
                       or any(c == l or c == h for c, l, h in zip(s, lo, hi))
                       for s, a, b in atoms)
        for i, l in enumerate(ell):
            if d2 >= l * l:
                count[i] += weight
            elif censored:
                cens[i] += weight
    p = count / total
    ci = np.array([wilson_interval(int(round(c)), int(round(total))) for c in count]) \
        if len(ell) else np.zeros((0, 2))
    return TailTable(ell, count.astype(np.int64), cens.astype(np.int64), p,
                     ci[:, 0] if len(ell) else np.array([]),
                     ci[:, 1] if len(ell) else np.array([]), int(round(total)))


def interval_components(site_intervals, k_sq):
    """k-connected components of healthy-interval atoms of an event-driven
    trajectory.

    An atom is (site, [a, b)); two atoms are adjacent when their sites are
    within squared distance k_sq and their intervals come within k of
    overlapping (time gap <= k).  Returns a list of components, each a list
    of (site, a, b).
    """
    k = math.sqrt(float(k_sq))
    atoms = []
    for site, ivs in site_intervals.items():
        for a, b in ivs:
            atoms.append((tuple(site), float(a), float(b)))
    if not atoms:
        return []
    dim = len(atoms[0][0])
    offs = ball_offsets(k_sq, dim, include_zero=True)
    by_site = {}
    for idx, (s, a, b) in enumerate(atoms):
        by_site.setdefault(s, []).append(idx)
    parent = list(range(len(atoms)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i, j):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)

    for idx, (s, a, b) in enumerate(atoms):
        for o in offs:
            t = tuple(x + y for x, y in zip(s, o))
            for jdx in by_site.get(t, []):
                if jdx <= idx:
                    continue
                _, a2, b2 = atoms[jdx]
                gap = max(a2 - b, a - b2, 0.0)
                if gap <= k:
                    union(idx, jdx)
    comps = {}
    for idx in range(len(atoms)):
        comps.setdefault(find(idx), []).append(atoms[idx])
    return list(comps.values())
