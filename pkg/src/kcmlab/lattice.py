"""Exact lattice geometry: update families, constraints, direction stability.

Everything here is integer or rational arithmetic.  Stability of a direction
u for a rule U is the strict linear condition <x,u> < 0 for all x in U, so
with integer direction numerators the predicate is decidable exactly; no
floating point ever enters a classification decision.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction


def dot(a, b):
    return sum(x * y for x, y in zip(a, b))


def cross2(a, b):
    return a[0] * b[1] - a[1] * b[0]


def primitive(vec):
    """gcd-reduce an integer vector, keeping orientation."""
    vec = tuple(int(v) for v in vec)
    g = 0
    for v in vec:
        g = math.gcd(g, abs(v))
    if g == 0:
        raise ValueError("zero vector has no direction")
    return tuple(v // g for v in vec)


def rot90ccw(v):
    return (-v[1], v[0])


def rot90cw(v):
    return (v[1], -v[0])


# ---------------------------------------------------------------------------
# update rules and families
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UpdateRule:
    """One update rule: a finite set of nonzero integer offsets."""

    offsets: tuple

    def __init__(self, offsets):
        offs = tuple(sorted(tuple(int(c) for c in o) for o in offsets))
        if not offs:
            raise ValueError("update rule must be non-empty")
        if len(set(offs)) != len(offs):
            raise ValueError("duplicate offsets in rule")
        for o in offs:
            if all(c == 0 for c in o):
                raise ValueError("origin is not a valid offset")
        object.__setattr__(self, "offsets", offs)

    @property
    def dim(self):
        return len(self.offsets[0])

    @property
    def norm_sq(self):
        return max(dot(o, o) for o in self.offsets)


@dataclass(frozen=True)
class UpdateFamily:
    rules: tuple
    dim: int

    def __init__(self, rules, dim):
        rules = tuple(sorted((r if isinstance(r, UpdateRule) else UpdateRule(r) for r in rules),
                             key=lambda r: r.offsets))
        if not rules:
            raise ValueError("update family must be non-empty")
        for r in rules:
            if r.dim != dim:
                raise ValueError(f"rule {r.offsets} does not live in dimension {dim}")
        object.__setattr__(self, "rules", rules)
        object.__setattr__(self, "dim", int(dim))

    @property
    def norm_sq(self) -> int:
        """Squared family norm max_{U, x in U} |x|^2 (exact integer)."""
        return max(r.norm_sq for r in self.rules)

    @property
    def norm(self) -> float:
        return math.sqrt(self.norm_sq)

    @property
    def range(self) -> int:
        """Width of the boundary shell: ceil of the family norm."""
        return math.isqrt(self.norm_sq - 1) + 1 if self.norm_sq > 0 else 0

    def ball_offsets(self):
        """All integer vectors v (including 0) with |v|^2 <= norm_sq."""
        r = self.range
        out = []
        for v in itertools.product(range(-r, r + 1), repeat=self.dim):
            if dot(v, v) <= self.norm_sq:
                out.append(v)
        return out

    def to_json(self) -> str:
        return json.dumps({"dim": self.dim, "rules": [[list(o) for o in r.offsets] for r in self.rules]})

    @staticmethod
    def from_json(text: str) -> "UpdateFamily":
        data = json.loads(text)
        return UpdateFamily([UpdateRule(r) for r in data["rules"]], data["dim"])

    @staticmethod
    def fa(j: int, d: int) -> "UpdateFamily":
        """Fredrickson-Andersen j-spin facilitated family in dimension d."""
        if not 1 <= j <= 2 * d:
            raise ValueError("need 1 <= j <= 2d")
        units = []
        for i in range(d):
            e = [0] * d
            e[i] = 1
            units.append(tuple(e))
            units.append(tuple(-c for c in e))
        rules = [UpdateRule(c) for c in itertools.combinations(units, j)]
        return UpdateFamily(rules, d)

    @staticmethod
    def corner(d: int) -> "UpdateFamily":
        """The single rule {0,-1}^d \\ {0}: the lower-left corner family."""
        offs = [o for o in itertools.product((0, -1), repeat=d) if any(o)]
        return UpdateFamily([UpdateRule(offs)], d)

    @staticmethod
    def named(spec: str) -> "UpdateFamily":
        """Parse 'fa:j:d' or 'corner:d'."""
        parts = spec.split(":")
        if parts[0] == "fa" and len(parts) == 3:
            return UpdateFamily.fa(int(parts[1]), int(parts[2]))
        if parts[0] == "corner" and len(parts) == 2:
            return UpdateFamily.corner(int(parts[1]))
        raise ValueError(f"unknown family spec {spec!r}")


class FamilyClass(Enum):
    SUPERCRITICAL = "supercritical"
    CRITICAL = "critical"
    SUBCRITICAL_NONTRIVIAL = "subcritical-nontrivial"
    TRIVIAL_SUBCRITICAL = "trivial-subcritical"
    UNKNOWN_NONTRIVIAL_SUBCRITICAL = "unknown-nontrivial-subcritical"


# ---------------------------------------------------------------------------
# half-space tests and separating directions
# ---------------------------------------------------------------------------


def rule_in_halfspace(rule: UpdateRule, u) -> bool:
    """True iff <x,u> < 0 for every offset x (u integer numerators)."""
    return all(dot(x, u) < 0 for x in rule.offsets)


def unstable(family: UpdateFamily, u) -> bool:
    """Direct definition: u is unstable iff some rule fits in the open
    half-space below u."""
    return any(rule_in_halfspace(r, u) for r in family.rules)


def origin_in_hull(points, dim) -> bool:
    """Exact test whether 0 lies in the convex hull of integer points.

    Checks all affinely independent subsets of size <= dim+1; by
    Caratheodory a certificate, if any, lives on one of them.
    """
    pts = [tuple(int(c) for c in p) for p in points]
    if any(all(c == 0 for c in p) for p in pts):
        return True
    for k in range(2, dim + 2):
        for sub in itertools.combinations(pts, k):
            lam = _hull_coefficients(sub, dim)
            if lam is not None and all(v >= 0 for v in lam):
                return True
    return False


def _hull_coefficients(points, dim):
    """Solve sum(l_i x_i) = 0, sum(l_i) = 1 exactly; None unless the system
    has full column rank (dependent subsets are covered by smaller ones)."""
    k = len(points)
    rows = dim + 1
    a = [[Fraction(points[j][i]) for j in range(k)] for i in range(dim)]
    a.append([Fraction(1)] * k)
    rhs = [Fraction(0)] * dim + [Fraction(1)]
    # Gaussian elimination with column pivoting on the k unknowns
    piv_rows = []
    col_of = []
    r = 0
    for c in range(k):
        pr = None
        for i in range(rows):
            if i not in piv_rows and a[i][c] != 0:
                pr = i
                break
        if pr is None:
            return None  # rank-deficient: skip
        piv_rows.append(pr)
        col_of.append(c)
        inv = a[pr][c]
        a[pr] = [v / inv for v in a[pr]]
        rhs[pr] /= inv
        for i in range(rows):
            if i != pr and a[i][c] != 0:
                f = a[i][c]
                a[i] = [vi - f * vp for vi, vp in zip(a[i], a[pr])]
                rhs[i] -= f * rhs[pr]
        r += 1
    # consistency of the remaining rows
    for i in range(rows):
        if i not in piv_rows:
            if rhs[i] != 0:
                return None
    lam = [Fraction(0)] * k
    for pr, c in zip(piv_rows, col_of):
        lam[c] = rhs[pr]
    return lam


def _cone_extremes_d2(points):
    """Angular extremes of a set of integer 2-vectors known to span < pi.

    Returns (g_lo, g_hi) with every point CCW-between them, or None if two
    points are opposite (cone spans >= pi)."""
    pts = [primitive(p) for p in points]
    lo = hi = pts[0]
    for p in pts[1:]:
        c = cross2(lo, p)
        if c == 0 and dot(lo, p) < 0:
            return None
        if c < 0:
            lo = p
        c = cross2(hi, p)
        if c == 0 and dot(hi, p) < 0:
            return None
        if c > 0:
            hi = p
    # lo..hi must span < pi for the pairwise order to have been consistent
    if cross2(lo, hi) < 0 or (cross2(lo, hi) == 0 and dot(lo, hi) < 0):
        return None
    for p in pts:
        if cross2(lo, p) < 0 or cross2(p, hi) < 0:
            return None
    return lo, hi


def rule_feasible_arc_d2(rule: UpdateRule):
    """Open arc of directions u with rule strictly below u, as a CCW pair of
    primitive endpoint vectors (lo, hi); None when no such direction exists.

    The arc is { u : rule in H_u } = open CCW arc from rot90ccw(g_hi) to
    rot90cw(g_lo) where g_lo, g_hi are the angular extremes of the rule.
    """
    if origin_in_hull(rule.offsets, 2):
        return None
    ext = _cone_extremes_d2(rule.offsets)
    if ext is None:  # opposite directions: hull contains 0, handled above
        return None
    g_lo, g_hi = ext
    return (primitive(rot90ccw(g_hi)), primitive(rot90cw(g_lo)))


def separating_direction(points, dim):
    """A rational u with <x,u> < 0 for all x, or None when 0 is in the hull.

    d=2 is fully exact; higher dimensions propose via float LP (or a small
    enumeration) and always verify exactly before returning.
    """
    pts = [tuple(int(c) for c in p) for p in points]
    if origin_in_hull(pts, dim):
        return None
    if dim == 1:
        s = {1 if p[0] > 0 else -1 for p in pts}
        return (-s.pop(),)
    if dim == 2:
        arc = rule_feasible_arc_d2(UpdateRule(pts))
        assert arc is not None
        lo, hi = arc
        if lo == tuple(-c for c in hi):  # semicircle: endpoints antipodal
            w = rot90ccw(lo)
        else:
            w = tuple(a + b for a, b in zip(lo, hi))
        w = primitive(w)
        assert all(dot(x, w) < 0 for x in pts)
        return w
    # general d: try the negated mean, then an LP proposal rounded to integers
    cand = tuple(-sum(p[i] for p in pts) for i in range(dim))
    if any(cand) and all(dot(x, cand) < 0 for x in pts):
        return primitive(cand)
    try:
        from scipy.optimize import linprog

        a_ub = [[float(c) for c in p] for p in pts]
        b_ub = [-1.0] * len(pts)
        res = linprog(c=[0.0] * dim, A_ub=a_ub, b_ub=b_ub, bounds=[(None, None)] * dim, method="highs")
        if res.status == 0:
            for scale in (1, 2, 4, 8, 16, 64, 256, 4096, 1 << 20):
                w = tuple(round(v * scale) for v in res.x)
                if any(w) and all(dot(x, w) < 0 for x in pts):
                    return primitive(w)
    except Exception:
        pass
    # last resort: exhaustive small-numerator scan (complete for small inputs)
    m = max(abs(c) for p in pts for c in p) + 1
    for w in itertools.product(range(-m, m + 1), repeat=dim):
        if any(w) and all(dot(x, w) < 0 for x in pts):
            return primitive(w)
    raise RuntimeError("0 not in hull but no separating direction found; enlarge the search")


def find_oriented_rule(family: UpdateFamily):
    """Some rule fitting in an open half-space, with a rational witness
    direction; None iff every rule's hull contains the origin."""
    for r in family.rules:
        u = separating_direction(r.offsets, family.dim)
        if u is not None:
            return r, u
    return None


# ---------------------------------------------------------------------------
# exact circle combinatorics for the two-dimensional classification
# ---------------------------------------------------------------------------


def _angle_key(v):
    """Total angular order on primitive vectors, starting at (1,0) going CCW.

    Not a numeric key: returns (half, v) to be used with _angle_lt.
    """
    half = 0 if (v[1] > 0 or (v[1] == 0 and v[0] > 0)) else 1
    return half


def _angle_lt(a, b):
    ha, hb = _angle_key(a), _angle_key(b)
    if ha != hb:
        return ha < hb
    return cross2(a, b) > 0


def _ccw_gap_midpoint(a, b):
    """A primitive direction strictly inside the open CCW arc from a to b;
    for a == b the arc wraps the whole circle and the antipode is inside."""
    c = cross2(a, b)
    if c > 0:
        return primitive((a[0] + b[0], a[1] + b[1]))
    if c < 0:
        return primitive((-(a[0] + b[0]), -(a[1] + b[1])))
    if dot(a, b) < 0:  # antipodal: arc of length pi
        return primitive(rot90ccw(a))
    return primitive((-a[0], -a[1]))


def _ccw_len_cmp_pi(a, b):
    """Sign of (CCW arc length from a to b) - pi for distinct a, b."""
    c = cross2(a, b)
    if c == 0:
        return 0 if dot(a, b) < 0 else None  # None: zero-length (a == b)
    return -1 if c > 0 else 1


def circle_structure(family: UpdateFamily):
    """Exact circular decomposition of the unstable-direction set (d = 2).

    Returns (cuts, pt_unstable, gap_mids, gap_unstable) where cuts are the
    arc endpoints in CCW order, pt_unstable the stability bit at each cut,
    and gap_unstable the (constant) bit on the open arc between consecutive
    cuts, witnessed at the exact rational midpoint; None when no rule has a
    feasible arc (no unstable direction at all).
    """
    if family.dim != 2:
        raise ValueError("the circle decomposition is a two-dimensional construction")
    arcs = [a for a in (rule_feasible_arc_d2(r) for r in family.rules) if a is not None]
    if not arcs:
        return None
    endpoints = []
    for lo, hi in arcs:
        endpoints.append(lo)
        endpoints.append(hi)
    uniq = []
    for e in endpoints:
        if not any(e == f for f in uniq):
            uniq.append(e)
    import functools

    uniq.sort(key=functools.cmp_to_key(lambda a, b: -1 if _angle_lt(a, b) else (0 if a == b else 1)))
    n = len(uniq)
    pt_unstable = [unstable(family, e) for e in uniq]
    gap_mids = [_ccw_gap_midpoint(uniq[i], uniq[(i + 1) % n]) for i in range(n)]
    gap_unstable = [unstable(family, m) for m in gap_mids]
    return uniq, pt_unstable, gap_mids, gap_unstable


def _ccw_between(a, u, b) -> bool:
    """u strictly inside the open CCW arc from a to b (primitive, a != b)."""
    if u == a or u == b:
        return False

    def pos_class(x):
        # CCW angle of x measured from a: 0 at a, 1 on (0,pi), 2 at pi, 3 on (pi,2pi)
        c = cross2(a, x)
        if c > 0:
            return 1
        if c == 0:
            return 0 if dot(a, x) > 0 else 2
        return 3

    cu, cb = pos_class(u), pos_class(b)
    if cu == 0:
        return False
    if cu != cb:
        return cu < cb
    # same open half relative to a: cross decides the angular order
    return cross2(u, b) > 0


def structure_unstable_at(structure, u) -> bool:
    """Membership of direction u in the unstable set, read off the
    decomposition rather than the rules (for cross-checks)."""
    cuts, pt_unstable, _, gap_unstable = structure
    u = primitive(u)
    n = len(cuts)
    for i, c in enumerate(cuts):
        if c == u:
            return pt_unstable[i]
    for i in range(n):
        a, b = cuts[i], cuts[(i + 1) % n]
        if n == 1 or _ccw_between(a, u, b):
            return gap_unstable[i]
    raise AssertionError("direction not located on the circle")


def classify(family: UpdateFamily) -> FamilyClass:
    """Universality class of the family.

    d = 2: exact four-way classification from the circular structure of the
    unstable direction set (a finite union of open arcs whose endpoints are
    90-degree rotations of rule offsets).  d >= 3: only the trivial
    subcritical test is decided; everything else is reported as unknown
    non-trivial subcritical.
    """
    if family.dim != 2:
        if find_oriented_rule(family) is None:
            return FamilyClass.TRIVIAL_SUBCRITICAL
        return FamilyClass.UNKNOWN_NONTRIVIAL_SUBCRITICAL

    structure = circle_structure(family)
    if structure is None:
        return FamilyClass.TRIVIAL_SUBCRITICAL
    uniq, pt_unstable, gap_mids, gap_unstable = structure
    n = len(uniq)
    # gap cell i is the open arc (uniq[i], uniq[i+1]); stability is constant
    # on it since all arc boundaries lie on cut points.  An unstable cut
    # point sits inside some open unstable arc, so both its neighbouring gap
    # cells are then unstable; maximal unstable runs are therefore open arcs
    # between *stable* cut points, and maximal stable runs closed arcs.

    if not any(pt_unstable) and not any(gap_unstable):
        return FamilyClass.TRIVIAL_SUBCRITICAL
    if all(pt_unstable) and all(gap_unstable):
        return FamilyClass.SUPERCRITICAL  # the whole circle is unstable

    # supercritical <=> some maximal unstable open arc has length >= pi
    # (an open arc of length exactly pi *is* an open semicircle)
    for i in range(n):
        if gap_unstable[i] and not pt_unstable[i]:
            j = i
            while pt_unstable[(j + 1) % n]:
                j += 1
            end = (j + 1) % n
            cmp = _ccw_len_cmp_pi(uniq[i], uniq[end])
            if cmp is None or cmp >= 0:  # None: single stable point, arc wraps
                return FamilyClass.SUPERCRITICAL

    # subcritical <=> the union of the positive-length stable arcs does not
    # fit inside any closed semicircle, i.e. no inter-run gap reaches pi.
    runs = []  # closed stable arcs [start, end] containing at least one gap cell
    for i in range(n):
        if not pt_unstable[i] and gap_unstable[(i - 1) % n]:
            j = i
            while not gap_unstable[j % n]:
                j += 1
            if j > i:
                runs.append((uniq[i], uniq[j % n]))
    if not runs:
        return FamilyClass.CRITICAL  # stable set has empty interior
    for i in range(len(runs)):
        b = runs[i][1]  # runs are discovered in circular order; a run's start
        a = runs[(i + 1) % len(runs)][0]  # and end are always distinct points
        cmp = _ccw_len_cmp_pi(b, a)
        if cmp is not None and cmp >= 0:
            return FamilyClass.CRITICAL
    return FamilyClass.SUBCRITICAL_NONTRIVIAL


def family_norm(family: UpdateFamily) -> float:
    return family.norm


# ---------------------------------------------------------------------------
# domains, boundary conditions and the constraint
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Domain:
    """An axis-aligned box of sites with a boundary condition outside it.

    boundary is 'ones', 'zeros', or a dict mapping exterior sites (within the
    family range of the box) to bits.
    """

    lo: tuple
    shape: tuple
    boundary: object = "ones"

    def __init__(self, lo, shape, boundary="ones"):
        lo = tuple(int(c) for c in lo)
        shape = tuple(int(s) for s in shape)
        if len(lo) != len(shape) or any(s <= 0 for s in shape):
            raise ValueError("domain box must be non-empty")
        if not (boundary in ("ones", "zeros") or isinstance(boundary, dict)):
            raise ValueError("boundary must be 'ones', 'zeros' or an explicit dict")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "boundary", boundary)

    @property
    def dim(self):
        return len(self.shape)

    @property
    def size(self):
        n = 1
        for s in self.shape:
            n *= s
        return n

    def contains(self, x):
        return all(l <= c < l + s for c, l, s in zip(x, self.lo, self.shape))

    def sites(self):
        """All sites in row-major (lexicographic) order."""
        return [tuple(l + i for l, i in zip(self.lo, idx))
                for idx in itertools.product(*(range(s) for s in self.shape))]

    @staticmethod
    def box(n, d, boundary="ones", lo=None):
        if lo is None:
            lo = (0,) * d
        return Domain(lo, (n,) * d, boundary)

    def boundary_bit(self, x, family: UpdateFamily) -> int:
        if self.contains(x):
            raise ValueError(f"{x} is inside the domain")
        if self.boundary == "ones":
            return 1
        if self.boundary == "zeros":
            return 0
        x = tuple(int(c) for c in x)
        if x not in self.boundary:
            raise ValueError(f"explicit boundary does not cover exterior site {x}")
        return int(self.boundary[x])


def constraint_satisfied(family: UpdateFamily, domain: Domain, bits, x) -> int:
    """The constraint at x: 1 iff some rule has every offset site infected.

    `bits` maps interior sites to {0,1} (dict or ndarray indexed relative to
    domain.lo); exterior sites read the boundary condition.  Reference
    implementation; the simulation engine carries its own fast equivalent.
    """
    if not domain.contains(x):
        raise ValueError(f"site {x} outside domain")

    def val(y):
        if domain.contains(y):
            if isinstance(bits, dict):
                return bits[y]
            return bits[tuple(c - l for c, l in zip(y, domain.lo))]
        return domain.boundary_bit(y, family)

    for rule in family.rules:
        if all(val(tuple(c + o for c, o in zip(x, off))) == 1 for off in rule.offsets):
            return 1
    return 0
