import itertools
import json
import math

import numpy as np
import pytest

from kcmlab.lattice import (Domain, FamilyClass, UpdateFamily, UpdateRule,
                            circle_structure, classify, constraint_satisfied, dot,
                            find_oriented_rule, origin_in_hull, primitive,
                            rule_in_halfspace, separating_direction,
                            structure_unstable_at, unstable)

FA1 = UpdateFamily.fa(1, 2)
FA2 = UpdateFamily.fa(2, 2)
FA3 = UpdateFamily.fa(3, 2)
TRIPLE = UpdateFamily([UpdateRule([(-1, 0), (0, -1), (-1, -1)])], 2)


def test_rule_invariants():
    with pytest.raises(ValueError):
        UpdateRule([])
    with pytest.raises(ValueError):
        UpdateRule([(0, 0)])
    with pytest.raises(ValueError):
        UpdateFamily([], 2)
    with pytest.raises(ValueError):
        UpdateFamily([UpdateRule([(1,)])], 2)


def test_constraint_examples():
    dom = Domain.box(5, 2, boundary="zeros")
    bits = {s: 0 for s in dom.sites()}
    x = (2, 2)
    # north and east neighbours infected: the rule {e1, e2} is fully infected
    bits[(3, 2)] = 1
    bits[(2, 3)] = 1
    assert constraint_satisfied(FA2, dom, bits, x) == 1
    # fully healthy, healthy boundary: nothing satisfiable
    bits = {s: 0 for s in dom.sites()}
    assert constraint_satisfied(FA2, dom, bits, x) == 0
    # exactly one infected neighbour never satisfies a two-element rule:
    # exhaust all six rules directly
    for nb in [(3, 2), (1, 2), (2, 3), (2, 1)]:
        bits = {s: 0 for s in dom.sites()}
        bits[nb] = 1
        expected = 0
        for rule in FA2.rules:
            if all(bits.get(tuple(c + o for c, o in zip(x, off)), 0) for off in [rule.offsets[0]]) \
                    and all(bits.get(tuple(c + o for c, o in zip(x, off)), 0) for off in [rule.offsets[1]]):
                expected = 1
        assert constraint_satisfied(FA2, dom, bits, x) == expected == 0
    with pytest.raises(ValueError):
        constraint_satisfied(FA2, dom, bits, (9, 9))


def test_constraint_monotone_and_independent_of_centre(rng):
    dom = Domain.box(4, 2, boundary="zeros")
    sites = dom.sites()
    for _ in range(200):
        bits = {s: int(rng.integers(0, 2)) for s in sites}
        x = sites[int(rng.integers(0, len(sites)))]
        c0 = constraint_satisfied(FA2, dom, bits, x)
        # independence from the centre state
        flipped = dict(bits)
        flipped[x] = 1 - flipped[x]
        assert constraint_satisfied(FA2, dom, flipped, x) == c0
        # monotone: infecting a healthy site never turns 1 into 0
        healthy = [s for s in sites if bits[s] == 0]
        if healthy:
            y = healthy[int(rng.integers(0, len(healthy)))]
            up = dict(bits)
            up[y] = 1
            assert constraint_satisfied(FA2, dom, up, x) >= c0


def test_rule_in_halfspace_examples():
    assert rule_in_halfspace(UpdateRule([(-1, 0), (0, -1)]), (1, 1))
    assert not rule_in_halfspace(UpdateRule([(1, 0), (-1, 0)]), (1, 1))
    assert not rule_in_halfspace(UpdateRule([(1, 0), (-1, 0)]), (2, 3))
    # a zero inner product fails the strict inequality
    assert not rule_in_halfspace(UpdateRule([(-1, 0), (0, -1), (-1, -1)]), (1, 0))


def test_rule_in_halfspace_float_crosscheck(rng):
    # exact integer test is the oracle; float is the cross-check
    for _ in range(10_000):
        k = int(rng.integers(1, 4))
        offs = set()
        while len(offs) < k:
            v = tuple(int(c) for c in rng.integers(-4, 5, size=2))
            if any(v):
                offs.add(v)
        u = tuple(int(c) for c in rng.integers(-5, 6, size=2))
        if not any(u):
            continue
        rule = UpdateRule(offs)
        exact = rule_in_halfspace(rule, u)
        fl = all(float(np.dot(o, u)) < 0.0 for o in rule.offsets)
        assert exact == fl


def test_find_oriented_rule_examples():
    r, u = find_oriented_rule(TRIPLE)
    assert r == TRIPLE.rules[0]
    assert rule_in_halfspace(r, u)
    got = find_oriented_rule(FA2)
    assert got is not None and rule_in_halfspace(got[0], got[1])
    assert find_oriented_rule(UpdateFamily([UpdateRule([(1, 0), (-1, 0)])], 2)) is None
    assert find_oriented_rule(FA3) is None


def test_origin_in_hull_crosscheck(rng):
    # exact hull test against (a) the separating-direction search and (b) an
    # exhaustive small-numerator direction scan, on rules with <= 6 offsets.
    # In the plane a feasible rule always admits a witness whose numerators
    # are bounded by twice the largest offset coordinate (a mediant of two
    # rotated offsets), so the bounded scan is complete.
    for _ in range(300):
        k = int(rng.integers(1, 7))
        offs = set()
        while len(offs) < k:
            v = tuple(int(c) for c in rng.integers(-3, 4, size=2))
            if any(v):
                offs.add(v)
        inside = origin_in_hull(offs, 2)
        w = separating_direction(offs, 2)
        assert inside == (w is None)
        if w is not None:
            assert all(dot(x, w) < 0 for x in offs)
        bound = 2 * max(abs(c) for o in offs for c in o) + 1
        brute = any(
            all(dot(x, u) < 0 for x in offs)
            for u in itertools.product(range(-bound, bound + 1), repeat=2) if any(u)
        )
        assert brute == (w is not None)


def test_separating_direction_dim3():
    offs = [(-1, 0, 0), (0, -1, 0), (0, 0, -1), (-1, -1, -1)]
    w = separating_direction(offs, 3)
    assert w is not None and all(dot(x, w) < 0 for x in offs)
    assert separating_direction([(1, 0, 0), (-1, 0, 0)], 3) is None


def test_classify_named_families():
    assert classify(FA1) == FamilyClass.SUPERCRITICAL
    assert classify(FA2) == FamilyClass.CRITICAL
    assert classify(FA3) == FamilyClass.TRIVIAL_SUBCRITICAL
    assert classify(TRIPLE) == FamilyClass.SUBCRITICAL_NONTRIVIAL
    # the corner family is the same single rule
    assert classify(UpdateFamily.corner(2)) == FamilyClass.SUBCRITICAL_NONTRIVIAL


def test_classify_higher_dim_reduction():
    fa13 = UpdateFamily.fa(1, 3)
    assert classify(fa13) == FamilyClass.UNKNOWN_NONTRIVIAL_SUBCRITICAL
    fa43 = UpdateFamily.fa(4, 3)
    assert classify(fa43) == FamilyClass.TRIVIAL_SUBCRITICAL


def test_classify_oriented_supercritical_singleton():
    # a single one-offset rule: the unstable set is an open semicircle
    fam = UpdateFamily([UpdateRule([(-1, 0)])], 2)
    assert classify(fam) == FamilyClass.SUPERCRITICAL


def test_circle_structure_brute_force(rng):
    # the decomposition agrees with the direct definition on every primitive
    # direction with numerators bounded by the largest offset plus one
    fams = [FA1, FA2, TRIPLE,
            UpdateFamily([UpdateRule([(-1, 0)]), UpdateRule([(2, 1), (1, -2)])], 2)]
    for _ in range(12):
        k = int(rng.integers(1, 4))
        rules = []
        for _ in range(k):
            m = int(rng.integers(1, 4))
            offs = set()
            while len(offs) < m:
                v = tuple(int(c) for c in rng.integers(-2, 3, size=2))
                if any(v):
                    offs.add(v)
            rules.append(UpdateRule(offs))
        fams.append(UpdateFamily(rules, 2))
    for fam in fams:
        structure = circle_structure(fam)
        bound = max(abs(c) for r in fam.rules for o in r.offsets for c in o) + 1
        for num in itertools.product(range(-bound, bound + 1), repeat=2):
            if not any(num):
                continue
            u = primitive(num)
            direct = unstable(fam, u)
            if structure is None:
                assert not direct
            else:
                assert structure_unstable_at(structure, u) == direct


def test_family_norms():
    assert FA2.norm == 1.0
    assert TRIPLE.norm == pytest.approx(math.sqrt(2))
    assert UpdateFamily([UpdateRule([(3, 4)])], 2).norm == 5.0
    assert TRIPLE.norm_sq == 2 and FA2.norm_sq == 1


def test_family_json_roundtrip():
    text = FA2.to_json()
    fam = UpdateFamily.from_json(text)
    assert fam == FA2
    data = json.loads(text)
    assert data["dim"] == 2 and len(data["rules"]) == 6
    assert UpdateFamily.named("fa:2:2") == FA2
    assert UpdateFamily.named("corner:2") == UpdateFamily.corner(2)
    with pytest.raises(ValueError):
        UpdateFamily.named("nope:1")


def test_domain_validation():
    with pytest.raises(ValueError):
        Domain((0, 0), (0, 5))
    with pytest.raises(ValueError):
        Domain((0, 0), (3, 3), boundary="maybe")
    dom = Domain.box(3, 2, boundary="ones")
    assert dom.boundary_bit((-1, 0), FA2) == 1
    ex = Domain((0, 0), (2, 2), boundary={(-1, 0): 1})
    assert ex.boundary_bit((-1, 0), FA2) == 1
    with pytest.raises(ValueError):
        ex.boundary_bit((5, 5), FA2)


def test_ball_offsets():
    ball = FA2.ball_offsets()
    assert set(ball) == {(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)}
    ball2 = TRIPLE.ball_offsets()
    assert (1, 1) in ball2 and (2, 0) not in ball2 and len(ball2) == 9
