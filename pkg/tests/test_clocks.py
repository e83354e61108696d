import math

import numpy as np
import pytest
from scipy import stats

from kcmlab.clocks import (ClockField, StreamState, event_bits, fold, mix64,
                           site_key, unit_open)


def test_key_schedule_reference_pins():
    # frozen reference values of the integer schedule; a change here breaks
    # reproducibility of every stored run
    assert mix64(0) == 0
    assert mix64(1) == 0xB456BCFC34C2CB2C
    assert fold(0, 0) == 0x9CA066F1A4AB2EEA
    k = site_key(42, 0, (3, -5))
    assert k == 0x54DC9B6C7E4A2EAE
    g, m = event_bits(k, 0)
    assert (g, m) == (0xAF1E560674CDC8C8, 0xC8055625F692522B)
    assert event_bits(k, 1) == (0xD268B872B96CB1DA, 0xE8B84337301ED56D)
    # distinct identifiers decorrelate the streams
    assert site_key(42, 0, (3, -5)) != site_key(42, 1, (3, -5))
    assert site_key(42, 0, (3, -5)) != site_key(43, 0, (3, -5))
    assert site_key(42, 0, (3, -5)) != site_key(42, 0, (-5, 3))
    assert 0.0 < unit_open(g) < 1.0


def test_determinism_and_purity():
    cf = ClockField(7, 2, replica=3)
    a = cf.events_in((1, 2), 0.0, 50.0)
    b = cf.events_in((1, 2), 0.0, 50.0)
    assert a == b
    assert all(e.time > 0 for e in a)
    times = [e.time for e in a]
    assert all(t1 < t2 for t1, t2 in zip(times, times[1:]))
    # replica separation
    c = ClockField(7, 2, replica=4).events_in((1, 2), 0.0, 50.0)
    assert [e.time for e in c] != times


def test_empty_window_and_errors():
    cf = ClockField(1, 2)
    assert cf.events_in((0, 0), 5.0, 5.0) == []
    with pytest.raises(ValueError):
        cf.events_in((0, 0), 3.0, 2.0)
    with pytest.raises(ValueError):
        cf.merged_events([(0, 0)], -1.0, 2.0)
    with pytest.raises(ValueError):
        cf.site_key((1, 2, 3))


def test_window_splitting(rng):
    cf = ClockField(11, 2)
    site = (4, -7)
    full = cf.events_in(site, 0.0, 40.0)
    for _ in range(100):
        cut = float(rng.uniform(0.0, 40.0))
        left = cf.events_in(site, 0.0, cut)
        right = cf.events_in(site, cut, 40.0)
        assert left + right == full[: len(left) + len(right)] == full


def test_resume_state_matches_one_shot():
    cf = ClockField(3, 2)
    coords = np.array([[0, 0], [1, 5], [-3, 2]])
    keys = cf.site_keys(coords)
    t_all, r_all, m_all, _ = cf.generate(keys, 30.0)
    state = StreamState(3)
    parts = []
    for hi in (7.3, 11.0, 30.0):
        t, r, m, state = cf.generate(keys, hi, state)
        parts.append((t, r, m))
    t_cat = np.concatenate([p[0] for p in parts])
    r_cat = np.concatenate([p[1] for p in parts])
    m_cat = np.concatenate([p[2] for p in parts])
    order = np.lexsort((t_cat, r_cat))
    assert np.array_equal(t_cat[order], t_all)
    assert np.array_equal(r_cat[order], r_all)
    assert np.array_equal(m_cat[order], m_all)


def test_merged_single_site_and_associativity():
    cf = ClockField(5, 2)
    one = cf.merged_events([(2, 2)], 0.0, 25.0)
    direct = cf.events_in((2, 2), 0.0, 25.0)
    assert one == direct
    a = {(0, 0), (1, 0)}
    b = {(5, 5), (6, 5)}
    both = cf.merged_events(a | b, 0.0, 20.0)
    pairwise = sorted(cf.merged_events(a, 0.0, 20.0) + cf.merged_events(b, 0.0, 20.0),
                      key=lambda e: (e.time, e.site))
    assert both == pairwise


def test_merged_order_is_total():
    cf = ClockField(9, 2)
    sites = [(i, j) for i in range(5) for j in range(5)]
    evs = cf.merged_events(sites, 0.0, 30.0)
    keys = [(e.time, e.site) for e in evs]
    assert keys == sorted(keys)
    assert len(set(keys)) == len(keys)  # no two events share (time, site)


def test_poisson_counts():
    # mean count over [0,100] across 10^4 sites: 100 +- 3 sigma of the mean
    cf = ClockField(123, 2)
    coords = np.array([(i, j) for i in range(100) for j in range(100)])
    keys = cf.site_keys(coords)
    times, rows, _, _ = cf.generate(keys, 100.0)
    mean = len(times) / 10_000
    assert abs(mean - 100.0) <= 3.0 * math.sqrt(100.0 / 10_000)


def test_superposition_rate():
    cf = ClockField(77, 2)
    n, horizon = 400, 50.0
    coords = np.array([(i, 0) for i in range(n)])
    keys = cf.site_keys(coords)
    times, _, _, _ = cf.generate(keys, horizon)
    rate = len(times) / horizon
    sigma = math.sqrt(n * horizon) / horizon
    assert abs(rate - n) <= 3 * sigma


def test_gap_and_mark_distributions():
    cf = ClockField(2024, 1)
    coords = np.array([(i,) for i in range(1000)])
    keys = cf.site_keys(coords)
    times, rows, marks, _ = cf.generate(keys, 110.0)
    # inter-arrival gaps within each site
    gaps = []
    starts = np.searchsorted(rows, np.arange(len(coords) + 1))
    for i in range(len(coords)):
        t = times[starts[i]:starts[i + 1]]
        if len(t):
            gaps.append(np.diff(np.concatenate([[0.0], t])))
    gaps = np.concatenate(gaps)[:100_000]
    assert len(gaps) >= 100_000
    p_exp = stats.kstest(gaps, "expon").pvalue
    p_uni = stats.kstest(marks[:100_000], "uniform").pvalue
    assert p_exp > 1e-3
    assert p_uni > 1e-3


def test_uniform_channels():
    cf = ClockField(5, 2)
    coords = np.array([(i, j) for i in range(10) for j in range(10)])
    u0 = cf.uniforms(coords, channel=0)
    u1 = cf.uniforms(coords, channel=1)
    assert np.all((u0 > 0) & (u0 < 1))
    assert not np.array_equal(u0, u1)
    assert np.array_equal(u0, cf.uniforms(coords, channel=0))
    b = cf.bernoulli_field(coords, 0.3)
    assert set(np.unique(b)) <= {0, 1}
