import numpy as np
import pytest

from kcmlab.clocks import ClockField
from kcmlab.coupling import (dominating_inits, estimate_mixing_time,
                             grand_coupling_check, survival_curve, track_orange)
from kcmlab.engine import Layout, run_coupled, run_cp
from kcmlab.lattice import Domain, UpdateFamily
from kcmlab.stats import fit_exponential

FA1 = UpdateFamily.fa(1, 2)
FA2 = UpdateFamily.fa(2, 2)


def test_orange_initialisation_and_removal():
    dom = Domain.box(6, 2, boundary="ones")
    cf = ClockField(1, 2)
    res = run_coupled(FA2, dom, [("cp", 0.9, ("bernoulli", 0.5, 3))], 20.0, cf,
                      track_orange=True, olog_mode=2)
    traj = res.trajectories[0]
    rep = track_orange(traj, cf)
    # all healthy sites are initially orange
    assert np.array_equal(rep.initial, (traj.init == 0).astype(np.uint8))
    # an infection event at an orange site removes it immediately
    ot, orr, ofl = res.orange_log
    state = rep.initial.copy()
    for t, r, f in zip(ot, orr, ofl):
        state[int(r)] = f
        frame = traj.frame_at(float(t))
        assert not np.any(state & frame)  # members stay within healthy sites


def test_orange_never_grows_from_fully_infected():
    dom = Domain.box(5, 2, boundary="ones")
    cf = ClockField(2, 2)
    res = run_coupled(FA2, dom, [("cp", 0.7, "ones")], 30.0, cf,
                      track_orange=True, olog_mode=2)
    # empty from the start and absorbing: no site ever joins
    assert res.empty_time == 0.0
    assert len(res.orange_log[0]) == 0


def test_orange_absorption():
    dom = Domain.box(6, 2, boundary="ones")
    cf = ClockField(3, 2)
    res = run_coupled(FA2, dom, [("cp", 0.92, ("bernoulli", 0.6, 1))], 200.0, cf,
                      track_orange=True, olog_mode=2, stop_on_empty=False)
    assert res.empty_time is not None
    ot = res.orange_log[0]
    assert not np.any(ot > res.empty_time)  # no changes at all after emptiness


def test_track_orange_requires_cp():
    dom = Domain.box(4, 2, boundary="ones")
    from kcmlab.engine import run_kcm

    traj = run_kcm(FA2, dom, "zeros", 0.9, 5.0, ClockField(0, 2))
    with pytest.raises(ValueError):
        track_orange(traj)


def test_grand_coupling_trivial_all_ones():
    dom = Domain.box(6, 2, boundary="ones")
    cf = ClockField(5, 2)
    lay = Layout(FA2, dom)
    ones = np.ones(lay.coords.shape[0], dtype=np.uint8)
    rep = grand_coupling_check(FA2, dom, 1.0, 1.0, 25.0, cf, ones, [ones])
    assert rep.passed and rep.n_violations == 0
    assert rep.empty_time == 0.0


def test_grand_coupling_random_instances():
    dom = Domain.box(10, 2, boundary="ones")
    for seed in range(3):
        cf = ClockField(seed, 2)
        lay = Layout(FA2, dom)
        xi = lay.parse_init(("bernoulli", 0.8, 0), cf)
        xps = dominating_inits(xi, 5, cf, lay.coords)
        rep = grand_coupling_check(FA2, dom, 0.95, 0.9, 60.0, cf, xi, xps)
        assert rep.n_violations == 0
        assert rep.certificate.coupled
        assert rep.final_coupled is True


def test_grand_coupling_rejects_non_dominating():
    dom = Domain.box(4, 2, boundary="ones")
    cf = ClockField(0, 2)
    lay = Layout(FA2, dom)
    xi = np.ones(lay.coords.shape[0], dtype=np.uint8)
    bad = xi.copy()
    bad[0] = 0
    with pytest.raises(ValueError):
        grand_coupling_check(FA2, dom, 0.9, 0.8, 5.0, cf, xi, [bad])
    with pytest.raises(ValueError):
        grand_coupling_check(FA2, dom, 0.8, 0.9, 5.0, cf, xi, [xi])  # q0 > q


def test_orange_replay_equals_kernel_and_fault_detected():
    dom = Domain.box(8, 2, boundary="ones")
    cf = ClockField(11, 2)
    res = run_coupled(FA2, dom, [("cp", 0.9, ("bernoulli", 0.7, 2))], 40.0, cf,
                      track_orange=True, olog_mode=2)
    traj = res.trajectories[0]
    rep = track_orange(traj, cf)
    ot, orr, ofl = res.orange_log
    assert np.array_equal(rep.times, ot)
    assert np.array_equal(rep.rows, orr)
    assert np.array_equal(rep.flags, ofl)
    assert rep.empty_time() == res.empty_time
    faulty = track_orange(traj, cf, inject_fault="drop_add")
    assert len(faulty.times) != len(ot) or not np.array_equal(faulty.times, ot)


def test_orange_shrinks_setwise_when_q0_grows():
    # same clock field: raising the kill threshold can only remove orange
    dom = Domain.box(7, 2, boundary="ones")
    states = {}
    for q0 in (0.85, 0.95):
        cf = ClockField(21, 2)
        res = run_coupled(FA2, dom, [("cp", q0, ("bernoulli", 0.6, 5))], 30.0, cf,
                          track_orange=True, olog_mode=2)
        traj = res.trajectories[0]
        rep = track_orange(traj, cf)
        states[q0] = rep
    lo, hi = states[0.85], states[0.95]
    ts = np.unique(np.concatenate([lo.times, hi.times, [0.0]]))
    for t in ts:
        a = lo.members_at(float(t))
        b = hi.members_at(float(t))
        assert np.all(b <= a)


def test_mixing_single_site_waiting_time():
    # one always-constrained site at q = q0 = 1: the certificate time is the
    # first clock ring, an exponential(1) variable
    est = estimate_mixing_time(FA1, 1, 1.0, replicas=400, seed=3, delta=0.25)
    mean = est.empty_times.mean()
    assert abs(mean - 1.0) <= 3.0 / np.sqrt(400)
    q75 = np.log(4.0)  # exponential 0.75-quantile
    se = np.sqrt(0.75 * 0.25 / 400) / np.exp(-q75)
    assert abs(est.t_hat - q75) <= 3 * se


def test_mixing_refuses_trivial_subcritical():
    with pytest.raises(ValueError):
        estimate_mixing_time(UpdateFamily.fa(3, 2), 4, 0.9, replicas=2, seed=0)


def test_mixing_jobs_parallel_matches_serial():
    a = estimate_mixing_time(FA2, 6, 0.95, replicas=8, seed=5, jobs=1)
    b = estimate_mixing_time(FA2, 6, 0.95, replicas=8, seed=5, jobs=2)
    assert np.array_equal(a.empty_times, b.empty_times)
    assert a.t_hat == b.t_hat


def test_survival_all_ones_is_zero():
    sc = survival_curve(FA2, q0=1.0, p_init=1.0, horizon=5.0, replicas=50, seed=1,
                        halfwidth=6)
    assert np.all(sc.p_hat == 0.0)


def test_survival_initial_density():
    p_init = 0.9
    sc = survival_curve(FA2, q0=0.97, p_init=p_init, horizon=2.0, replicas=500, seed=2,
                        halfwidth=8, times=np.array([1e-9, 1.0]))
    p0 = sc.p_hat[0]
    sigma = np.sqrt(0.1 * 0.9 / 500)
    assert abs(p0 - (1 - p_init)) <= 3 * sigma


def test_survival_parallel_and_burnin_paths():
    kw = dict(q0=0.95, p_init=0.9, horizon=4.0, replicas=30, seed=4, halfwidth=7)
    a = survival_curve(FA2, **kw, jobs=1)
    b = survival_curve(FA2, **kw, jobs=2)
    assert np.array_equal(a.counts, b.counts)
    c = survival_curve(FA2, **kw, burn_in=2.0)
    assert c.replicas == 30  # the two-phase protocol runs end to end


def test_survival_buffer_validation_flag():
    sc = survival_curve(FA2, q0=0.97, p_init=0.95, horizon=3.0, replicas=20, seed=6,
                        halfwidth=9, validate=2)
    assert sc.buffer_validated is True


def test_mixing_certificate_at_q1_is_completion_time():
    # with no kills the orange set is exactly the healthy set, so the
    # certificate fires when the last site becomes infected
    fam = UpdateFamily([next(iter(UpdateFamily.corner(2).rules))], 2)
    from kcmlab.engine import run_kcm
    from kcmlab.lattice import Domain
    from kcmlab.clocks import ClockField

    n = 8
    est = estimate_mixing_time(fam, n, 1.0, replicas=6, seed=17, delta=0.25)
    dom = Domain.box(n, 2, boundary="ones")
    for r in range(6):
        traj = run_kcm(fam, dom, "zeros", 1.0, est.empty_times[r] + 1.0,
                       ClockField(17, 2, replica=r))
        assert est.empty_times[r] == float(traj.times.max())
        assert traj.final.all()
