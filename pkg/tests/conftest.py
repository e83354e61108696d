import numpy as np
import pytest

from kcmlab.clocks import ClockField
from kcmlab.lattice import constraint_satisfied


def naive_simulate(family, domain, processes, horizon, clocks: ClockField):
    """Definitionally independent re-simulation: walks the merged event list
    and evaluates the constraint through the reference implementation in
    `lattice`, with plain dict state.  Slow; used as the oracle for the
    engine on small instances.

    processes: list of (kind, q, init_dict) with init_dict site->bit.
    Returns per-process ordered change lists [(t, site, newbit)].
    """
    sites = domain.sites()
    events = clocks.merged_events(sites, 0.0, horizon)
    states = [dict(init) for _, _, init in processes]
    changes = [[] for _ in processes]
    for ev in events:
        for k, (kind, q, _) in enumerate(processes):
            st = states[k]
            old = st[ev.site]
            sat = constraint_satisfied(family, domain, st, ev.site)
            if kind == "kcm":
                new = (1 if ev.mark <= q else 0) if sat else old
            else:
                if ev.mark > q:
                    new = 0
                elif sat:
                    new = 1
                else:
                    new = old
            if new != old:
                st[ev.site] = new
                changes[k].append((ev.time, ev.site, new))
    return changes


def traj_changes(traj):
    sites = traj.domain.sites()
    return [(float(t), sites[int(r)], int(b))
            for t, r, b in zip(traj.times, traj.rows, traj.newbits)]


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(12345))
