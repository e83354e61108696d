"""Last passage percolation over an oriented rule, and the growing
monotone-set chain it is equivalent to.

Two constructions of the passage field coexist on purpose.  The iid-weight
form s_x = T(x) + max over rule offsets of s at the shifted sites is the
textbook recursion.  The clock-coupled form replaces T(x) by "the wait
until the site's next clock ring", which makes the sublevel sets literally
equal, event by event, to the infected set of the single-rule constrained
dynamics at q = 1 run from the same clock field; that identity is one of
the exact checks of this package, so the two forms are kept as independent
code paths.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .clocks import ClockField
from .lattice import UpdateRule, separating_direction


def _box_coords(n: int, d: int) -> np.ndarray:
    """Sites of {1..n}^d in row-major order."""
    axes = [np.arange(1, n + 1)] * d
    grid = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.reshape(-1) for g in grid], axis=1).astype(np.int64)


def _levels(coords: np.ndarray, witness) -> list[np.ndarray]:
    """Indices of coords grouped by increasing <x, witness>; offsets have
    strictly negative witness projection, so every predecessor x+o lies in
    an earlier group."""
    u = np.asarray(witness, dtype=np.int64)
    proj = coords @ u
    order = np.argsort(proj, kind="stable")
    vals = proj[order]
    out = []
    start = 0
    for i in range(1, len(vals) + 1):
        if i == len(vals) or vals[i] != vals[start]:
            out.append(order[start:i])
            start = i
    return out


def exp_weights(coords: np.ndarray, clocks: ClockField, channel: int = 101) -> np.ndarray:
    """iid exponential(1) site weights drawn from the auxiliary channel of
    the clock field (independent of the event streams)."""
    return -np.log(clocks.uniforms(coords, channel=channel))


def lpp_times(rule: UpdateRule, n: int, clocks: ClockField, weights: np.ndarray | None = None):
    """Passage times on {1..n}^d: s_x = T(x) + max over offsets of s_{x+y},
    with s = 0 outside the box.  The rule must fit an open half-space.

    Returns an ndarray of shape (n,)*d (index [x-1] for site x).
    """
    d = rule.dim
    witness = separating_direction(rule.offsets, d)
    if witness is None:
        raise ValueError("rule does not fit in an open half-space; the recursion is circular")
    coords = _box_coords(n, d)
    w = exp_weights(coords, clocks) if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)
    reach = max(max(abs(c) for c in o) for o in rule.offsets)
    padded_shape = tuple(n + 2 * reach for _ in range(d))
    strides = [1] * d
    for i in range(d - 2, -1, -1):
        strides[i] = strides[i + 1] * padded_shape[i + 1]
    strides = np.asarray(strides, dtype=np.int64)
    flat = (coords - 1 + reach) @ strides
    deltas = np.asarray([sum(c * s for c, s in zip(o, strides)) for o in rule.offsets], dtype=np.int64)

    s = np.zeros(int(np.prod(padded_shape)), dtype=np.float64)
    for level in _levels(coords, witness):
        fl = flat[level]
        best = np.full(level.shape, -np.inf)
        for dlt in deltas:
            np.maximum(best, s[fl + dlt], out=best)
        best[best == -np.inf] = 0.0  # unreachable with nonempty rule; kept for safety
        s[fl] = w[level] + best
    return s[flat].reshape((n,) * d)


def lpp_times_from_clocks(rule: UpdateRule, n: int, clocks: ClockField, t_cap: float | None = None):
    """Clock-coupled passage times: s_x = first ring of the site's own clock
    strictly after every predecessor's passage time, with s = 0 outside.

    Strictness follows the global event order (time, then lexicographic
    site), matching what an event-driven run of the q = 1 single-rule
    dynamics would produce from the same field.  Returns shape (n,)*d.
    """
    d = rule.dim
    witness = separating_direction(rule.offsets, d)
    if witness is None:
        raise ValueError("rule does not fit in an open half-space")
    coords = _box_coords(n, d)
    m = coords.shape[0]
    horizon = t_cap if t_cap is not None else 4.0 * n + 40.0
    keys = clocks.site_keys(coords)

    def per_site(horizon):
        times, rows, _, _ = clocks.generate(keys, horizon)
        starts = np.searchsorted(rows, np.arange(m + 1))  # rows come grouped
        return [times[starts[i]:starts[i + 1]] for i in range(m)]

    site_times = per_site(horizon)
    coord_index = {tuple(c): i for i, c in enumerate(coords)}
    s = np.zeros(m)
    rank = np.arange(m)  # row-major == lexicographic
    stamp = [(0.0, -1)] * m
    for level in _levels(coords, witness):
        for i in level:
            pred = (0.0, -1)
            x = coords[i]
            for o in rule.offsets:
                y = tuple(x + np.asarray(o))
                j = coord_index.get(y)
                if j is not None and stamp[j] > pred:
                    pred = stamp[j]
            ts = site_times[i]
            while True:
                k = np.searchsorted(ts, pred[0], side="left")
                # skip rings not strictly after pred in the (time, rank) order
                while k < len(ts) and (ts[k] < pred[0] or (ts[k] == pred[0] and rank[i] < pred[1])):
                    k += 1
                if k < len(ts):
                    stamp[i] = (float(ts[k]), int(rank[i]))
                    s[i] = ts[k]
                    break
                # ran out of generated events: extend the horizon
                horizon *= 2.0
                site_times = per_site(horizon)
                ts = site_times[i]
    return s.reshape((n,) * d)


@dataclass
class MonotoneChainRecord:
    """Growth history of the monotone-set chain on the cube {1..ell}^d."""

    ell: int
    d: int
    add_times: np.ndarray      # (ell,)*d; +inf where never added
    absorbed_time: float | None

    def set_at(self, t: float) -> np.ndarray:
        return (self.add_times <= t).astype(np.uint8)


def is_monotone(member: np.ndarray) -> bool:
    """Literal downward-closure check of a 0/1 array on the cube."""
    arr = member.astype(bool)
    d = arr.ndim
    for axis in range(d):
        lower = np.take(arr, range(0, arr.shape[axis] - 1), axis=axis)
        upper = np.take(arr, range(1, arr.shape[axis]), axis=axis)
        if np.any(upper & ~lower):
            return False
    return True


def run_monotone_set_chain(ell: int, d: int, clocks: ClockField,
                           horizon: float | None = None) -> MonotoneChainRecord:
    """Start from the empty set; when a site's clock rings, add it if the
    enlarged set is still downward closed (equivalently: all its coordinate
    predecessors inside the cube are already members).  The chain is
    non-decreasing and absorbs at the full cube.
    """
    if ell < 1:
        raise ValueError("ell must be >= 1")
    coords = _box_coords(ell, d)
    m = coords.shape[0]
    member = np.zeros(m, dtype=np.uint8)
    add_times = np.full(m, np.inf)
    coord_index = {tuple(c): i for i, c in enumerate(coords)}
    t0 = 0.0
    state = None
    cap = horizon
    chunk = 4.0 * ell + 16.0 if horizon is None else horizon
    added = 0
    while added < m:
        t1 = t0 + chunk if horizon is None else horizon
        times, rows, _, state = clocks.merged(coords, t0, t1, state=state)
        for t, r in zip(times, rows):
            if member[r]:
                continue
            x = coords[r]
            legal = True
            for axis in range(d):
                if x[axis] > 1:
                    j = coord_index[tuple(x - np.eye(d, dtype=np.int64)[axis])]
                    if not member[j]:
                        legal = False
                        break
            if legal:
                member[r] = 1
                add_times[r] = t
                added += 1
        t0 = t1
        if horizon is not None:
            break
    absorbed = float(add_times.max()) if added == m else None
    return MonotoneChainRecord(ell, d, add_times.reshape((ell,) * d), absorbed)
