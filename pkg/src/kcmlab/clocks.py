"""Deterministic per-site event streams driving every continuous-time process.

Each lattice site carries a rate-1 Poisson stream of update attempts, each
attempt tagged with a uniform mark in (0,1).  The whole field is a pure
function of (seed, replica, site, event index): nothing is ever stored, so
two processes handed the same field consume literally identical randomness.
That is what makes every coupling in this package exact rather than
statistical.

Key schedule (documented so runs can be reproduced elsewhere):

    mix64       = MurmurHash3 fmix64 finalizer
    fold(h, v)  = mix64((h + GAMMA) ^ mix64(v)),  GAMMA = 0x9E3779B97F4A7C15
    site key    = fold(...fold(fold(mix64(seed), replica), dim)..., x_i & M)
                  folding the d coordinates in order (two's complement)
    event i     : h_i  = fold(site_key, i)            (i = 0, 1, 2, ...)
                  gap  = -log(unit(h_i))              exponential(1)
                  mark = unit(mix64(h_i ^ MARK_SALT))
    unit(b)     = ((b >> 11) + 0.5) * 2**-53          open interval (0,1)
    time_i      = time_{i-1} + gap_i, bumped by one ulp if rounding would
                  make it non-increasing (time_{-1} = 0)

Auxiliary per-site uniforms (e.g. Bernoulli initial conditions) come from
fold(site_key ^ AUX_SALT, channel) so they never collide with event indices.

All integer arithmetic is modulo 2**64.  The float conversion uses midpoints
of the 2**53 lattice, so gaps are strictly positive and marks never hit 0 or
1 exactly; comparisons "mark <= q" at q = 0 or q = 1 therefore behave like
the continuum model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
MARK_SALT = 0xA5A5A5A5A5A5A5A5
AUX_SALT = 0x3C79AC492BA7B653

_U64 = np.uint64
_TWO_NEG53 = 2.0 ** -53


def mix64(z: int) -> int:
    """MurmurHash3 64-bit finalizer (scalar reference)."""
    z &= MASK64
    z = ((z ^ (z >> 33)) * 0xFF51AFD7ED558CCD) & MASK64
    z = ((z ^ (z >> 33)) * 0xC4CEB9FE1A85EC53) & MASK64
    return z ^ (z >> 33)


def fold(h: int, v: int) -> int:
    return mix64(((h + GAMMA) & MASK64) ^ mix64(v))


def mix64_np(z: np.ndarray) -> np.ndarray:
    z = z.astype(_U64, copy=True)
    z ^= z >> _U64(33)
    z *= _U64(0xFF51AFD7ED558CCD)
    z ^= z >> _U64(33)
    z *= _U64(0xC4CEB9FE1A85EC53)
    z ^= z >> _U64(33)
    return z


def fold_np(h: np.ndarray, v: np.ndarray) -> np.ndarray:
    return mix64_np((h + _U64(GAMMA)) ^ mix64_np(np.asarray(v, dtype=_U64)))


def unit_open(bits: int) -> float:
    """Map 64 random bits to the open interval (0,1)."""
    return ((bits >> 11) + 0.5) * _TWO_NEG53


def unit_open_np(bits: np.ndarray) -> np.ndarray:
    return ((bits >> _U64(11)).astype(np.float64) + 0.5) * _TWO_NEG53


def site_key(seed: int, replica: int, coords) -> int:
    """Scalar site key; coords is a tuple of (possibly negative) integers."""
    h = fold(fold(mix64(seed & MASK64), replica & MASK64), len(coords))
    for c in coords:
        h = fold(h, c & MASK64)
    return h


def event_bits(key: int, index: int) -> tuple[int, int]:
    """(gap bits, mark bits) of event `index` of the site with this key."""
    h = fold(key, index)
    return h, mix64(h ^ MARK_SALT)


@dataclass(frozen=True)
class ClockEvent:
    site: tuple
    time: float
    mark: float


class StreamState:
    """Resume point for slab-wise generation: next event index and the time
    of the last emitted event, per site.  Continuing from a state yields
    bit-identical times to one uninterrupted pass."""

    def __init__(self, n):
        self.index = np.zeros(n, dtype=np.int64)
        self.last = np.zeros(n, dtype=np.float64)


class ClockField:
    """The shared randomness: one rate-1 marked Poisson stream per site.

    Immutable; queries are pure functions, so replicas and processes may
    share one field freely.
    """

    def __init__(self, seed: int, dim: int, replica: int = 0):
        self.seed = int(seed)
        self.dim = int(dim)
        self.replica = int(replica)

    # -- keys ---------------------------------------------------------------

    def site_key(self, coords) -> int:
        if len(coords) != self.dim:
            raise ValueError(f"site has {len(coords)} coords, field dim is {self.dim}")
        return site_key(self.seed, self.replica, coords)

    def site_keys(self, coords: np.ndarray) -> np.ndarray:
        coords = np.asarray(coords, dtype=np.int64)
        if coords.ndim != 2 or coords.shape[1] != self.dim:
            raise ValueError("coords must be (m, dim)")
        m = coords.shape[0]
        h = np.full(m, fold(fold(mix64(self.seed & MASK64), self.replica & MASK64), self.dim), dtype=_U64)
        for j in range(self.dim):
            h = fold_np(h, coords[:, j].astype(_U64))
        return h

    # -- event generation ---------------------------------------------------

    def generate(self, keys: np.ndarray, t_hi: float, state: StreamState | None = None):
        """All events with time in (state.last, t_hi] for every site in `keys`.

        Returns (times, rows, marks, state): flat arrays where rows[i] indexes
        into `keys`, ordered by site then by time.  `state` is advanced past
        t_hi and can be handed back to continue with a later slab.
        """
        keys = np.asarray(keys, dtype=_U64)
        m = keys.shape[0]
        if state is None:
            state = StreamState(m)
        if t_hi < 0:
            raise ValueError("t_hi must be >= 0")

        out_times = []
        out_rows = []
        out_marks = []
        active = np.arange(m)
        # a site is finished once its last generated time exceeds t_hi
        active = active[state.last[active] <= t_hi]
        first = True
        while active.size:
            span = t_hi - state.last[active].min()
            if first:
                block = int(math.ceil(span + 6.0 * math.sqrt(max(span, 1.0)) + 12.0))
                first = False
            else:
                block = 16
            idx0 = state.index[active]
            akeys = keys[active]
            gap_bits = np.empty((active.size, block), dtype=_U64)
            for j in range(block):
                gap_bits[:, j] = fold_np(akeys, (idx0 + j).astype(_U64))
            gaps = -np.log(unit_open_np(gap_bits))
            times = np.empty_like(gaps)
            prev = state.last[active]
            for j in range(block):
                t = prev + gaps[:, j]
                # rounding guard: event times must strictly increase per site
                bump = t <= prev
                if bump.any():
                    t = np.where(bump, np.nextafter(prev, np.inf), t)
                times[:, j] = t
                prev = t
            keep = times <= t_hi
            counts = keep.sum(axis=1)
            if keep.any():
                rows_local, cols = np.nonzero(keep)
                sel_times = times[rows_local, cols]
                marks = unit_open_np(mix64_np(gap_bits[rows_local, cols] ^ _U64(MARK_SALT)))
                out_times.append(sel_times)
                out_rows.append(active[rows_local])
                out_marks.append(marks)
            state.index[active] = idx0 + counts
            # resume from the last emitted event, not the overshoot one
            has = counts > 0
            state.last[active[has]] = times[has, counts[has] - 1]
            done = counts < block
            # sites with a full block all <= t_hi need more events
            active = active[~done]
        if out_times:
            times = np.concatenate(out_times)
            rows = np.concatenate(out_rows)
            marks = np.concatenate(out_marks)
            order = np.lexsort((times, rows))  # group by site, time-ordered within
            return times[order], rows[order], marks[order], state
        return (np.empty(0), np.empty(0, dtype=np.int64), np.empty(0), state)

    def merged(self, coords: np.ndarray, t_lo: float, t_hi: float, state: StreamState | None = None):
        """Globally ordered stream over a finite site set.

        Events are sorted by (time, row) where row is the index into `coords`;
        the row order breaks the (float-only) possibility of simultaneous
        events across sites, so every consumer sees one fixed total order.
        Returns (times, rows, marks, state).
        """
        if t_hi < t_lo:
            raise ValueError("t_hi < t_lo")
        keys = self.site_keys(coords)
        if state is None and t_lo > 0.0:
            _, _, _, state = self.generate(keys, t_lo)
        times, rows, marks, state = self.generate(keys, t_hi, state)
        sel = times > t_lo
        times, rows, marks = times[sel], rows[sel], marks[sel]
        order = np.lexsort((rows, times))
        return times[order], rows[order], marks[order], state

    # -- single-site conveniences --------------------------------------------

    def stream(self, site, t_hi: float, t_lo: float = 0.0):
        """(times, marks) of one site's events with time in (t_lo, t_hi]."""
        coords = np.asarray([site], dtype=np.int64)
        times, _, marks, _ = self.generate(self.site_keys(coords), t_hi)
        sel = times > t_lo
        return times[sel], marks[sel]

    def events_in(self, site, t0: float, t1: float) -> list[ClockEvent]:
        if not 0 <= t0 <= t1:
            raise ValueError("need 0 <= t0 <= t1")
        times, marks = self.stream(site, t1, t0)
        site = tuple(int(c) for c in site)
        return [ClockEvent(site, float(t), float(u)) for t, u in zip(times, marks)]

    def merged_events(self, sites, t0: float, t1: float) -> list[ClockEvent]:
        if not 0 <= t0 <= t1:
            raise ValueError("need 0 <= t0 <= t1")
        coords = np.asarray(sorted(tuple(int(c) for c in s) for s in sites), dtype=np.int64)
        if coords.size == 0:
            return []
        times, rows, marks, _ = self.merged(coords, t0, t1)
        return [
            ClockEvent(tuple(int(c) for c in coords[r]), float(t), float(u))
            for t, r, u in zip(times, rows, marks)
        ]

    # -- auxiliary uniforms ---------------------------------------------------

    def uniforms(self, coords: np.ndarray, channel: int = 0) -> np.ndarray:
        """One uniform (0,1) per site, independent of the event stream."""
        keys = self.site_keys(np.asarray(coords, dtype=np.int64))
        return unit_open_np(fold_np(keys ^ _U64(AUX_SALT), np.full(len(keys), channel, dtype=_U64)))

    def bernoulli_field(self, coords: np.ndarray, p: float, channel: int = 0) -> np.ndarray:
        return (self.uniforms(coords, channel) < p).astype(np.uint8)
