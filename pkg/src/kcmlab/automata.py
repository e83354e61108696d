"""Discrete-time dynamics: monotone closure dynamics, general cellular
automata, and their noisy versions where every site is independently zeroed
with probability delta each step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lattice import Domain, UpdateFamily


@dataclass
class DiscreteTrajectory:
    """Frame-indexed record: frames[t] is the configuration at step t."""

    frames: np.ndarray  # (steps+1, *shape) uint8
    topology: str       # 'torus' or 'box'
    meta: dict = field(default_factory=dict)

    @property
    def steps(self):
        return self.frames.shape[0] - 1

    def final(self):
        return self.frames[-1]


def _family_reach(family: UpdateFamily) -> int:
    return max(max(abs(c) for c in o) for r in family.rules for o in r.offsets)


def _constraint_field(family: UpdateFamily, padded: np.ndarray, shape, w: int) -> np.ndarray:
    """Boolean array: constraint satisfied at each interior site."""
    out = np.zeros(shape, dtype=bool)
    for rule in family.rules:
        acc = np.ones(shape, dtype=bool)
        for o in rule.offsets:
            sl = tuple(slice(w + oc, w + oc + s) for oc, s in zip(o, shape))
            acc &= padded[sl].astype(bool)
        out |= acc
    return out


def _pad(state: np.ndarray, reach: int, topology: str, domain: Domain | None):
    if reach == 0:
        return state
    if topology == "torus":
        return np.pad(state, reach, mode="wrap")
    if domain is None:
        raise ValueError("box topology needs a Domain for the boundary condition")
    if domain.boundary == "ones":
        return np.pad(state, reach, mode="constant", constant_values=1)
    if domain.boundary == "zeros":
        return np.pad(state, reach, mode="constant", constant_values=0)
    padded = np.pad(state, reach, mode="constant", constant_values=0)
    for site, bit in domain.boundary.items():
        idx = tuple(c - l + reach for c, l in zip(site, domain.lo))
        if all(0 <= i < s for i, s in zip(idx, padded.shape)):
            padded[idx] = 1 if bit else 0
    return padded


class CellMap:
    """A local boolean update map with finite support: `fn(padded, shape)`
    returns the new interior, reading at most `reach` cells outward."""

    def __init__(self, fn, reach: int):
        self.fn = fn
        self.reach = int(reach)

    def apply_padded(self, padded, shape):
        return self.fn(padded, shape)


def bp_map(family: UpdateFamily) -> CellMap:
    """Closure map: a site turns (and stays) 1 once some rule around it is
    fully infected."""
    w = _family_reach(family)

    def fn(padded, shape):
        inner = tuple(slice(w, w + s) for s in shape)
        out = padded[inner].astype(bool) | _constraint_field(family, padded, shape, w)
        return out.astype(np.uint8)

    return CellMap(fn, w)


def bp_step(family: UpdateFamily, state: np.ndarray, domain: Domain | None = None,
            topology: str = "box") -> np.ndarray:
    w = _family_reach(family)
    padded = _pad(state, w, topology, domain)
    out = state.astype(bool) | _constraint_field(family, padded, state.shape, w)
    return out.astype(np.uint8)


def run_bp(family: UpdateFamily, init, steps: int, domain: Domain,
           topology: str = "box") -> DiscreteTrajectory:
    """Deterministic closure dynamics for a fixed number of steps."""
    if steps < 0:
        raise ValueError("steps must be >= 0")
    state = _init_array(init, domain)
    frames = [state.copy()]
    for _ in range(steps):
        state = bp_step(family, state, domain, topology)
        frames.append(state.copy())
    return DiscreteTrajectory(np.stack(frames), topology, {"process": "bp"})


def bp_closure(family: UpdateFamily, init, domain: Domain, topology: str = "box",
               max_steps: int | None = None):
    """Iterate the closure map to its fixpoint; returns (closure, n_steps).

    Monotonicity bounds the number of productive steps by the volume.
    """
    state = _init_array(init, domain)
    cap = max_steps if max_steps is not None else state.size + 1
    for t in range(cap):
        nxt = bp_step(family, state, domain, topology)
        if np.array_equal(nxt, state):
            return state, t
        state = nxt
    return state, cap


def _init_array(init, domain: Domain) -> np.ndarray:
    if isinstance(init, str):
        if init == "ones":
            return np.ones(domain.shape, dtype=np.uint8)
        if init == "zeros":
            return np.zeros(domain.shape, dtype=np.uint8)
        raise ValueError(f"unknown init {init!r}")
    if isinstance(init, (set, frozenset, list)) and init and isinstance(next(iter(init)), tuple):
        arr = np.zeros(domain.shape, dtype=np.uint8)
        for site in init:
            arr[tuple(c - l for c, l in zip(site, domain.lo))] = 1
        return arr
    arr = np.asarray(init, dtype=np.uint8)
    if arr.shape != tuple(domain.shape):
        raise ValueError("init array shape mismatch")
    return arr.copy()


def death_uniforms(seed: int, step: int, shape) -> np.ndarray:
    """Step-t kill uniforms; a function of (seed, step) only, so different
    death rates can be coupled by thresholding the same field."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((int(seed), 0xDEAD, int(step)))))
    return rng.random(shape)


def run_ca_death(cmap: CellMap, delta: float, init, steps: int, seed: int,
                 shape=None, topology: str = "torus", domain: Domain | None = None,
                 record: bool = True) -> DiscreteTrajectory:
    """Apply the map sitewise, then kill each site independently with
    probability delta.  delta = 0 reduces to the plain automaton."""
    if not 0.0 <= delta <= 1.0:
        raise ValueError("delta must lie in [0, 1]")
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if domain is not None:
        state = _init_array(init, domain)
    elif shape is not None:
        state = _init_array(init, Domain((0,) * len(shape), shape))
    else:
        state = np.asarray(init, dtype=np.uint8).copy()
    frames = [state.copy()] if record else None
    for t in range(1, steps + 1):
        padded = _pad(state, cmap.reach, topology, domain)
        state = cmap.apply_padded(padded, state.shape).astype(np.uint8)
        if delta > 0.0:
            kill = death_uniforms(seed, t, state.shape) < delta
            state[kill] = 0
        if record:
            frames.append(state.copy())
    meta = {"process": "ca-death", "delta": delta, "seed": seed}
    if record:
        return DiscreteTrajectory(np.stack(frames), topology, meta)
    meta["final_only"] = True
    return DiscreteTrajectory(np.stack([state]), topology, meta)
