"""Benchmark of the two event-loop backends on one identical workload.

The compiled kernel and the Python fallback consume the same pre-generated
event arrays, so besides the timing the benchmark asserts that both produce
the same final state; a mismatch would mean the backends have drifted."""

from __future__ import annotations

import time

import numpy as np

from .backend import get_backends
from .clocks import ClockField
from .engine import Layout
from .lattice import Domain, UpdateFamily


def _workload(n: int, horizon: float, seed: int = 0):
    fam = UpdateFamily.fa(2, 2)
    dom = Domain.box(n, 2, boundary="ones")
    lay = Layout(fam, dom)
    cf = ClockField(seed, 2)
    times, rows, marks, _ = cf.merged(lay.coords, 0.0, horizon)
    return fam, lay, times, rows, marks


def _run(loop, lay, times, rows, marks):
    K = 3
    bits = np.empty((K, lay.ext_size), dtype=np.uint8)
    template = lay.boundary_template()
    for k in range(K):
        bits[k] = template
    bits[1, lay.int2ext] = 1
    orange = np.zeros(lay.ext_size, dtype=np.uint8)
    orange[lay.int2ext] = 1
    kinds = np.array([0, 1, 1], dtype=np.uint8)
    qs = np.array([0.9, 0.95, 0.95])
    sites_ext = lay.int2ext[rows]
    empty = np.zeros(0, dtype=np.int64)
    t0 = time.perf_counter()
    out = loop(
        bits, kinds, qs, times, sites_ext, marks, 0,
        lay.rule_ptr, lay.rule_deltas,
        orange, int(orange.sum()), lay.ball_deltas,
        np.array([0, 0], dtype=np.int32), np.array([1, 2], dtype=np.int32),
        1, np.array([2], dtype=np.int32),
        np.zeros(0, dtype=np.uint8), 0, -1, 0, 0,
        np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int32), np.zeros(0, dtype=np.uint8),
        np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.uint8),
        np.zeros(64, dtype=np.int64), np.zeros(64, dtype=np.int64),
        np.zeros(64, dtype=np.int32), np.zeros(64, dtype=np.int32),
        np.full(3, -1, dtype=np.int64),
    )
    dt = time.perf_counter() - t0
    return dt, bits.copy(), out


def run_benchmark(n: int = 24, horizon: float = 30.0, seed: int = 0) -> str:
    py_loop, cy_loop = get_backends()
    fam, lay, times, rows, marks = _workload(n, horizon, seed)
    n_ev = len(times)
    lines = [f"workload: FA-2f box {n}x{n}, horizon {horizon}, {n_ev} events, 3 processes + orange"]
    t_py, bits_py, out_py = _run(py_loop, lay, times, rows, marks)
    lines.append(f"python   : {t_py:8.3f} s  ({1e9 * t_py / n_ev:8.1f} ns/event)")
    if cy_loop is None:
        lines.append("compiled : not built")
        return "\n".join(lines)
    t_cy, bits_cy, out_cy = _run(cy_loop, lay, times, rows, marks)
    lines.append(f"compiled : {t_cy:8.3f} s  ({1e9 * t_cy / n_ev:8.1f} ns/event)")
    same = np.array_equal(bits_py, bits_cy) and out_py == out_cy
    lines.append(f"speedup  : {t_py / t_cy:8.1f}x   identical results: {same}")
    if not same:
        raise AssertionError("backend results diverged; see benchmark output")
    return "\n".join(lines)
