"""The compiled kernel and the pure-Python loop must agree bit for bit on
identical inputs; all float work happens upstream in shared code."""

import numpy as np
import pytest

from kcmlab import _pyloop
from kcmlab.benchmark import run_benchmark
from kcmlab.clocks import ClockField
from kcmlab.engine import Layout
from kcmlab.lattice import Domain, UpdateFamily

try:
    from kcmlab import _kernels
except ImportError:  # pragma: no cover
    _kernels = None

needs_compiled = pytest.mark.skipif(_kernels is None, reason="compiled kernels not built")


def _full_call(loop, lay, times, rows, marks, kinds, qs, seed_inits, track, viol_cap=256):
    K = len(kinds)
    bits = np.empty((K, lay.ext_size), dtype=np.uint8)
    template = lay.boundary_template()
    for k in range(K):
        bits[k] = template
        bits[k, lay.int2ext] = seed_inits[k]
    if track:
        orange = np.zeros(lay.ext_size, dtype=np.uint8)
        orange[lay.int2ext] = (seed_inits[0] == 0)
        ocount = int((seed_inits[0] == 0).sum())
    else:
        orange = np.zeros(0, dtype=np.uint8)
        ocount = 0
    n = len(times)
    chg = (np.zeros(n * K, dtype=np.int64), np.zeros(n * K, dtype=np.int32),
           np.zeros(n * K, dtype=np.uint8))
    olog = (np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.uint8))
    viol = (np.zeros(viol_cap, dtype=np.int64), np.zeros(viol_cap, dtype=np.int64),
            np.zeros(viol_cap, dtype=np.int32), np.zeros(viol_cap, dtype=np.int32))
    first = np.full(K, -1, dtype=np.int64)
    probe = np.zeros(lay.ext_size, dtype=np.uint8)
    probe[lay.int2ext[:3]] = 1
    out = loop(
        bits, kinds, qs, times, lay.int2ext[rows], marks, 0,
        lay.rule_ptr, lay.rule_deltas, orange, ocount, lay.ball_deltas,
        np.array([0] * (K - 1), dtype=np.int32), np.arange(1, K, dtype=np.int32),
        1 if K > 2 else -1, np.arange(2, K, dtype=np.int32),
        probe, 2 if track else 0, -1, 1, 0,
        *chg, *olog, *viol, first,
    )
    return out, bits, orange, chg, olog, viol, first


@needs_compiled
def test_backends_bit_identical_random_instances(rng):
    fam_pool = [UpdateFamily.fa(1, 2), UpdateFamily.fa(2, 2), UpdateFamily.corner(2)]
    for trial in range(12):
        fam = fam_pool[trial % len(fam_pool)]
        n = int(rng.integers(3, 8))
        dom = Domain.box(n, 2, boundary="ones" if trial % 2 else "zeros")
        lay = Layout(fam, dom)
        cf = ClockField(trial, 2)
        times, rows, marks, _ = cf.merged(lay.coords, 0.0, float(rng.uniform(5, 25)))
        K = int(rng.integers(1, 4))
        kinds = rng.integers(0, 2, size=K).astype(np.uint8)
        kinds[0] = 0  # orange tracking wants a contact process in slot 0
        qs = rng.uniform(0.0, 1.0, size=K)
        inits = [cf.bernoulli_field(lay.coords, float(rng.uniform(0, 1)), channel=k)
                 for k in range(K)]
        out_a = _full_call(_pyloop.coupled_loop, lay, times, rows, marks, kinds, qs, inits, True)
        out_b = _full_call(_kernels.coupled_loop, lay, times, rows, marks, kinds, qs, inits, True)
        assert out_a[0] == out_b[0]
        for a, b in zip(out_a[1:], out_b[1:]):
            if isinstance(a, tuple):
                for x, y in zip(a, b):
                    assert np.array_equal(x, y)
            else:
                assert np.array_equal(a, b)


@needs_compiled
def test_benchmark_runs_and_agrees():
    report = run_benchmark(n=12, horizon=10.0)
    assert "identical results: True" in report


@needs_compiled
def test_label_components_matches_python(rng):
    from kcmlab._kernels import label_components
    from kcmlab.clusters import _label_py

    for _ in range(10):
        n = int(rng.integers(20, 60))
        mask = (rng.random(n) < 0.45).astype(np.uint8)
        mask[:2] = 0
        mask[-2:] = 0  # padding must cover the largest delta
        deltas = np.array([1, 2], dtype=np.int64)
        a = label_components(mask, deltas)
        b = _label_py(mask, deltas)
        assert np.array_equal(a, b)
