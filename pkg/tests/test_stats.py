import numpy as np
import pytest

from kcmlab.stats import (bootstrap_quantile_ci, fit_exponential, quantile_upper,
                          wilson_interval)


def test_fit_exact_synthetic_curve():
    ts = np.linspace(0.5, 8.0, 12)
    p = np.exp(-0.3 * ts)
    fit = fit_exponential(ts, p)  # no replica counts: plain least squares
    assert fit.ok
    assert fit.rate == pytest.approx(0.3, abs=1e-9)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)


def test_fit_constant_flagged_non_decaying():
    ts = np.linspace(1, 10, 8)
    p = np.full(8, 0.2)
    fit = fit_exponential(ts, p, n_replicas=5000, boot_seed=1)
    assert fit.ok
    assert abs(fit.rate) < 1e-9
    assert not fit.decaying


def test_fit_geometric_tail_monte_carlo():
    # one independent geometric batch per threshold, so the per-point
    # binomial error model of the bootstrap is exact
    rng = np.random.Generator(np.random.PCG64(5))
    n = 20_000
    ells = np.arange(1, 10)
    p_hat = np.array([(rng.geometric(0.2, size=n) >= l).mean() for l in ells])
    fit = fit_exponential(ells, p_hat, n, boot_seed=2)
    true_rate = -np.log(0.8)
    assert fit.ok
    assert fit.rate_ci[0] <= true_rate <= fit.rate_ci[1]


def test_fit_underpowered():
    fit = fit_exponential([1, 2, 3], [0.5, 0.1, 0.01], n_replicas=50)
    assert not fit.ok
    assert "underpowered" in fit.reason


def test_wilson_interval():
    lo, hi = wilson_interval(0, 100)
    assert lo == 0.0 and hi < 0.05
    lo, hi = wilson_interval(100, 100)
    assert hi == pytest.approx(1.0) and lo > 0.95
    lo, hi = wilson_interval(50, 100)
    assert lo < 0.5 < hi
    assert wilson_interval(0, 0) == (0.0, 1.0)


def test_quantile_upper_and_bootstrap():
    xs = np.arange(1, 101, dtype=float)
    assert quantile_upper(xs, 0.75) == 75.0
    assert quantile_upper(xs, 0.01) == 1.0
    lo, hi = bootstrap_quantile_ci(xs, 0.75, n_boot=200, seed=0)
    assert lo <= 75.0 + 5 and hi >= 75.0 - 5 and lo < hi
