"""Statistical reductions: binomial intervals, exponential tail fits,
bootstrap confidence intervals.  Estimation only; every exact claim in the
package is checked pathwise elsewhere."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def wilson_interval(successes: int, n: int, z: float = 1.96):
    """Wilson score interval for a binomial proportion."""
    if n == 0:
        return 0.0, 1.0
    p = successes / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass
class FitResult:
    ok: bool
    rate: float = float("nan")        # decay rate: p(t) ~ exp(intercept - rate*t)
    intercept: float = float("nan")
    r_squared: float = float("nan")
    rate_ci: tuple = (float("nan"), float("nan"))
    n_points: int = 0
    decaying: bool = False
    reason: str = ""


def fit_exponential(ts, p_hat, n_replicas=None, *, min_successes: int = 10,
                    min_points: int = 4, n_boot: int = 200, boot_seed: int = 0) -> FitResult:
    """Weighted least squares of log p against t.

    Points below the noise floor (fewer than `min_successes` estimated
    successes) are dropped; if fewer than `min_points` survive the result is
    flagged underpowered instead of fitted.  With replica counts given, the
    rate CI comes from a parametric binomial bootstrap.
    """
    ts = np.asarray(ts, dtype=float)
    p = np.asarray(p_hat, dtype=float)
    if n_replicas is None:
        n = None
        keep = p > 0
    else:
        n = np.broadcast_to(np.asarray(n_replicas, dtype=float), p.shape)
        succ = p * n
        keep = (succ >= min_successes) & (p > 0)
    ts, p = ts[keep], p[keep]
    if n is not None:
        n = n[keep]
    if len(ts) < min_points:
        return FitResult(ok=False, n_points=len(ts), reason="underpowered: fewer than "
                         f"{min_points} points above the noise floor")

    def wls(tv, pv, nv):
        y = np.log(pv)
        if nv is None:
            w = np.ones_like(y)
        else:
            # delta method: var(log p_hat) ~ (1-p)/(n p); clip p away from 1
            pc = np.minimum(pv, 1.0 - 1.0 / (2.0 * np.maximum(nv, 2.0)))
            w = nv * pc / (1.0 - pc)
        wm_t = np.average(tv, weights=w)
        wm_y = np.average(y, weights=w)
        cov = np.average((tv - wm_t) * (y - wm_y), weights=w)
        var = np.average((tv - wm_t) ** 2, weights=w)
        if var == 0:
            return None
        slope = cov / var
        inter = wm_y - slope * wm_t
        resid = y - (inter + slope * tv)
        ss_res = np.average(resid ** 2, weights=w)
        ss_tot = np.average((y - wm_y) ** 2, weights=w)
        r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
        return slope, inter, r2

    fit = wls(ts, p, n)
    if fit is None:
        return FitResult(ok=False, n_points=len(ts), reason="degenerate time grid")
    slope, inter, r2 = fit
    rate = -slope

    if n is not None and n_boot > 0:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((int(boot_seed), 0xB007))))
        rates = []
        for _ in range(n_boot):
            pb = rng.binomial(n.astype(int), p) / n
            ok = pb > 0
            if ok.sum() < 2:
                continue
            f = wls(ts[ok], pb[ok], n[ok])
            if f is not None:
                rates.append(-f[0])
        if rates:
            lo, hi = np.percentile(rates, [2.5, 97.5])
        else:
            lo = hi = rate
    else:
        lo = hi = rate
    return FitResult(ok=True, rate=float(rate), intercept=float(inter), r_squared=float(r2),
                     rate_ci=(float(lo), float(hi)), n_points=len(ts),
                     decaying=bool(rate > 0 and lo > 0))


def quantile_upper(samples, level: float) -> float:
    """Smallest sample value t with at least `level` fraction of samples <= t."""
    s = np.sort(np.asarray(samples, dtype=float))
    k = int(np.ceil(level * len(s)))
    k = min(max(k, 1), len(s))
    return float(s[k - 1])


def bootstrap_quantile_ci(samples, level: float, n_boot: int = 500, seed: int = 0):
    samples = np.asarray(samples, dtype=float)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((int(seed), 0xC1))))
    qs = [quantile_upper(rng.choice(samples, size=len(samples), replace=True), level)
          for _ in range(n_boot)]
    lo, hi = np.percentile(qs, [2.5, 97.5])
    return float(lo), float(hi)


def geometric_times(t_min: float, t_max: float, n: int) -> np.ndarray:
    return np.geomspace(t_min, t_max, n)
