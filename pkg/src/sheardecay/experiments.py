"""End-to-end experiment pipelines used by the CLI and the acceptance suite.

Each pipeline picks solver parameters from the profile's own length and time
scales (grid fine enough for the thinnest diffusive layer, time step under
the advective phase limit) and returns plain data objects.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import coupling as cpl
from . import measures, pde, ratefit, sde, timescales
from .profiles import ShearProfile, make_profile, minimal_differential


def _round_up(x, mult=32):
    return int(mult * math.ceil(x / mult))


def torus_grid_size(profile, nu, min_m=64, cells_per_layer=8.0) -> int:
    """y resolution from the thinnest diffusive layer on a scan grid."""
    ell_min = math.inf
    for y in np.linspace(0.0, 1.0, 97, endpoint=False):
        ell_min = min(ell_min, math.sqrt(nu * timescales.local_timescale(profile, nu, float(y))))
    for c in profile.critical_points:
        ell_min = min(ell_min, math.sqrt(
            nu * timescales.local_timescale(profile, nu, c.location)))
    return max(min_m, _round_up(cells_per_layer / ell_min))


def disk_grid_size(profile, nu, min_p=64, cells_per_layer=8.0) -> int:
    lo = 0.25 if profile.singular_origin else 0.02
    ell_min = math.inf
    for r in np.linspace(lo, 1.0 - 1e-6, 65):
        ell_min = min(ell_min, math.sqrt(nu * timescales.local_timescale(profile, nu, float(r))))
    return max(min_p, _round_up(cells_per_layer / ell_min))


@dataclass
class RatePoint:
    nu: float
    rate: float
    t_end: float
    grid: int
    dt: float


@dataclass
class RateSweep:
    profile_config: dict
    points: list[RatePoint]
    fit: ratefit.ScalingFit
    gamma_pred: float
    log_power: float | None

    def as_dict(self) -> dict:
        d = self.fit.as_dict()
        d["profile"] = self.profile_config
        d["gamma_pred"] = self.gamma_pred
        if self.log_power is not None:
            d["log_power_pred"] = self.log_power
        return d


def _torus_rate_point(profile, nu, k_mode, t_end_mult, window) -> RatePoint:
    diff = minimal_differential(profile)
    T = timescales.global_timescale(diff, nu)
    M = torus_grid_size(profile, nu)
    bmax = float(np.max(np.abs(profile.b_array(np.arange(M) / M))))
    dt = 0.04 / max(bmax * k_mode, 1e-9)
    t_end = t_end_mult * T
    f0 = pde.TorusField.single_mode(k_mode, M, k_mode, lambda y: np.ones_like(y))
    _, curve = pde.evolve_torus(profile, nu, f0, t_end, dt,
                                curve_samples=600,
                                stop_below=min(window) * math.exp(-1.0))
    rate = ratefit.fit_decay_rate(curve, window)
    return RatePoint(nu=nu, rate=rate, t_end=float(curve.times[-1]), grid=M, dt=dt)


def _disk_rate_point(profile, nu, m_mode, t_end_mult, window, init) -> RatePoint:
    diff = minimal_differential(profile)
    T = timescales.global_timescale(diff, nu)
    P = disk_grid_size(profile, nu)
    rs = (np.arange(P) + 0.5) / P
    bmax = float(np.max(np.abs(profile.b_array(rs))))
    dt = 0.04 / max(bmax * m_mode, 1e-9)
    if profile.singular_origin:
        dt = min(dt, 0.09 / (m_mode * float(profile.b_array(np.array([rs[0]]))[0])))
    t_end = t_end_mult * T
    f0 = pde.DiskField.single_mode(m_mode, P, m_mode, init)
    _, curve = pde.evolve_disk(profile, nu, f0, t_end, dt,
                               curve_samples=600,
                               stop_below=min(window) * math.exp(-1.0))
    rate = ratefit.fit_decay_rate(curve, window)
    return RatePoint(nu=nu, rate=rate, t_end=float(curve.times[-1]), grid=P, dt=dt)


def rate_sweep(profile: ShearProfile, nus, k_mode=1, t_end_mult=30.0,
               window=ratefit.DEFAULT_WINDOW, threads=1, init=None) -> RateSweep:
    """Measured decay rate per nu and the fitted scaling exponent.

    Torus profiles evolve a single k mode; disk profiles an m mode with a
    radial envelope (default r^2 (1 - r), or a Gaussian ring for singular
    profiles).
    """
    if profile.kind == "torus":
        job = lambda nu: _torus_rate_point(profile, nu, k_mode, t_end_mult, window)
    else:
        if init is None:
            if profile.singular_origin:
                init = lambda r: np.exp(-((r - 0.5) / 0.08) ** 2)
            else:
                init = lambda r: r ** 2 * (1.0 - r)
        job = lambda nu: _disk_rate_point(profile, nu, k_mode, t_end_mult, window, init)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            points = list(ex.map(job, nus))
    else:
        points = [job(nu) for nu in nus]
    fit = ratefit.fit_scaling_exponent([p.nu for p in points],
                                       [p.rate for p in points])
    pred = ratefit.predicted_exponent(profile)
    return RateSweep(profile_config=profile.config_dict(), points=points,
                     fit=fit, gamma_pred=pred.gamma, log_power=pred.log_power)


@dataclass
class LocalRateRun:
    nu: float
    grid: np.ndarray
    fitted: np.ndarray
    table: timescales.TimescaleTable

    def fitted_at(self, y) -> float:
        i = int(np.argmin(np.abs(self.grid - y)))
        return float(self.fitted[i])


def local_rates_run(profile, nu, k_mode=1, t_end_mult=40.0,
                    window=(math.exp(-1.0), math.exp(-4.0))) -> LocalRateRun:
    """Per-streamline decay rates fitted from the sup norm along each y.

    The windows are shallower than the global fit: slow streamlines only
    decay a few e-foldings within the run.
    """
    diff = minimal_differential(profile)
    T = timescales.global_timescale(diff, nu)
    M = torus_grid_size(profile, nu)
    bmax = float(np.max(np.abs(profile.b_array(np.arange(M) / M))))
    dt = 0.04 / max(bmax * k_mode, 1e-9)
    f0 = pde.TorusField.single_mode(k_mode, M, k_mode, lambda y: np.ones_like(y))
    _, curve = pde.evolve_torus(profile, nu, f0, t_end_mult * T, dt,
                                curve_samples=500, record_per_y=True)
    ys = np.arange(M) / M
    fitted = np.full(M, math.nan)
    for j in range(M):
        try:
            fitted[j] = ratefit.fit_decay_rate(
                ratefit.DecayCurve(curve.times, curve.linf_y[:, j], kind="linf_y"),
                window)
        except Exception:
            continue
    table = timescales.build_table(profile, nu, ys)
    return LocalRateRun(nu=nu, grid=ys, fitted=fitted, table=table)


@dataclass
class CouplingSummary:
    nu: float
    fraction: float
    cost_p95: float
    cost_max: float
    median_time_over_tloc: float
    n_trials: int
    t_local: float


def coupling_sweep(profile, nus, y0, rho0, n_trials, seed, band_mult=2.0,
                   delta=0.05, radial=False, reflect=False,
                   t_cap_mult=8.0) -> list[CouplingSummary]:
    """Coupling fraction and cost statistics per nu with a common geometry."""
    out = []
    for nu in nus:
        seeds = [seed + 1000003 * i for i in range(n_trials)]
        if radial or profile.kind != "torus":
            batch = cpl.couple_radial_batch(profile, nu, y0, 0.0, rho0, seeds,
                                            delta=delta, reflect=reflect,
                                            band_mult=band_mult,
                                            t_cap_mult=t_cap_mult)
        else:
            batch = cpl.couple_torus_batch(profile, nu, 0.0, rho0, y0, seeds,
                                           band_mult=band_mult,
                                           t_cap_mult=t_cap_mult)
        costs = batch.costs[[o.coupled for o in batch.outcomes]]
        times = batch.coupled_times()
        out.append(CouplingSummary(
            nu=nu, fraction=batch.fraction,
            cost_p95=float(np.percentile(costs, 95)) if costs.size else math.nan,
            cost_max=float(costs.max()) if costs.size else math.nan,
            median_time_over_tloc=float(np.median(times) / batch.t_local)
            if times.size else math.nan,
            n_trials=n_trials, t_local=batch.t_local))
    return out


def tv_exact_suite(seed=0) -> dict:
    """The exact finite-space TV checks: fiber equality, contraction,
    maximal-coupling diagonal mass."""
    rng = np.random.default_rng(seed)
    worst_fiber = 0.0
    for _ in range(200):
        ybar = rng.dirichlet(np.ones(7))
        mu1 = rng.dirichlet(np.ones(5), size=7).T * ybar
        mu2 = rng.dirichlet(np.ones(5), size=7).T * ybar
        lhs, rhs = measures.fiber_tv(mu1, mu2)
        worst_fiber = max(worst_fiber, abs(lhs - rhs))
    contraction_ok = 0
    for _ in range(200):
        k = rng.random((16, 16))
        k /= k.sum(axis=1, keepdims=True)
        ybar = rng.dirichlet(np.ones(4))
        mu1 = rng.dirichlet(np.ones(4), size=4).T * ybar
        mu2 = rng.dirichlet(np.ones(4), size=4).T * ybar
        rep = measures.marginal_contraction_check(k, mu1, mu2)
        contraction_ok += int(rep.satisfied)
    worst_diag = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 9))
        p = rng.dirichlet(np.ones(n))
        q = rng.dirichlet(np.ones(n))
        gamma = measures.maximal_coupling(p, q)
        off = gamma.sum() - np.trace(gamma)
        worst_diag = max(worst_diag, abs(off - measures.tv_discrete(p, q)))
    return {"worst_fiber_gap": worst_fiber, "contraction_pass": contraction_ok,
            "contraction_total": 200, "worst_diagonal_gap": worst_diag}


def girsanov_toy_sweep() -> list[dict]:
    """Gaussian toy: analytic TV against the certificate over a grid."""
    from scipy.stats import norm
    rows = []
    nu = 0.5
    for dx in (0.05, 0.1, 0.25, 0.5, 1.0):
        for T in (0.5, 2.0):
            sig = math.sqrt(2 * nu * T)
            tv = 2 * norm.cdf(abs(dx) / (2 * sig)) - 1
            cost = dx * dx / (2 * nu * T)
            cert = cpl.girsanov_certificate(1.0, cost)
            rows.append({"dx": dx, "T": T, "tv": tv, "certificate": cert,
                         "ok": bool(tv <= cert + 1e-12)})
    return rows
