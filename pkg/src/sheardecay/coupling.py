"""Shared-noise coupling of two trajectories on one streamline.

The reference pair starts at the same y (torus) or r (radial) with different
x (resp. theta).  A drift control on the cross-streamline noise first opens a
gap between the y components (introducing a velocity differential between the
two x equations), then closes it along the manifold gap = scale * sqrt(rho)
so the horizontal separation rho reaches zero exactly when the gap does.
The control is gated to a diffusive band around the starting streamline;
trials whose reference path leaves the band abort.

Conventions: s = iota(y0) is the step direction, sigma_b the sign of the
velocity differential along it, p = sigma_b * rho >= 0 the separation in
units where the shear shrinks it, g >= 0 the cross-streamline gap along s.
Everything is expressed on the covering space; coupling means both p and g
below their thresholds, after which the states are merged exactly.

The gating band is centered (1 + band_mult) ell from the start with
half-width band_mult * ell (band_mult = 1 reproduces the construction used
in the correctness analysis; the default 2 widens it, which only improves
the success probability and keeps every bound nu-uniform).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParams, ResolutionError
from .profiles import ShearProfile
from .sde import CHANNEL_B, CHANNEL_DRIVER, CHANNEL_W, path_stream
from .timescales import flat_freeze_radius, local_timescale

# phases of one trial
WAITING, GROW, SHRINK, FIXUP, WINDDOWN, COUPLED, ABORTED = range(7)

_P_THRESH_FRAC = 1e-3
_G_THRESH_FRAC = 1e-3


def girsanov_certificate(alpha: float, cost_bound: float) -> float:
    """Total-variation upper bound 1 - alpha^2 exp(-2 C)/4 from a control of
    cost at most C merging trajectories on an event of probability alpha."""
    if not (0.0 < alpha <= 1.0):
        raise InvalidParams("alpha must be in (0, 1]")
    if cost_bound < 0.0:
        raise InvalidParams("cost bound must be nonnegative")
    return 1.0 - 0.25 * alpha * alpha * math.exp(-2.0 * cost_bound)


@dataclass
class CoupleOutcome:
    coupled: bool
    t_couple: float | None
    cost: float
    tau0: float | None
    tau1: float | None
    tau2: float | None
    tau3: float | None
    p0: float
    case: int
    exit_reason: str
    seed: int
    x_end: float | None = None
    xt_end: float | None = None


@dataclass
class CoupleBatch:
    outcomes: list[CoupleOutcome]
    nu: float
    t_local: float

    @property
    def fraction(self) -> float:
        n = len(self.outcomes)
        return sum(o.coupled for o in self.outcomes) / n if n else 0.0

    @property
    def costs(self) -> np.ndarray:
        return np.array([o.cost for o in self.outcomes])

    def coupled_times(self) -> np.ndarray:
        return np.array([o.t_couple for o in self.outcomes if o.coupled])

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("seed,coupled,couple_time,cost,tau0,tau1,tau2,flags\n")
            for o in self.outcomes:
                fh.write(f"{o.seed},{int(o.coupled)},{o.t_couple or ''},{o.cost!r},"
                         f"{o.tau0 or ''},{o.tau1 or ''},{o.tau2 or ''},"
                         f"case{o.case}:{o.exit_reason}\n")


def _setup(profile, nu, y0):
    """Common geometry: direction, differential sign, scales, case."""
    t_loc = local_timescale(profile, nu, y0)
    ell = math.sqrt(nu * t_loc)
    s = profile.iota(y0)
    freeze = flat_freeze_radius(profile)
    case = 2 if any(profile._dist(y0, y1) <= freeze for y1 in profile.flat_points()) \
        else 1
    x0 = _wrap(profile, y0)
    sigma = 0.0
    for mult in (4.0, 8.0, 16.0):
        d = float(np.asarray(profile._b(_wrap(profile, y0 + s * mult * ell)))
                  - np.asarray(profile._b(x0)))
        if d != 0.0:
            sigma = math.copysign(1.0, d)
            break
    if sigma == 0.0:
        raise ResolutionError(f"velocity differential underflows at {y0}")
    return t_loc, ell, s, sigma, case


def _geometry_guard(profile, y0, s, ell, band_mult, gap_slack):
    """The band plus the maximal gap must fit the monotone corridor from y0,
    which is the regime the construction needs; at too-large nu this fails
    and the caller should lower nu or band_mult."""
    corridor = profile._corridor(_wrap(profile, y0), s)
    reach = (1.0 + 2.0 * band_mult + gap_slack) * ell
    if reach > 0.98 * corridor:
        raise ResolutionError(
            f"coupling band reach {reach:.3g} exceeds the monotone corridor "
            f"{corridor:.3g} at {y0}; reduce nu or band_mult")


def _wrap(profile, y):
    return y % 1.0 if profile.kind == "torus" else y


def _differential(profile, y, s, g, sigma):
    """sigma-signed velocity differential, clamped nonnegative."""
    vals = sigma * (np.asarray(profile._b(_wrap(profile, y + s * g)), dtype=float)
                    - np.asarray(profile._b(_wrap(profile, y)), dtype=float))
    return np.maximum(vals, 0.0)


def couple_torus_batch(profile, nu, x0, xt0, y0, seeds, dt=None,
                       band_mult=2.0, t_cap_mult=8.0,
                       track_endpoints=False, trace=False) -> CoupleBatch:
    """Run the torus coupling control for a batch of seeds.

    All trials share (profile, nu, x0, xt0, y0); each seed drives its own
    noise stream.  dt defaults to t_local/2000.  With track_endpoints the
    uncontrolled x and controlled x endpoints at the time cap are recorded
    (they need the x noise channel; the outcome itself does not).
    """
    if profile.kind != "torus":
        raise ValueError("couple_torus needs a torus profile")
    t_loc, ell, s, sigma, case = _setup(profile, nu, y0)
    if dt is None:
        dt = t_loc / 2000.0
    n = len(seeds)
    t_cap = t_cap_mult * t_loc
    n_steps = int(math.ceil(t_cap / dt))

    # case-dependent scales: the flat case uses an O(1) control speed and a
    # sqrt(nu)-scaled gap manifold
    if case == 1:
        grow_rate = math.sqrt(2.0 * nu) / math.sqrt(t_loc)   # dg/dt in step 1
        v1_sq = 1.0 / t_loc                                   # |V|^2 in step 1
        gap_scale = ell                                       # g* = gap_scale sqrt(p)
    else:
        grow_rate = math.sqrt(2.0 * nu)
        v1_sq = 1.0
        gap_scale = math.sqrt(nu)

    # the two trajectories are exchangeable: control whichever label gives
    # the shorter separation along the differential's direction
    p0 = (sigma * (xt0 - x0)) % 1.0
    swapped = p0 > 0.5
    if swapped:
        p0 = 1.0 - p0
    slack = 0.1 if case == 2 else math.sqrt(max(p0, 1e-12))
    _geometry_guard(profile, y0, s, ell, band_mult, slack)
    thp = _P_THRESH_FRAC * min(1.0, p0 if p0 > 0 else 1.0)
    thg = _G_THRESH_FRAC * ell
    center = y0 + s * (1.0 + band_mult) * ell
    halfw = band_mult * ell
    root = math.sqrt(2.0 * nu * dt)

    if p0 == 0.0:
        outs = [CoupleOutcome(True, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, case,
                              "identical", sd) for sd in seeds]
        return CoupleBatch(outs, nu, t_loc)

    phase = np.full(n, WAITING, dtype=np.int8)
    y = np.full(n, float(y0))
    p = np.full(n, p0)
    g = np.zeros(n)
    cost = np.zeros(n)
    tau0 = np.full(n, np.nan)
    tau1 = np.full(n, np.nan)
    tcpl = np.full(n, np.nan)
    ref0 = float(xt0 if swapped else x0)  # reference = uncontrolled label
    x = np.full(n, ref0) if track_endpoints else None

    gens_b = [path_stream(sd, 0, CHANNEL_B) for sd in seeds]
    gens_w = [path_stream(sd, 0, CHANNEL_W) for sd in seeds] if track_endpoints else None
    trace_log = [] if trace else None

    block = max(1, min(n_steps, int(8_000_000 // max(n, 1))))
    step = 0
    while step < n_steps:
        nb = min(block, n_steps - step)
        xib = np.stack([gq.standard_normal(nb) for gq in gens_b])
        xiw = np.stack([gq.standard_normal(nb) for gq in gens_w]) if track_endpoints else None
        for j in range(nb):
            t = (step + 1) * dt
            active = phase < COUPLED
            if not np.any(active):
                step = n_steps
                break
            if track_endpoints:
                x = x - np.asarray(profile._b(_wrap(profile, y))) * dt \
                    + root * xiw[:, j]

            waiting = phase == WAITING
            grow = phase == GROW
            shrink = phase == SHRINK
            wind = phase == WINDDOWN
            controlled = grow | shrink | wind

            if np.any(controlled):
                d_now = _differential(profile, y[controlled], s, g[controlled], sigma)
                dg = np.zeros(d_now.shape)
                vsq = np.zeros(d_now.shape)
                gsel = grow[controlled]
                ssel = shrink[controlled]
                wsel = wind[controlled]
                dg[gsel] = grow_rate * dt
                dg[wsel] = -grow_rate * dt
                vsq[gsel | wsel] = v1_sq
                if np.any(ssel):
                    # control evaluated at the pre-update state
                    psel = np.maximum(p[controlled][ssel], 1e-30)
                    rate = gap_scale * d_now[ssel] / (2.0 * np.sqrt(psel))
                    dg[ssel] = -rate * dt
                    vsq[ssel] = rate * rate / (2.0 * nu)
                p[controlled] = p[controlled] - d_now * dt
                g[controlled] = np.maximum(g[controlled] + dg, 0.0)
                cost[controlled] += vsq * dt

            # reference streamline diffuses freely in every phase
            y = y + root * xib[:, j]

            # transitions
            if np.any(waiting):
                hit = waiting & (s * (y - center) >= 0.0)
                phase[hit] = GROW
                tau0[hit] = t
                still = waiting & ~hit & (t >= t_cap - 0.5 * dt)
                phase[still] = ABORTED
            grow = phase == GROW
            if np.any(grow):
                reach = grow & (g >= gap_scale * np.sqrt(np.maximum(p, 0.0)))
                phase[reach] = SHRINK
                tau1[reach] = t
                lost = grow & (p <= thp)
                phase[lost] = WINDDOWN
            shrink = phase == SHRINK
            if np.any(shrink):
                bad = shrink & (p < -10.0 * thp)
                if np.any(bad):
                    raise ResolutionError(
                        "separation overshoots negative: dt too coarse")
                done = shrink & (np.abs(p) < thp) & (g < thg)
                phase[done] = COUPLED
                tcpl[done] = t
                p[done] = 0.0   # exact merge: identical forever after
                g[done] = 0.0
                lost = shrink & (p <= 0.0) & ~done
                phase[lost] = WINDDOWN
            wind = phase == WINDDOWN
            if np.any(wind):
                flat = wind & (g <= 0.0)
                ok = flat & (np.abs(p) < thp)
                phase[ok] = COUPLED
                tcpl[ok] = t
                p[ok] = 0.0
                phase[flat & ~ok] = ABORTED

            inband = np.abs(y - center) < halfw
            exited = (phase == GROW) | (phase == SHRINK) | (phase == WINDDOWN)
            exited &= ~inband
            phase[exited] = ABORTED

            if trace:
                trace_log.append((t, y.copy(), p.copy(), g.copy(), phase.copy()))
            step += 1
            if step >= n_steps:
                break

    still = phase < COUPLED
    phase[still] = ABORTED

    outs = []
    for i, sd in enumerate(seeds):
        coupled = phase[i] == COUPLED
        reason = "coupled" if coupled else (
            "no-window" if np.isnan(tau0[i]) else "band-exit-or-cap")
        outs.append(CoupleOutcome(
            coupled=bool(coupled),
            t_couple=float(tcpl[i]) if coupled else None,
            cost=float(cost[i]),
            tau0=None if np.isnan(tau0[i]) else float(tau0[i]),
            tau1=None if np.isnan(tau1[i]) else float(tau1[i]),
            tau2=float(tcpl[i]) if coupled else None,
            tau3=None,
            p0=p0, case=case, exit_reason=reason, seed=sd,
            x_end=None if x is None else float(x[i]),
            xt_end=None if x is None else float(x[i] + sigma * p[i]),
        ))
    batch = CoupleBatch(outs, nu, t_loc)
    if trace:
        batch.trace = trace_log
    return batch


def couple_torus(profile, nu, x0, xt0, y0, seed, dt=None, **kw) -> CoupleOutcome:
    """Single-pair torus coupling; see couple_torus_batch."""
    return couple_torus_batch(profile, nu, x0, xt0, y0, [seed], dt, **kw).outcomes[0]


def couple_radial_batch(profile, nu, r0, th0, tht0, seeds, dt=None, delta=0.05,
                        reflect=False, band_mult=2.0, t_cap_mult=8.0,
                        trace=False) -> CoupleBatch:
    """Radial coupling control for a batch of seeds.

    The radius is driven by a shared 2d Cartesian driver; its radial and
    tangential projections are the two noise channels.  The angular
    separation p carries multiplicative noise through the gap h, so the gap
    is first closed along an auxiliary noiseless copy eta of p, and the
    leftover |p| <= ell/r0 is removed by the angular control (the fixup
    stage).  On the disk (``reflect``) any trial whose reference radius
    reaches (1 + r0)/2 aborts, so the boundary reflection is never active
    during control.
    """
    if profile.kind == "torus":
        raise ValueError("couple_radial needs a radial profile")
    if not (0.0 < delta <= 1.0):
        raise InvalidParams("delta must be in (0, 1]")
    t_loc, ell, s, sigma, case = _setup(profile, nu, r0)
    if dt is None:
        dt = t_loc / 2000.0
    n = len(seeds)
    t_cap = t_cap_mult * t_loc
    n_steps = int(math.ceil(t_cap / dt))
    root = math.sqrt(2.0 * nu * dt)

    dth = (tht0 - th0 + math.pi) % (2.0 * math.pi) - math.pi
    if abs(dth) > math.pi + 1e-12:
        raise InvalidParams("|tht0 - th0| must be <= pi")
    p0 = (sigma * dth) % (2.0 * math.pi)
    if p0 > math.pi:   # exchangeable labels: take the shorter separation
        p0 = 2.0 * math.pi - p0
    _geometry_guard(profile, r0, s, ell, band_mult,
                    math.sqrt(min(max(p0, 1e-12), 2.0 * math.pi)))
    thp = _P_THRESH_FRAC * min(1.0, p0 if p0 > 0 else 1.0)
    thg = _G_THRESH_FRAC * ell
    center = r0 + s * (1.0 + band_mult) * ell
    halfw = band_mult * ell
    barrier = 0.5 * (1.0 + r0) if reflect else None
    grow_rate = math.sqrt(2.0 * nu) / (delta * math.sqrt(t_loc))
    step1_cap = math.sqrt(math.pi) * delta * t_loc
    p_gate = ell / r0

    if p0 == 0.0:
        outs = [CoupleOutcome(True, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, case,
                              "identical", sd) for sd in seeds]
        return CoupleBatch(outs, nu, t_loc)

    phase = np.full(n, WAITING, dtype=np.int8)
    zx = np.full(n, float(r0))
    zy = np.zeros(n)
    p = np.full(n, p0)
    g = np.zeros(n)        # h in the construction: iota * (r_tilde - r)
    eta = np.zeros(n)      # sigma-signed auxiliary separation
    cost = np.zeros(n)
    tau0 = np.full(n, np.nan)
    tau1 = np.full(n, np.nan)
    tau2 = np.full(n, np.nan)
    tcpl = np.full(n, np.nan)
    sgn3 = np.zeros(n)

    gens = [path_stream(sd, 0, CHANNEL_DRIVER) for sd in seeds]
    trace_log = [] if trace else None

    block = max(1, min(n_steps, int(4_000_000 // max(n, 1))))
    step = 0
    while step < n_steps:
        nb = min(block, n_steps - step)
        xi = np.stack([gq.standard_normal(2 * nb) for gq in gens])
        for j in range(nb):
            t = (step + 1) * dt
            if not np.any(phase < COUPLED):
                step = n_steps
                break
            r = np.hypot(zx, zy)
            ux, uy = zx / r, zy / r
            dbn = xi[:, 2 * j] * ux + xi[:, 2 * j + 1] * uy      # radial noise
            dwn = -xi[:, 2 * j] * uy + xi[:, 2 * j + 1] * ux     # tangential

            grow = phase == GROW
            shrink = phase == SHRINK
            fix = phase == FIXUP
            wind = phase == WINDDOWN
            controlled = grow | shrink | wind
            rt = r + s * g

            if np.any(controlled):
                csel = controlled
                d_now = _differential(profile, r[csel], s, g[csel], sigma)
                dg = np.zeros(d_now.shape)
                vsq = np.zeros(d_now.shape)
                gsel = grow[csel]
                ssel = shrink[csel]
                wsel = wind[csel]
                # drift-cancelling part of V: the -nu h/(r rt) relaxation
                cancel = math.sqrt(nu / 2.0) * g[csel] / (r[csel] * rt[csel])
                dg[gsel] = grow_rate * dt
                dg[wsel] = -grow_rate * dt
                vsq[gsel | wsel] = (cancel[gsel | wsel] + 1.0 / (delta * math.sqrt(t_loc))) ** 2
                if np.any(ssel):
                    # control evaluated at the pre-update state
                    esel = np.maximum(eta[csel][ssel], 1e-30)
                    rate = delta * ell * (d_now[ssel] / (delta * delta)) / (2.0 * np.sqrt(esel))
                    dg[ssel] = -rate * dt
                    vsq[ssel] = (cancel[ssel] + rate / math.sqrt(2.0 * nu)) ** 2
                # p: shear drift + multiplicative noise through the gap
                p[csel] = p[csel] - d_now * dt \
                    - sigma * root * (g[csel] / (r[csel] * rt[csel])) * dwn[csel]
                eta[csel] = eta[csel] - d_now * dt / (delta * delta)
                g[csel] = np.maximum(g[csel] + dg, 0.0)
                cost[csel] += vsq * dt

            if np.any(fix):
                # angular control removes the leftover separation
                dp = -sgn3[fix] * math.sqrt(2.0 * nu / t_loc) / rt[fix] * dt
                p[fix] = p[fix] + dp
                cost[fix] += dt / t_loc

            # driver advances (shared noise; the gap ODE already accounts for
            # the controlled copy's drift and control)
            zx = zx + root * xi[:, 2 * j]
            zy = zy + root * xi[:, 2 * j + 1]
            r_new = np.hypot(zx, zy)

            # transitions
            waiting = phase == WAITING
            if np.any(waiting):
                hit = waiting & (s * (r_new - center) >= 0.0)
                phase[hit] = GROW
                tau0[hit] = t
            grow = phase == GROW
            if np.any(grow):
                reach = grow & (g >= ell * np.sqrt(np.maximum(p, 0.0)))
                phase[reach] = SHRINK
                tau1[reach] = t
                eta[reach] = np.maximum(p[reach], 0.0) / (delta * delta)
                timed_out = grow & ~reach & ~np.isnan(tau0) & (t - tau0 > step1_cap)
                phase[timed_out] = WINDDOWN
            shrink = phase == SHRINK
            if np.any(shrink):
                done = shrink & (eta <= thp / (delta * delta)) & (g < thg)
                lost = shrink & (eta <= 0.0) & ~done
                move = done | lost
                if np.any(move):
                    tau2[move] = t
                    gate = move & (np.abs(p) <= p_gate)
                    phase[gate] = FIXUP
                    sgn3[gate] = np.sign(p[gate])
                    phase[move & ~gate] = ABORTED
            fix = phase == FIXUP
            if np.any(fix):
                crossed = fix & (sgn3 * p <= 0.0)
                ok = crossed & (np.abs(p) < 10 * thp)
                phase[ok] = COUPLED
                tcpl[ok] = t
                p[ok] = 0.0     # exact merge
                g[ok] = 0.0
                phase[crossed & ~ok] = ABORTED
            wind = phase == WINDDOWN
            if np.any(wind):
                flat = wind & (g <= 0.0)
                if np.any(flat):
                    tau2[flat] = t
                    gate = flat & (np.abs(p) <= p_gate)
                    phase[gate] = FIXUP
                    sgn3[gate] = np.sign(p[gate])
                    phase[flat & ~gate] = ABORTED

            # gating band and disk barrier
            inband = np.abs(r_new - center) < halfw
            ctl = (phase == GROW) | (phase == SHRINK) | (phase == WINDDOWN) \
                | (phase == FIXUP)
            phase[ctl & ~inband] = ABORTED
            if reflect and barrier is not None:
                phase[(phase < COUPLED) & (r_new >= barrier)] = ABORTED

            if trace:
                trace_log.append((t, r_new.copy(), p.copy(), g.copy(), phase.copy()))
            step += 1
            if step >= n_steps:
                break

    phase[phase < COUPLED] = ABORTED
    outs = []
    for i, sd in enumerate(seeds):
        coupled = phase[i] == COUPLED
        reason = "coupled" if coupled else (
            "no-window" if np.isnan(tau0[i]) else "band-exit-or-cap")
        outs.append(CoupleOutcome(
            coupled=bool(coupled),
            t_couple=float(tcpl[i]) if coupled else None,
            cost=float(cost[i]),
            tau0=None if np.isnan(tau0[i]) else float(tau0[i]),
            tau1=None if np.isnan(tau1[i]) else float(tau1[i]),
            tau2=None if np.isnan(tau2[i]) else float(tau2[i]),
            tau3=float(tcpl[i]) if coupled else None,
            p0=p0, case=case, exit_reason=reason, seed=sd))
    batch = CoupleBatch(outs, nu, t_loc)
    if trace:
        batch.trace = trace_log
    return batch


def couple_radial(profile, nu, r0, th0, tht0, seed, dt=None, delta=0.05,
                  **kw) -> CoupleOutcome:
    """Single-pair radial coupling; see couple_radial_batch."""
    return couple_radial_batch(profile, nu, r0, th0, tht0, [seed], dt, delta,
                               **kw).outcomes[0]
