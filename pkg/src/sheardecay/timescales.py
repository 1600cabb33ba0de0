"""Dissipation timescales and local rate maps.

The global timescale solves ``t * phi(sqrt(nu t)) = 1`` for the profile's
minimal velocity differential phi; the local timescale solves the analogous
equation with the directed differential at a single streamline.  All roots
are found by bracketing bisection (phi may be merely continuous).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BracketFailure, NoEnhancement, StepExitsDomain, UnsupportedProfile
from .profiles import RADIAL_DISK, TORUS, ShearProfile, VelocityDifferential, minimal_differential

_REL_TOL = 1e-12
_MAX_DOUBLINGS = 260


@dataclass
class TimescaleTable:
    """Per-location timescales and rates at one diffusivity."""

    nu: float
    grid: np.ndarray
    t_local: np.ndarray
    ell_local: np.ndarray
    rate_bar: np.ndarray
    rate_mod: np.ndarray
    T_global: float
    lambda_min: float

    def to_csv(self, path) -> None:
        """CSV with columns location,t_local,ell_local,rate_bar,rate_mod.

        The header comment line carries nu, T_global, lambda_min.
        """
        with open(path, "w") as fh:
            fh.write(f"# nu={self.nu!r},T_global={self.T_global!r},"
                     f"lambda_min={self.lambda_min!r}\n")
            fh.write("location,t_local,ell_local,rate_bar,rate_mod\n")
            for i in range(len(self.grid)):
                fh.write(f"{self.grid[i]!r},{self.t_local[i]!r},{self.ell_local[i]!r},"
                         f"{self.rate_bar[i]!r},{self.rate_mod[i]!r}\n")


def _bisect_increasing(f, description: str) -> float:
    """Smallest root of an increasing f with f(0) < 0, by doubling then bisection."""
    lo, hi = 0.0, 1.0
    f_hi = f(hi)
    n = 0
    while f_hi < 0.0:
        lo, hi = hi, 2.0 * hi
        f_hi = f(hi)
        n += 1
        if n > _MAX_DOUBLINGS:
            raise BracketFailure(f"no sign change while bracketing {description}")
    while (hi - lo) > _REL_TOL * hi:
        mid = 0.5 * (lo + hi)
        if f(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def global_timescale(diff: VelocityDifferential, nu: float) -> float:
    """Root of t * phi(sqrt(nu t)) = 1.

    Unique because the left side is strictly increasing in t.  Raises
    ``NoEnhancement`` for a degenerate phi and ``BracketFailure`` when phi is
    bounded and the product never reaches 1.
    """
    if nu <= 0.0:
        raise ValueError("nu must be positive")
    probe = diff.phi(diff.h0)
    if probe <= 0.0:
        raise NoEnhancement("phi vanishes at h0")

    def f(t):
        return t * diff.phi(math.sqrt(nu * t)) - 1.0

    return _bisect_increasing(f, "global timescale")


def flat_freeze_radius(profile: ShearProfile) -> float:
    """Freezing radius around infinite-order critical points.

    min(h0/4, half distance to the nearest other distinguished point); the
    local timescale is constant on this window.
    """
    flats = profile.flat_points()
    if not flats:
        return 0.0
    radius = profile.h0 / 4.0
    pts = profile.distinguished()
    for y1 in flats:
        others = [p for p in pts if profile._dist(p, y1) > 1e-13]
        if others:
            dmin = min(profile._dist(p, y1) for p in others)
            radius = min(radius, 0.5 * dmin)
    return radius


def _local_root(profile: ShearProfile, nu: float, y: float, sign: int,
                saturate: bool = False) -> float:
    """Root of t * |b(y + sign*sqrt(nu t)) - b(y)| = 1 along one direction.

    Raises ``StepExitsDomain`` if the step leaves the domain before the root,
    and ``BracketFailure`` if the root would step past the monotone corridor.
    With ``saturate`` the differential is frozen at its corridor maximum
    instead (the shear available to this streamline saturates there).
    """
    x = y % 1.0 if profile.kind == TORUS else y
    corridor = profile._corridor(x, sign)
    if corridor <= 1e-12:
        raise BracketFailure(f"empty corridor at {y} in direction {sign}")
    if profile.kind == TORUS:
        edge = math.inf
    else:
        lo_dom, hi_dom = profile.domain
        edge = (hi_dom - x) if sign > 0 else (x - lo_dom)

    def f(t):
        h = math.sqrt(nu * t)
        if h > corridor + 1e-12:
            if not saturate:
                if edge <= corridor + 1e-12:
                    raise StepExitsDomain(
                        f"step from {y} exits the domain at h={h:.3g}")
                raise BracketFailure(
                    f"timescale root at {y} needs h={h:.3g} beyond corridor {corridor:.3g}")
            h = corridor * (1.0 - 1e-12)
        return t * profile.differential(y, sign, h) - 1.0

    return _bisect_increasing(f, f"local timescale at {y}")


def local_timescale(profile: ShearProfile, nu: float, location: float) -> float:
    """Local dissipation timescale t_nu at one streamline.

    Within the freezing radius of an infinite-order flat point the value is
    frozen at the flat point itself.  When both step directions are valid the
    smaller root is returned.  Radial-disk locations fall back to the
    opposite direction if the preferred step exits the domain.

    At moderate nu the root in the preferred direction can require stepping
    past the monotone corridor (weak-shear zones near a flat point).  The
    fallbacks, in order: a root within the opposite direction's own corridor,
    then the root with the differential saturated at the corridor end.
    """
    if nu <= 0.0:
        raise ValueError("nu must be positive")
    y = location % 1.0 if profile.kind == TORUS else location
    radius = flat_freeze_radius(profile)
    if radius > 0.0:
        for y1 in profile.flat_points():
            if profile._dist(y, y1) <= radius:
                y = y1
                break
    roots = []
    errors = []
    strict = profile.iota_candidates(y)
    for sign in strict:
        try:
            roots.append(_local_root(profile, nu, y, sign))
        except (StepExitsDomain, BracketFailure) as exc:
            errors.append(exc)
    if roots:
        return min(roots)
    for sign in (s for s in (+1, -1) if s not in strict):
        try:
            roots.append(_local_root(profile, nu, y, sign))
        except (StepExitsDomain, BracketFailure):
            pass
    if roots:
        return min(roots)
    for sign in (+1, -1):
        try:
            roots.append(_local_root(profile, nu, y, sign, saturate=True))
        except (StepExitsDomain, BracketFailure):
            pass
    if roots:
        return min(roots)
    if errors and all(isinstance(e, StepExitsDomain) for e in errors):
        raise errors[0]
    raise errors[0] if errors else NoEnhancement(f"no valid direction at {y}")


def critical_rate(nu: float, order: int) -> float:
    """Decay rate nu^((k+1)/(k+3)) attached to an order-k critical point."""
    return nu ** ((order + 1.0) / (order + 3.0))


def critical_length(nu: float, order: int) -> float:
    """Diffusive half-width sqrt(nu / rate) = nu^(1/(k+3)) of the critical layer."""
    return math.sqrt(nu / critical_rate(nu, order))


def rate_bar(profile: ShearProfile, nu: float, y: float) -> float:
    """Piecewise local rate: the critical-point rate inside each critical
    layer, nu^(1/3)|b'(y)|^(2/3) elsewhere, with the registered-singularity
    improvement near points where b' blows up."""
    x = y % 1.0 if profile.kind == TORUS else y
    for c in profile.critical_points:
        if math.isinf(c.order):
            raise UnsupportedProfile(
                "local rate map undefined for infinite-order critical points")
        if profile._dist(x, c.location) < critical_length(nu, int(c.order)):
            return critical_rate(nu, int(c.order))
    for s in profile.singular_points:
        d = profile._dist(x, s.location)
        if d <= profile.h0:
            inner = nu ** (1.0 / (s.alpha + 2.0))
            if d <= inner:
                return nu ** (s.alpha / (s.alpha + 2.0))
            return nu ** (1.0 / 3.0) * d ** (2.0 * (s.alpha - 1.0) / 3.0)
    return nu ** (1.0 / 3.0) * abs(profile.eval(x, 1)) ** (2.0 / 3.0)


def rate_mod(profile: ShearProfile, nu: float, bar: float) -> float:
    """Modified local rate: bar/(1 + |log nu|^(4N)) + nu^((N+1)/(N+3))."""
    n = profile.max_order()
    lam_min = critical_rate(nu, n)
    return bar / (1.0 + abs(math.log(nu)) ** (4.0 * n)) + lam_min


def local_rate_map(profile: ShearProfile, nu: float, grid) -> TimescaleTable:
    """TimescaleTable over a grid of locations.

    Raises ``UnsupportedProfile`` for profiles with an infinite-order flat
    point, where the piecewise rate is undefined; ``build_table`` still
    reports their t_nu with NaN rates.
    """
    if profile.flat_points():
        raise UnsupportedProfile(
            "flat critical points have no piecewise local rate; use build_table")
    return build_table(profile, nu, grid)


def build_table(profile: ShearProfile, nu: float, grid) -> TimescaleTable:
    """Assemble per-location timescales; rates are NaN where undefined."""
    grid = np.sort(np.asarray(grid, dtype=float))
    t_loc = np.array([local_timescale(profile, nu, y) for y in grid])
    ell = np.sqrt(nu * t_loc)
    flat = bool(profile.flat_points())
    bars = np.full(grid.shape, math.nan)
    mods = np.full(grid.shape, math.nan)
    if not flat:
        bars = np.array([rate_bar(profile, nu, y) for y in grid])
        mods = np.array([rate_mod(profile, nu, b) for b in bars])
    diff = minimal_differential(profile)
    T = global_timescale(diff, nu)
    lam_min = math.nan if flat else critical_rate(nu, profile.max_order())
    return TimescaleTable(nu=nu, grid=grid, t_local=t_loc, ell_local=ell,
                          rate_bar=bars, rate_mod=mods, T_global=T,
                          lambda_min=lam_min)


@dataclass
class SandwichReport:
    """Smallest constants making each two-sided timescale bound hold on a grid.

    All constants should be finite and stable (within a factor ~2) as nu
    decreases for profiles in the registered families; pass thresholds are
    left to the caller.
    """

    nu: float
    c_bprime_ratio: float
    c_tnu: float
    c_interval: float
    c_weight: float
    c_flat: float

    def as_dict(self) -> dict:
        return {
            "nu": self.nu,
            "c_bprime_ratio": self.c_bprime_ratio,
            "c_tnu": self.c_tnu,
            "c_interval": self.c_interval,
            "c_weight": self.c_weight,
            "c_flat": self.c_flat,
        }


def _safe_db(profile, x):
    try:
        return abs(profile.eval(x, 1))
    except Exception:
        return math.nan


def check_sandwich_bounds(profile: ShearProfile, nu: float, grid) -> SandwichReport:
    """Evaluate the two-sided bound constants over a grid.

    Reported constants:

    - c_bprime_ratio: worst ratio of |b'| over the window y + iota*ell*[1/2, h_max]
      relative to its value at y + iota*ell (h_max = 4 on the torus, 6 radial)
    - c_tnu: worst of t_nu * ell * |b'(y + iota ell)| and its reciprocal
    - c_interval: sup over I(y) of t_nu relative to t_nu(y), where I(y) is the
      log-squared diffusive interval, skipping critical windows
    - c_weight: worst two-sided ratio of the piecewise rate against
      nu^(1/3)|y - y_i|^(2 k_i / 3) in the annulus around critical points
    - c_flat: smallest constant in 1/(sqrt(nu)|b'(y + iota*C*ell)|) <= c * t_nu
      over flat windows (NaN when the profile has none)
    """
    if profile.family == "custom-table":
        raise UnsupportedProfile("sandwich checks need a closed-form profile")
    grid = np.sort(np.asarray(grid, dtype=float))
    h_max = 6.0 if profile.kind != TORUS else 4.0
    freeze = flat_freeze_radius(profile)
    flats = profile.flat_points()
    log2 = abs(math.log(nu)) ** 2

    c_ratio = 1.0
    c_tnu = 1.0
    c_int = 1.0
    c_weight = 1.0
    c_flat = math.nan if not flats else 0.0

    t_cache = {}

    def tnu(y):
        if y not in t_cache:
            t_cache[y] = local_timescale(profile, nu, y)
        return t_cache[y]

    for y in grid:
        in_flat = any(profile._dist(y, y1) <= freeze for y1 in flats)
        sign = profile.iota(y)
        t = tnu(y)
        ell = math.sqrt(nu * t)
        if not in_flat:
            db_ref = _safe_db(profile, y + sign * ell)
            if db_ref and np.isfinite(db_ref):
                hs = np.linspace(0.5, h_max, 24)
                vals = np.array([_safe_db(profile, y + sign * ell * h) for h in hs])
                vals = vals[np.isfinite(vals) & (vals > 0)]
                if vals.size:
                    c_ratio = max(c_ratio, float(np.max(vals)) / db_ref,
                                  db_ref / float(np.min(vals)))
                prod = t * ell * db_ref
                if prod > 0:
                    c_tnu = max(c_tnu, prod, 1.0 / prod)
        else:
            # flat window: 1/(sqrt(nu) |b'(y + iota*C*ell)|) <= c_flat * t_nu
            db_c = _safe_db(profile, y + sign * 2.0 * ell)
            if db_c and np.isfinite(db_c):
                c_flat = max(c_flat, 1.0 / (math.sqrt(nu) * db_c * t))

        # interval constant (skip log-squared windows around critical points)
        crit_window = any(
            profile._dist(y, c.location) <= log2 * math.sqrt(nu * tnu(c.location))
            for c in profile.critical_points if not math.isinf(c.order))
        if not crit_window and not in_flat:
            width = log2 * ell
            for yp in (y - width, y + width, y - 0.5 * width, y + 0.5 * width):
                lo, hi = profile.domain
                if profile.kind != TORUS and not (lo < yp < hi):
                    continue
                try:
                    c_int = max(c_int, tnu(float(yp)) / t)
                except Exception:
                    continue

        # weight equivalence in the annulus ell_{nu,i} <= |y - y_i| <= h0
        if not in_flat and not flats:
            for c in profile.critical_points:
                k = int(c.order)
                d = profile._dist(y, c.location)
                if critical_length(nu, k) <= d <= profile.h0:
                    pred = nu ** (1.0 / 3.0) * d ** (2.0 * k / 3.0)
                    bar = rate_bar(profile, nu, y)
                    if pred > 0 and bar > 0:
                        c_weight = max(c_weight, bar / pred, pred / bar)
    return SandwichReport(nu=nu, c_bprime_ratio=c_ratio, c_tnu=c_tnu,
                          c_interval=c_int, c_weight=c_weight, c_flat=c_flat)
