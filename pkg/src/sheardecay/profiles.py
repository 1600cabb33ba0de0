"""Shear profile families with exact derivative oracles.

A profile is the angular/horizontal speed ``b`` of a shear flow: ``b(y)`` on
the unit torus (velocity ``b(y) e_x``) or ``b(r)`` on a radial domain
(velocity ``r b(r) e_theta``).  Each registered family carries closed-form
first and second derivatives, a registry of distinguished points (critical
points where ``b'`` vanishes, and singular points where ``b'`` jumps or blows
up), and the minimal velocity differential ``(h0, phi, iota)`` used by the
timescale computations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import (
    DegenerateProfile,
    InvalidParams,
    SingularDerivative,
    UnsupportedFamily,
)

TORUS = "torus"
RADIAL_PLANE = "radial-plane"
RADIAL_DISK = "radial-disk"

TWO_PI = 2.0 * math.pi

# Sampling used once per profile to calibrate the envelope constant of phi.
_ENVELOPE_Y_SAMPLES = 400
_ENVELOPE_H_SAMPLES = 80


@dataclass(frozen=True)
class CriticalPoint:
    """Location where b' vanishes; order k means b', ..., b^(k) all vanish.

    ``order=math.inf`` marks an infinite-order (flat) critical point.
    """

    location: float
    order: float


@dataclass(frozen=True)
class SingularPoint:
    """Location where b is not smooth.

    ``alpha`` in (0, 1) means ``b(yb + h) - b(yb) ~ |h|^alpha log^beta(1/|h|)``
    (b' blows up); ``alpha = 1`` marks a kink with finite one-sided slopes.
    """

    location: float
    alpha: float
    beta: float = 0.0


def _circ_dist(a: float, b: float) -> float:
    d = abs(a - b) % 1.0
    return min(d, 1.0 - d)


class ShearProfile:
    """Analytic shear descriptor with exact derivatives and point registries.

    Immutable after construction; safe to share across workers.  Use
    :func:`make_profile` instead of the constructor.
    """

    def __init__(self, kind, family, params, b, db, d2b,
                 critical_points, singular_points, singular_origin=False):
        self.kind = kind
        self.family = family
        self.params = dict(params)
        self._b = b
        self._db = db
        self._d2b = d2b
        self.critical_points = tuple(sorted(critical_points, key=lambda c: c.location))
        self.singular_points = tuple(sorted(singular_points, key=lambda s: s.location))
        self.singular_origin = singular_origin
        self.domain = (0.0, math.inf) if kind == RADIAL_PLANE else (0.0, 1.0)
        self._distinguished = self._compute_distinguished()
        self.h0 = self._compute_h0()
        self._scale = self._compute_scale()

    # -- registries ---------------------------------------------------------

    def _compute_distinguished(self) -> list[float]:
        pts = [c.location for c in self.critical_points]
        pts += [s.location for s in self.singular_points]
        if self.kind != TORUS:
            pts.append(0.0)
            if self.kind == RADIAL_DISK:
                pts.append(1.0)
        return sorted(set(pts))

    def distinguished(self) -> list[float]:
        """Sorted locations of all critical and singular points.

        On radial domains the origin is always distinguished (Bessel point /
        possible singularity); on the disk the boundary r=1 is included so a
        valid step direction always exists.
        """
        return self._distinguished

    def flat_points(self) -> list[float]:
        return [c.location for c in self.critical_points if math.isinf(c.order)]

    def max_order(self) -> int:
        """Maximal finite vanishing order of b' over the critical registry.

        Profiles with no finite-order critical point return 0 (the monotone /
        singular-derivative case, minimal rate exponent 1/3).
        """
        orders = [int(c.order) for c in self.critical_points if not math.isinf(c.order)]
        return max(orders, default=0)

    def _compute_h0(self) -> float:
        pts = self.distinguished()
        if self.kind == TORUS:
            if len(pts) == 0:
                return 0.25
            if len(pts) == 1:
                return 0.5
            gaps = [pts[i + 1] - pts[i] for i in range(len(pts) - 1)]
            gaps.append(1.0 - pts[-1] + pts[0])
            return 0.5 * min(gaps)
        if len(pts) <= 1:
            return 0.5
        gaps = [pts[i + 1] - pts[i] for i in range(len(pts) - 1)]
        return 0.5 * min(gaps)

    def _compute_scale(self) -> float:
        lo, hi = self.domain
        hi = min(hi, lo + 4.0)
        xs = np.linspace(lo + 1e-9, hi - 1e-9, 512)
        vals = np.asarray(self._b(xs), dtype=float)
        finite = vals[np.isfinite(vals)]
        s = float(np.max(np.abs(finite))) if finite.size else 1.0
        return max(s, 1e-12)

    @property
    def scale(self) -> float:
        """Amplitude scale of b, used to normalize tolerances."""
        return self._scale

    # -- evaluation ---------------------------------------------------------

    def eval(self, location: float, deriv_order: int = 0) -> float:
        """Closed-form value of b, b', or b'' at ``location``.

        Raises ``SingularDerivative`` when a derivative is requested at a
        registered singular point, and ``InvalidParams`` outside the domain.
        """
        lo, hi = self.domain
        x = location % 1.0 if self.kind == TORUS else location
        if not (lo <= x <= hi):
            raise InvalidParams(f"location {location} outside domain {self.domain}")
        if deriv_order not in (0, 1, 2):
            raise InvalidParams("deriv_order must be 0, 1, or 2")
        if deriv_order >= 1:
            for s in self.singular_points:
                if self._dist(x, s.location) < 1e-13:
                    raise SingularDerivative(
                        f"derivative of order {deriv_order} at singular point {s.location}")
            if self.singular_origin and x < 1e-13:
                raise SingularDerivative("derivative at singular origin r=0")
        if deriv_order == 0:
            return float(self._b(x))
        if deriv_order == 1:
            return float(self._db(x))
        return float(self._d2b(x))

    def _dist(self, a: float, b: float) -> float:
        return _circ_dist(a, b) if self.kind == TORUS else abs(a - b)

    # -- step directions ----------------------------------------------------

    def iota_candidates(self, y: float) -> list[int]:
        """Valid step signs at y: directions whose h0-corridor is free of
        distinguished points and stays inside the domain.

        Ordered with the direction away from the nearest distinguished point
        first.  At least one direction is always valid by construction of h0.
        """
        pts = self.distinguished()
        x = y % 1.0 if self.kind == TORUS else y
        cands = []
        for s in (+1, -1):
            if self._corridor(x, s) >= self.h0 - 1e-12:
                cands.append(s)
        if not cands:
            # h0 guarantees this cannot happen for registered families
            raise DegenerateProfile(f"no valid step direction at {y}")
        if len(cands) == 2 and pts:
            nearest = min(pts, key=lambda p: self._dist(x, p))
            if self.kind == TORUS:
                d_plus = (nearest - x) % 1.0
                away = -1 if d_plus <= 0.5 else +1
                if self._dist(x, nearest) < 1e-13:
                    away = None
            else:
                away = -1 if nearest >= x else +1
                if abs(nearest - x) < 1e-13:
                    away = None
            if away == -1:
                cands = [-1, +1]
            elif away == +1:
                cands = [+1, -1]
        return cands

    def _corridor(self, x: float, sign: int) -> float:
        """Distance from x to the next distinguished point (or domain edge)
        in the given direction."""
        pts = self.distinguished()
        lo, hi = self.domain
        if self.kind == TORUS:
            if not pts:
                return 0.5
            if sign > 0:
                ds = [(p - x) % 1.0 for p in pts]
            else:
                ds = [(x - p) % 1.0 for p in pts]
            ds = [d if d > 1e-13 else 1.0 for d in ds]
            return min(ds)
        edge = (hi - x) if sign > 0 else (x - lo)
        ds = [sign * (p - x) for p in pts]
        ds = [d for d in ds if d > 1e-13]
        return min(ds + [edge]) if ds else edge

    def iota(self, y: float) -> int:
        """Preferred step sign at y.

        Away from the nearest distinguished point; when both directions are
        valid and equidistant, the one with the larger differential at h0.
        """
        cands = self.iota_candidates(y)
        if len(cands) == 1:
            return cands[0]
        x = y % 1.0 if self.kind == TORUS else y
        b0 = self._b(x)
        d_plus = abs(self._b(self._shift(x, +self.h0)) - b0)
        d_minus = abs(self._b(self._shift(x, -self.h0)) - b0)
        if cands[0] == +1:
            return +1 if d_plus >= d_minus else -1
        return -1 if d_minus >= d_plus else +1

    def _shift(self, x: float, h: float) -> float:
        return (x + h) % 1.0 if self.kind == TORUS else x + h

    def differential(self, y, sign, h):
        """|b(y + sign*h) - b(y)| for scalar or array h."""
        x = y % 1.0 if self.kind == TORUS else y
        b0 = float(self._b(x))
        h = np.asarray(h, dtype=float)
        xs = (x + sign * h) % 1.0 if self.kind == TORUS else x + sign * h
        vals = np.abs(np.asarray(self._b(xs), dtype=float) - b0)
        return vals if vals.ndim else float(vals)

    def b_array(self, xs: np.ndarray) -> np.ndarray:
        """Vectorized b over an array of locations (used by the solvers)."""
        return np.asarray(self._b(np.asarray(xs, dtype=float)), dtype=float)

    # -- serialization ------------------------------------------------------

    def config_dict(self) -> dict:
        d = {"family": self.family}
        d.update(self.params)
        if self.kind != TORUS:
            d["kind"] = self.kind
        return d


@dataclass
class VelocityDifferential:
    """Minimal velocity differential (h0, phi, iota) of a profile.

    phi is a monotone lower envelope of |b(y + iota(y) h) - b(y)| on [0, h0],
    with the family's closed-form shape and a numerically calibrated constant.
    The closed form extends monotonically beyond h0; the envelope property is
    only guaranteed on [0, h0].
    """

    h0: float
    shape: str          # "power" | "exp-flat" | "table"
    exponent: float     # power: phi = c h^exponent; exp-flat: c exp(-h^-p)
    c: float
    profile: ShearProfile = field(repr=False)

    def phi(self, h):
        h = np.asarray(h, dtype=float)
        if self.shape == "power":
            out = self.c * h ** self.exponent
        elif self.shape == "exp-flat":
            with np.errstate(divide="ignore", over="ignore"):
                out = np.where(h > 0.0, self.c * np.exp(-h ** -self.exponent), 0.0)
        else:
            out = self._table_eval(h)
        return out if out.ndim else float(out)

    def _table_eval(self, h):
        hs, vals = self.profile._phi_table  # type: ignore[attr-defined]
        return np.interp(h, hs, vals)

    def iota(self, y: float) -> int:
        return self.profile.iota(y)


# -- family constructors ----------------------------------------------------

def _make_poly_crit(params):
    n = params.get("N", 1)
    if not (isinstance(n, (int, np.integer)) and n >= 1):
        raise InvalidParams("poly-crit requires integer N >= 1")
    if n == 1:
        b = lambda y: np.sin(TWO_PI * y)
        db = lambda y: TWO_PI * np.cos(TWO_PI * y)
        d2b = lambda y: -(TWO_PI ** 2) * np.sin(TWO_PI * y)
        crit = [CriticalPoint(0.25, 1), CriticalPoint(0.75, 1)]
    else:
        # b = sin(2 pi y)^(N+1): b' vanishes to order N at sin = 0 and to
        # order 1 at cos = 0.
        m = n + 1

        def b(y, m=m):
            return np.sin(TWO_PI * y) ** m

        def db(y, m=m):
            s, c = np.sin(TWO_PI * y), np.cos(TWO_PI * y)
            return TWO_PI * m * s ** (m - 1) * c

        def d2b(y, m=m):
            s, c = np.sin(TWO_PI * y), np.cos(TWO_PI * y)
            return (TWO_PI ** 2) * m * ((m - 1) * s ** (m - 2) * c ** 2 - s ** m)

        crit = [
            CriticalPoint(0.0, n), CriticalPoint(0.25, 1),
            CriticalPoint(0.5, n), CriticalPoint(0.75, 1),
        ]
    return ShearProfile(TORUS, "poly-crit", {"N": n}, b, db, d2b, crit, [])


def _make_flat_crit(params):
    p = params.get("p")
    if p is None or p <= 0:
        raise InvalidParams("flat-crit requires p > 0")
    y1 = 0.5  # flat point; the kink sits at the antipode y = 0

    def _dist_sign(y):
        u = (np.asarray(y) - y1) % 1.0
        d = np.minimum(u, 1.0 - u)
        sgn = np.where(u < 0.5, 1.0, -1.0)
        return d, sgn

    def _core(y):
        d, sgn = _dist_sign(y)
        with np.errstate(divide="ignore", over="ignore"):
            e = np.where(d > 0.0, d ** -p, np.inf)
        val = np.where(e < 700.0, np.exp(-np.minimum(e, 745.0)), 0.0)
        return d, sgn, e, val

    def b(y):
        return _core(y)[3]

    def db(y):
        d, sgn, e, val = _core(y)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            out = np.where(val > 0.0, val * p * d ** (-p - 1.0) * sgn, 0.0)
        return out

    def d2b(y):
        d, sgn, e, val = _core(y)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            out = np.where(val > 0.0,
                           val * (p * p * d ** (-2 * p - 2) - p * (p + 1) * d ** (-p - 2)),
                           0.0)
        return out

    crit = [CriticalPoint(y1, math.inf)]
    sing = [SingularPoint(0.0, 1.0)]
    return ShearProfile(TORUS, "flat-crit", {"p": p, "y1": y1}, b, db, d2b, crit, sing)


def _make_holder_singular(params):
    alpha = params.get("alpha")
    beta = params.get("beta", 0.0)
    if alpha is None or not (0.0 < alpha < 1.0):
        raise InvalidParams("holder-singular requires alpha in (0, 1)")
    if beta >= alpha * math.log(2.0):
        # larger beta creates a spurious interior critical point of the
        # local model d^alpha log^beta(1/d)
        raise InvalidParams("holder-singular requires beta < alpha*log(2)")

    def parts(y):
        u = np.asarray(y) % 1.0
        d = np.minimum(u, 1.0 - u)
        sgn = np.where(u < 0.5, 1.0, -1.0)
        return d, sgn

    if beta == 0.0:
        def b(y):
            d, _ = parts(y)
            return d ** alpha

        def db(y):
            d, sgn = parts(y)
            with np.errstate(divide="ignore"):
                return np.where(d > 0, alpha * d ** (alpha - 1.0) * sgn, np.inf)

        def d2b(y):
            d, _ = parts(y)
            with np.errstate(divide="ignore"):
                return np.where(d > 0, alpha * (alpha - 1.0) * d ** (alpha - 2.0),
                                -np.inf)
    else:
        def b(y):
            d, _ = parts(y)
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.where(d > 0, d ** alpha * np.log(1.0 / np.maximum(d, 1e-300)) ** beta, 0.0)

        def db(y):
            d, sgn = parts(y)
            dd = np.maximum(d, 1e-300)
            L = np.log(1.0 / dd)
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.where(d > 0,
                                sgn * dd ** (alpha - 1.0) * L ** (beta - 1.0)
                                * (alpha * L - beta), np.inf)

        def d2b(y):
            d, _ = parts(y)
            dd = np.maximum(d, 1e-300)
            L = np.log(1.0 / dd)
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.where(d > 0,
                                dd ** (alpha - 2.0) * L ** (beta - 2.0) * (
                                    alpha * (alpha - 1.0) * L * L
                                    - beta * (2.0 * alpha - 1.0) * L
                                    + beta * (beta - 1.0)), -np.inf)

    sing = [SingularPoint(0.0, alpha, beta), SingularPoint(0.5, 1.0)]
    return ShearProfile(TORUS, "holder-singular",
                        {"alpha": alpha, "beta": beta}, b, db, d2b, [], sing)


def _make_triangle(params):
    def b(y):
        return np.abs(np.asarray(y) % 1.0 - 0.5)

    def db(y):
        return np.where(np.asarray(y) % 1.0 > 0.5, 1.0, -1.0)

    def d2b(y):
        return np.zeros_like(np.asarray(y, dtype=float))

    sing = [SingularPoint(0.0, 1.0), SingularPoint(0.5, 1.0)]
    return ShearProfile(TORUS, "triangle", {}, b, db, d2b, [], sing)


def _make_radial_power(params):
    q = params.get("q")
    kind = params.get("kind", RADIAL_DISK)
    if q is None or q < 0:
        raise InvalidParams("radial-power requires q >= 0 (b = r^(q+1))")
    if kind not in (RADIAL_DISK, RADIAL_PLANE):
        raise InvalidParams("radial-power kind must be radial-disk or radial-plane")
    s = q + 1.0
    b = lambda r: np.asarray(r, dtype=float) ** s

    def db(r):
        return s * np.asarray(r, dtype=float) ** (s - 1.0)

    def d2b(r):
        r = np.asarray(r, dtype=float)
        if s >= 2 or np.all(r > 0):
            return s * (s - 1.0) * r ** (s - 2.0)
        with np.errstate(divide="ignore"):
            return np.where(r > 0, s * (s - 1.0) * r ** (s - 2.0), np.inf)

    return ShearProfile(kind, "radial-power", {"q": q, "kind": kind}, b, db, d2b, [], [])


def _make_radial_exp(params):
    kind = params.get("kind", RADIAL_PLANE)
    b = lambda r: np.expm1(r)
    db = lambda r: np.exp(r)
    d2b = lambda r: np.exp(r)
    return ShearProfile(kind, "radial-exp", {"kind": kind}, b, db, d2b, [], [])


def _make_vortex(params):
    alpha = params.get("alpha")
    if alpha is None or not (0.0 < alpha <= 2.0):
        raise InvalidParams("vortex requires alpha in (0, 2]")

    def b(r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(r > 0, np.maximum(r, 1e-300) ** -alpha, np.inf)

    def db(r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(r > 0, -alpha * np.maximum(r, 1e-300) ** (-alpha - 1.0),
                            -np.inf)

    def d2b(r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(r > 0,
                            alpha * (alpha + 1.0) * np.maximum(r, 1e-300) ** (-alpha - 2.0),
                            np.inf)

    return ShearProfile(RADIAL_DISK, "vortex", {"alpha": alpha}, b, db, d2b,
                        [], [], singular_origin=True)


def _make_custom_table(params):
    ys = np.asarray(params.get("y"), dtype=float)
    bs = np.asarray(params.get("b"), dtype=float)
    kind = params.get("kind", TORUS)
    if ys is None or bs is None or ys.shape != bs.shape or ys.size < 8:
        raise InvalidParams("custom-table requires matching y/b arrays, >= 8 samples")
    if kind == TORUS:
        if abs(ys[0]) > 1e-12 or abs(ys[-1] - 1.0) > 1e-12:
            raise InvalidParams("custom-table torus samples must span [0, 1]")
        if abs(bs[0] - bs[-1]) > 1e-9 * max(1.0, np.max(np.abs(bs))):
            raise InvalidParams("custom-table torus samples must be periodic")
        spl = CubicSpline(ys, bs, bc_type="periodic")
    else:
        spl = CubicSpline(ys, bs)
    def _wrap(x):
        return np.asarray(x) % 1.0 if kind == TORUS else np.asarray(x)

    b = lambda x: spl(_wrap(x))
    db = lambda x: spl(_wrap(x), 1)
    d2b = lambda x: spl(_wrap(x), 2)
    # locate critical points of the spline (sign changes of b'), order 1
    # assumed; derivative values at roundoff level are not sign changes
    crit = []
    grid = np.linspace(0.0, 1.0, 2048, endpoint=False) if kind == TORUS else \
        np.linspace(ys[0], ys[-1], 2048)
    dvals = np.asarray(spl(grid, 1))
    noise = 1e-9 * max(1.0, float(np.max(np.abs(bs))))
    from scipy.optimize import brentq
    sig = np.flatnonzero(np.abs(dvals) > noise)
    for a, bidx in zip(sig[:-1], sig[1:]):
        if dvals[a] * dvals[bidx] < 0.0:
            try:
                loc = brentq(lambda x: float(spl(x, 1)), grid[a], grid[bidx])
                crit.append(CriticalPoint(float(loc), 1))
            except ValueError:
                pass
    return ShearProfile(kind, "custom-table", {"kind": kind}, b, db, d2b, crit, [])


_FAMILIES = {
    "poly-crit": _make_poly_crit,
    "flat-crit": _make_flat_crit,
    "holder-singular": _make_holder_singular,
    "triangle": _make_triangle,
    "radial-power": _make_radial_power,
    "radial-exp": _make_radial_exp,
    "vortex": _make_vortex,
    "custom-table": _make_custom_table,
}


def make_profile(family: str, params: dict | None = None) -> ShearProfile:
    """Construct a registered profile family.

    Families and parameters:

    - ``poly-crit``: N >= 1; b = sin(2 pi y) for N=1, sin(2 pi y)^(N+1) else
    - ``flat-crit``: p > 0; flat critical point at 0.5 with local increment
      exp(-1/|h|^p), kink at the antipode
    - ``holder-singular``: alpha in (0,1), beta; b = d^alpha log^beta(1/d)
      with d the circular distance to 0
    - ``triangle``: b = |y - 1/2|
    - ``radial-power``: q >= 0, kind; b = r^(q+1)
    - ``radial-exp``: kind; b = e^r - 1
    - ``vortex``: alpha in (0, 2]; b = r^-alpha on the disk
    - ``custom-table``: sampled y/b with cubic interpolation (exploratory;
      excluded from the closed-form bound checks)
    """
    if family not in _FAMILIES:
        raise UnsupportedFamily(f"unknown family {family!r}")
    return _FAMILIES[family](params or {})


# -- minimal velocity differential ------------------------------------------

def _envelope_shape(profile: ShearProfile):
    """Closed-form phi shape for each family: (shape, exponent)."""
    fam = profile.family
    if fam == "poly-crit":
        return "power", profile.params["N"] + 1.0
    if fam == "flat-crit":
        return "exp-flat", profile.params["p"]
    if fam in ("triangle", "holder-singular", "vortex"):
        return "power", 1.0
    if fam == "radial-power":
        return "power", profile.params["q"] + 1.0
    if fam == "radial-exp":
        return "power", 1.0
    if fam == "custom-table":
        return "table", 0.0
    raise UnsupportedFamily(fam)


def _envelope_samples(profile: ShearProfile, hs: np.ndarray) -> np.ndarray:
    """Pointwise minimum over y of the directed differential at each h.

    The infimum is typically approached at distinguished points, so the
    uniform sample is augmented with geometrically clustered points on both
    sides of each of them.
    """
    lo, hi = profile.domain
    hi_eff = min(hi, 4.0)
    ys = list(np.linspace(lo, hi_eff, _ENVELOPE_Y_SAMPLES,
                          endpoint=(profile.kind != TORUS)))
    for p in profile.distinguished():
        offs = np.geomspace(1e-9, profile.h0, 12)
        ys.extend(p + offs)
        ys.extend(p - offs)
    ys = np.asarray(ys)
    if profile.kind == TORUS:
        ys = ys % 1.0
    else:
        ys = ys[(ys > lo + 1e-12) & (ys < hi_eff)]
    env = np.full(hs.shape, math.inf)
    for y in ys:
        sgn = profile.iota(float(y))
        step_end = y + sgn * hs[-1]
        if profile.kind != TORUS and not (lo <= step_end <= hi):
            continue
        env = np.minimum(env, profile.differential(float(y), sgn, hs))
    return env


def minimal_differential(profile: ShearProfile) -> VelocityDifferential:
    """Calibrated (h0, phi, iota) for a profile.

    The envelope constant c is the largest value for which
    ``|b(y + iota(y) h) - b(y)| >= c * shape(h)`` holds on a dense sample of
    (y, h) pairs with h in (0, h0].  Raises ``DegenerateProfile`` when the
    differential vanishes identically.  The custom-table family gets a
    tabulated monotone envelope instead of a closed form.
    """
    cached = getattr(profile, "_diff_cache", None)
    if cached is not None:
        return cached
    shape, expo = _envelope_shape(profile)
    h0 = profile.h0
    if shape == "exp-flat":
        h_min = 650.0 ** (-1.0 / expo)  # keep exp(-h^-p) representable
        hs = np.geomspace(max(h_min, 1e-4 * h0), h0, _ENVELOPE_H_SAMPLES)
    else:
        hs = np.geomspace(1e-4 * h0, h0, _ENVELOPE_H_SAMPLES)
    env = _envelope_samples(profile, hs)

    if shape == "table":
        env = np.minimum.accumulate(env[::-1])[::-1]  # monotone nondecreasing minorant
        env = np.concatenate([[0.0], env])
        hs_tab = np.concatenate([[0.0], hs])
        if env[-1] <= 1e-12 * profile.scale:
            raise DegenerateProfile("tabulated envelope is identically zero")
        diff = VelocityDifferential(h0=h0, shape="table", exponent=0.0, c=1.0,
                                    profile=profile)
        profile._phi_table = (hs_tab, env)
        profile._diff_cache = diff
        return diff

    ref = -hs ** -expo if shape == "exp-flat" else expo * np.log(hs)
    with np.errstate(divide="ignore"):
        ratios = np.log(env) - ref
    if not np.all(np.isfinite(ratios)):
        raise DegenerateProfile("differential vanishes on the sample")
    # small shave so unsampled y cannot dip below the envelope
    c = math.exp(float(np.min(ratios))) * (1.0 - 1e-6)
    if c <= 0.0 or not np.isfinite(c):
        raise DegenerateProfile("degenerate envelope constant")
    diff = VelocityDifferential(h0=h0, shape=shape, exponent=expo, c=c, profile=profile)
    profile._diff_cache = diff
    return diff
