"""Monte Carlo engines for the particle trajectories under the scalar's flow.

Torus: exact Brownian increments in y, Euler-Maruyama for the -b(y) drift
in x.  Radial: the radius is the modulus of a 2d Brownian displacement
(Cartesian driving), which realizes the nu/r drift exactly and keeps r >= 0
structurally; the angle gets the exact angular increment of the same driver
plus the -b(r) drift.  The disk variant folds r -> 2 - r after each step.

Randomness is counter-based: one Philox stream per (master seed, path,
channel), so ensembles are reproducible and extending n_paths leaves the
first paths bit-identical.  Paths are simulated in chunks, each path drawing
its whole increment sequence from its own stream in one call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .errors import SolveFailure
from .profiles import VelocityDifferential

CHANNEL_W = 0
CHANNEL_B = 1
CHANNEL_DRIVER = 2

_CHUNK_BUDGET = 24_000_000  # doubles per chunk of pre-drawn increments


def path_stream(seed: int, path: int, channel: int) -> np.random.Generator:
    """Philox generator keyed by (seed, path) with the channel as a disjoint
    counter block."""
    key = (int(seed) % (1 << 64)) * (1 << 64) + int(path)
    return np.random.Generator(np.random.Philox(key=key, counter=channel << 192))


def draw_increments(seed, paths, n_draws, channel) -> np.ndarray:
    """(len(paths), n_draws) standard normals, one stream per path.

    Each path's sequence is independent of the chunking and of the total
    number of paths.
    """
    out = np.empty((len(paths), n_draws))
    for i, p in enumerate(paths):
        out[i] = path_stream(seed, p, channel).standard_normal(n_draws)
    return out


def _chunks(n_paths, doubles_per_path):
    size = max(1, min(n_paths, int(_CHUNK_BUDGET // max(doubles_per_path, 1))))
    for start in range(0, n_paths, size):
        yield range(start, min(start + size, n_paths))


@dataclass
class TrajectoryEnsemble:
    """Path bundle on the covering space (unwrapped coordinates).

    ``first``/``second`` are (n_records, n_paths) sample arrays: (x, y) on
    the torus, (r, theta) radially.
    """

    kind: str                 # "torus" | "radial" | "disk"
    nu: float
    dt: float
    seed: int
    n_paths: int
    times: np.ndarray
    first: np.ndarray
    second: np.ndarray

    @property
    def x(self):
        return self.first

    @property
    def y(self):
        return self.second

    @property
    def r(self):
        return self.first

    @property
    def theta(self):
        return self.second

    def summary_csv(self, path):
        with open(path, "w") as fh:
            a, b = ("x", "y") if self.kind == "torus" else ("r", "theta")
            fh.write(f"t,mean_{a},var_{a},mean_{b},var_{b}\n")
            for i, t in enumerate(self.times):
                fh.write(f"{t!r},{self.first[i].mean()!r},{self.first[i].var(ddof=1)!r},"
                         f"{self.second[i].mean()!r},{self.second[i].var(ddof=1)!r}\n")


def _record_steps(n_steps, n_records):
    return np.unique(np.linspace(0, n_steps, min(n_records, n_steps) + 1).astype(int))


def simulate_torus(profile, nu, init, t_end, dt, n_paths, seed,
                   n_records=50) -> TrajectoryEnsemble:
    """Simulate (x_t, y_t) with drift -b(y) in x and pure diffusion in y.

    ``init`` is a single (x0, y0) used for every path.  States stay
    unwrapped; observables wrap them.
    """
    x0, y0 = init
    n_steps = max(1, int(round(t_end / dt)))
    dt = t_end / n_steps
    root = math.sqrt(2.0 * nu * dt)
    rec = _record_steps(n_steps, n_records)
    xs = np.empty((len(rec), n_paths))
    ys = np.empty((len(rec), n_paths))
    for paths in _chunks(n_paths, 2 * n_steps):
        dw = draw_increments(seed, paths, n_steps, CHANNEL_W)
        db = draw_increments(seed, paths, n_steps, CHANNEL_B)
        x = np.full(len(paths), float(x0))
        y = np.full(len(paths), float(y0))
        sel = slice(paths.start, paths.stop)
        ri = 0
        if rec[0] == 0:
            xs[0, sel] = x
            ys[0, sel] = y
            ri = 1
        for n in range(n_steps):
            x = x - profile.b_array(y) * dt + root * dw[:, n]
            y = y + root * db[:, n]
            if ri < len(rec) and rec[ri] == n + 1:
                xs[ri, sel] = x
                ys[ri, sel] = y
                ri += 1
    return TrajectoryEnsemble(kind="torus", nu=nu, dt=dt, seed=seed,
                              n_paths=n_paths, times=rec * dt,
                              first=xs, second=ys)


def _fold(zx, zy):
    """Specular reflection of the Cartesian driver at |z| = 1."""
    r = np.hypot(zx, zy)
    over = r > 1.0
    if np.any(over):
        scale = (2.0 - r[over]) / r[over]
        zx[over] *= scale
        zy[over] *= scale


def simulate_radial(profile, nu, init, t_end, dt, n_paths, seed,
                    reflect=False, n_records=50) -> TrajectoryEnsemble:
    """Simulate (r_t, theta_t) by Cartesian driving of the radius.

    The 2d driver z_t satisfies dz = sqrt(2 nu) dxi with |z_0| = r_0; its
    modulus is the radial diffusion and its exact angular increment feeds
    theta together with the -b(r) drift.  With ``reflect`` the radius is
    specularly folded at r = 1 after each step.
    """
    r0, th0 = init
    if r0 <= 0:
        raise ValueError("r0 must be positive")
    n_steps = max(1, int(round(t_end / dt)))
    dt = t_end / n_steps
    root = math.sqrt(2.0 * nu * dt)
    rec = _record_steps(n_steps, n_records)
    rs = np.empty((len(rec), n_paths))
    ths = np.empty((len(rec), n_paths))
    for paths in _chunks(n_paths, 2 * n_steps):
        xi = draw_increments(seed, paths, 2 * n_steps, CHANNEL_DRIVER)
        zx = np.full(len(paths), float(r0))
        zy = np.zeros(len(paths))
        theta = np.full(len(paths), float(th0))
        sel = slice(paths.start, paths.stop)
        ri = 0
        if rec[0] == 0:
            rs[0, sel] = r0
            ths[0, sel] = th0
            ri = 1
        for n in range(n_steps):
            r_prev = np.hypot(zx, zy)
            phi_prev = np.arctan2(zy, zx)
            theta = theta - profile.b_array(r_prev) * dt
            zx = zx + root * xi[:, 2 * n]
            zy = zy + root * xi[:, 2 * n + 1]
            dphi = np.arctan2(zy, zx) - phi_prev
            dphi = (dphi + math.pi) % (2.0 * math.pi) - math.pi
            theta = theta + dphi
            if reflect:
                _fold(zx, zy)
            if ri < len(rec) and rec[ri] == n + 1:
                rs[ri, sel] = np.hypot(zx, zy)
                ths[ri, sel] = theta
                ri += 1
    return TrajectoryEnsemble(kind="disk" if reflect else "radial", nu=nu,
                              dt=dt, seed=seed, n_paths=n_paths,
                              times=rec * dt, first=rs, second=ths)


def feynman_kac(ensemble: TrajectoryEnsemble, f0) -> tuple[float, float]:
    """Pointwise solution estimate: mean of f0 over wrapped endpoints.

    Returns (estimate, jackknife standard error); for the sample mean the
    jackknife collapses to std/sqrt(n).
    """
    if ensemble.kind == "torus":
        vals = np.asarray(f0(ensemble.first[-1] % 1.0, ensemble.second[-1] % 1.0),
                          dtype=float)
    else:
        vals = np.asarray(f0(ensemble.first[-1],
                             ensemble.second[-1] % (2.0 * math.pi)), dtype=float)
    est = float(vals.mean())
    n = vals.size
    se = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return est, se


@dataclass
class VarianceDiagnostic:
    times: np.ndarray
    std_x: np.ndarray
    reference: np.ndarray      # t * phi(sqrt(nu t))
    constant: float
    first_exceed: float | None


def variance_diagnostic(ensemble: TrajectoryEnsemble,
                        diff: VelocityDifferential,
                        constant=0.1) -> VarianceDiagnostic:
    """Spread of x_t against the shear-induced reference t phi(sqrt(nu t)).

    Flags the first recorded time at which std(x_t) exceeds
    constant * reference (None if never).
    """
    if ensemble.kind != "torus":
        raise ValueError("variance diagnostic needs a torus ensemble")
    t = ensemble.times
    std = ensemble.first.std(axis=1, ddof=1)
    ref = np.array([s * diff.phi(math.sqrt(ensemble.nu * s)) if s > 0 else 0.0
                    for s in t])
    exceed = None
    for i in range(1, len(t)):
        if ref[i] > 0 and std[i] > constant * ref[i]:
            exceed = float(t[i])
            break
    return VarianceDiagnostic(times=t, std_x=std, reference=ref,
                              constant=constant, first_exceed=exceed)


@dataclass
class EscapeResult:
    probability: float
    se: float
    ell: float
    time: float
    n_paths: int


def boundary_escape_test(nu, ell, n_paths, seed, c_mult, r0=1.0,
                         steps_per_t=400) -> EscapeResult:
    """Probability that the reflected radius sits in [1-3 ell, 1-ell] at time
    c_mult * T, where ell = sqrt(nu T), started from r0 near the boundary.

    The default r0 = 1 is the worst case.  The estimate depends on nu only
    through the time rescaling, i.e. it is a function of ell and c_mult.
    """
    if not (0.0 < ell < 0.25):
        raise ValueError("ell must be in (0, 1/4)")
    T = ell * ell / nu
    t_end = c_mult * T
    if t_end <= 0.0:
        inside = (1.0 - 3.0 * ell <= r0 <= 1.0 - ell)
        return EscapeResult(float(inside), 0.0, ell, 0.0, n_paths)
    n_steps = max(1, int(round(steps_per_t * c_mult)))
    dt = t_end / n_steps
    root = math.sqrt(2.0 * nu * dt)
    hits = 0
    for paths in _chunks(n_paths, 2 * n_steps):
        xi = draw_increments(seed, paths, 2 * n_steps, CHANNEL_DRIVER)
        zx = np.full(len(paths), float(r0))
        zy = np.zeros(len(paths))
        for n in range(n_steps):
            zx += root * xi[:, 2 * n]
            zy += root * xi[:, 2 * n + 1]
            _fold(zx, zy)
        r = np.hypot(zx, zy)
        hits += int(np.count_nonzero((r >= 1.0 - 3.0 * ell) & (r <= 1.0 - ell)))
    p = hits / n_paths
    se = math.sqrt(max(p * (1.0 - p), 1e-300) / n_paths)
    return EscapeResult(p, se, ell, t_end, n_paths)


@dataclass
class HittingTimeResult:
    grid: np.ndarray
    psi: np.ndarray
    mc_mean: float | None
    mc_se: float | None


def hitting_time_bvp(nu, ell, p_points, n_mc=0, seed=0, mc_r0=1.0,
                     steps_per_t=4000, include_curvature=True) -> HittingTimeResult:
    """Mean time to reach 1 - 2 ell from near the reflecting boundary.

    Solves nu (psi'' + psi'/r) = -1 on (1-2 ell, 1) with psi(1-2 ell) = 0 and
    psi'(1) = 0 by second-order finite differences (``include_curvature``
    False drops the 1/r term, the flat analogue with the closed form
    (r-a)(2-a-r)/(2 nu)).  With n_mc > 0 also returns the Monte Carlo mean of
    the reflected diffusion's hitting time from mc_r0 for comparison.
    """
    if p_points < 64:
        raise ValueError("grid must have at least 64 points")
    a = 1.0 - 2.0 * ell
    n = int(p_points)
    h = (1.0 - a) / n
    r = a + h * np.arange(n + 1)
    ab = np.zeros((3, n))
    rhs = np.full(n, -1.0 / nu)
    for i in range(1, n + 1):
        ri = r[i]
        curv = 1.0 / (2 * h * ri) if include_curvature else 0.0
        c_lo = 1.0 / h ** 2 - curv
        c_hi = 1.0 / h ** 2 + curv
        k = i - 1
        ab[1, k] = -2.0 / h ** 2
        if i < n:
            ab[0, k + 1] = c_hi
            if k > 0:
                ab[2, k - 1] = c_lo
        else:
            if k > 0:
                ab[2, k - 1] = c_lo + c_hi  # Neumann ghost psi_{n+1} = psi_{n-1}
    try:
        psi_inner = solve_banded((1, 1), ab, rhs)
    except Exception as exc:
        raise SolveFailure(str(exc)) from exc
    if not np.all(np.isfinite(psi_inner)):
        raise SolveFailure("singular tridiagonal system")
    psi = np.concatenate([[0.0], psi_inner])

    mc_mean = mc_se = None
    if n_mc > 0:
        T = ell * ell / nu
        dt = T / steps_per_t
        root = math.sqrt(2.0 * nu * dt)
        cap_steps = int(60 * max(psi[-1], T) / dt)
        taus = np.full(n_mc, cap_steps * dt)
        block = 2048
        for paths in _chunks(n_mc, 2 * block):
            # alive-path compaction between blocks: a path's own stream is
            # unaffected, dead paths just stop drawing
            alive_ids = np.arange(paths.start, paths.stop)
            zx = np.full(len(alive_ids), float(mc_r0))
            zy = np.zeros(len(alive_ids))
            gens = {p: path_stream(seed, p, CHANNEL_DRIVER) for p in alive_ids}
            step = 0
            while alive_ids.size and step < cap_steps:
                nb = min(block, cap_steps - step)
                xi = np.stack([gens[p].standard_normal(2 * nb) for p in alive_ids])
                hit_mask = np.zeros(alive_ids.size, dtype=bool)
                for j in range(nb):
                    zx += root * xi[:, 2 * j]
                    zy += root * xi[:, 2 * j + 1]
                    rr = np.hypot(zx, zy)
                    over = rr > 1.0
                    if np.any(over):
                        scale = (2.0 - rr[over]) / rr[over]
                        zx[over] *= scale
                        zy[over] *= scale
                        rr[over] = 2.0 - rr[over]
                    step += 1
                    fresh = ~hit_mask & (rr <= a)
                    if np.any(fresh):
                        taus[alive_ids[fresh]] = step * dt
                        hit_mask |= fresh
                    if hit_mask.all():
                        break
                keep = ~hit_mask
                alive_ids = alive_ids[keep]
                zx = zx[keep]
                zy = zy[keep]
        mc_mean = float(taus.mean())
        mc_se = float(taus.std(ddof=1) / math.sqrt(n_mc))
    return HittingTimeResult(grid=r, psi=psi, mc_mean=mc_mean, mc_se=mc_se)


def hitting_time_flat_oracle(r, ell, nu):
    """Closed form for the flat analogue: psi = (r - a)(2 - a - r)/(2 nu)."""
    a = 1.0 - 2.0 * ell
    return (r - a) * (2.0 - a - r) / (2.0 * nu)


def hitting_time_radial_oracle(r, ell, nu):
    """Closed form with curvature: psi = (a^2 - r^2)/(4 nu) + log(r/a)/(2 nu)."""
    a = 1.0 - 2.0 * ell
    return (a * a - r * r) / (4.0 * nu) + np.log(r / a) / (2.0 * nu)


def torus_y_marginal_ks(nu, t, y0, n_paths, seed) -> tuple[float, float]:
    """KS distance between sampled wrapped y_t and the periodized heat kernel.

    Returns (ks_distance, ks_critical_5pct).  y_t is exact in the scheme, so
    this checks the wrapping and the stream construction.
    """
    from scipy.stats import norm

    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    y = (y0 + math.sqrt(2.0 * nu * t) * rng.standard_normal(n_paths)) % 1.0
    sig = math.sqrt(2.0 * nu * t)

    def cdf(u):
        total = np.zeros_like(u)
        for k in range(-12, 13):
            total += norm.cdf((u + k - y0) / sig) - norm.cdf((k - y0) / sig)
        return total

    ys = np.sort(y)
    grid_cdf = cdf(ys)
    n = n_paths
    emp_hi = np.arange(1, n + 1) / n
    emp_lo = np.arange(0, n) / n
    ks = float(np.max(np.maximum(np.abs(grid_cdf - emp_hi),
                                 np.abs(grid_cdf - emp_lo))))
    return ks, 1.36 / math.sqrt(n)
