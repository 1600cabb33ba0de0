"""Spectral solvers for the advection-diffusion equation.

Torus: Fourier in both directions, Strang splitting with exact sub-steps
(diffusion as a spectral multiplier, advection as a pointwise phase in
(k, y-physical) space).  The only error source is the splitting itself.

Disk: Fourier in theta, second-order finite differences in r with a
cell-centered grid, Crank-Nicolson for the radial diffusion and the exact
advective phase per mode.

Both solvers store only the streamline-fluctuation part: the k=0 (torus) and
m=0 (disk) modes are structurally excluded, which is exactly the subtraction
of the streamline average propagated by the dynamics.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .errors import CFLError, ResolutionError, SingularProfileResolution
from .profiles import ShearProfile
from .ratefit import DecayCurve
from .timescales import local_timescale

TWO_PI = 2.0 * math.pi

_LINF_OVERSAMPLE = 256


@dataclass
class TorusField:
    """Mean-free scalar on the torus: coefficients c[k+K, j] = fhat_k(y_j).

    k runs over -K..K with the k=0 row structurally zero; y_j = j/M.
    """

    K: int
    M: int
    coeffs: np.ndarray
    t: float = 0.0

    @classmethod
    def single_mode(cls, K, M, k, g):
        """Field 2 Re(g(y) e^{2 pi i k x}) from a complex amplitude g(y)."""
        if not (1 <= abs(k) <= K):
            raise ValueError("mode k must satisfy 1 <= |k| <= K")
        ys = np.arange(M) / M
        c = np.zeros((2 * K + 1, M), dtype=complex)
        gv = np.asarray(g(ys), dtype=complex)
        c[K + k] = gv
        c[K - k] = np.conj(gv)
        return cls(K=K, M=M, coeffs=c)

    @classmethod
    def random_mean_free(cls, K, M, seed, decay=2.0):
        """Random real field with k=0 removed and smooth spectral falloff."""
        rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
        c = np.zeros((2 * K + 1, M), dtype=complex)
        ys = np.arange(M) / M
        for k in range(1, K + 1):
            amps = np.zeros(M, dtype=complex)
            for m in range(-min(4, M // 4), min(4, M // 4) + 1):
                a = rng.standard_normal() + 1j * rng.standard_normal()
                amps += a * np.exp(TWO_PI * 1j * m * ys) / (1 + k ** decay + abs(m) ** decay)
            c[K + k] = amps
            c[K - k] = np.conj(amps)
        return cls(K=K, M=M, coeffs=c)

    def check_invariants(self, tol=1e-12):
        scale = max(np.max(np.abs(self.coeffs)), 1e-300)
        assert np.max(np.abs(self.coeffs[self.K])) <= tol * scale, "k=0 mode present"
        for k in range(1, self.K + 1):
            err = np.max(np.abs(self.coeffs[self.K - k] - np.conj(self.coeffs[self.K + k])))
            assert err <= tol * scale, f"Hermitian symmetry violated at k={k}"

    def physical(self, nx=None):
        """Real field on an (nx, M) grid, x_i = i/nx."""
        nx = nx or max(_LINF_OVERSAMPLE, 4 * (2 * self.K + 1))
        arr = np.zeros((nx, self.M), dtype=complex)
        for k in range(-self.K, self.K + 1):
            if k == 0:
                continue
            arr[k % nx] = self.coeffs[self.K + k]
        return np.real(np.fft.ifft(arr, axis=0) * nx)

    def l2(self) -> float:
        return math.sqrt(float(np.sum(np.abs(self.coeffs) ** 2)) / self.M)

    def copy(self):
        return TorusField(K=self.K, M=self.M, coeffs=self.coeffs.copy(), t=self.t)


def streamline_norms(field) -> dict:
    """Per-streamline sup norm plus global L2 and sup norms.

    The sup in x (or theta) is a grid max over an oversampled inverse
    transform; for a single occupied mode it equals twice the coefficient
    modulus to oversampling accuracy.
    """
    phys = field.physical()
    linf_y = np.max(np.abs(phys), axis=0)
    if isinstance(field, DiskField):
        r = field.radii()
        l2 = math.sqrt(float(np.sum(np.abs(field.coeffs) ** 2 * r) * field.dr() * TWO_PI))
    else:
        l2 = field.l2()
    return {"linf_y": linf_y, "l2": l2, "linf": float(np.max(linf_y))}


def _torus_multipliers(K, M, nu, dt, hypoelliptic):
    ks = np.arange(-K, K + 1)
    ms = np.fft.fftfreq(M, d=1.0 / M)
    kx2 = 0.0 if hypoelliptic else (TWO_PI * ks[:, None]) ** 2
    lam = nu * (kx2 + (TWO_PI * ms[None, :]) ** 2)
    return np.exp(-lam * dt / 2.0), np.exp(-lam * dt)


def _resolution_check_torus(profile, nu, M):
    ys = np.linspace(0.0, 1.0, 129, endpoint=False)
    ell_min = math.inf
    for y in ys:
        ell_min = min(ell_min, math.sqrt(nu * local_timescale(profile, nu, float(y))))
    for c in profile.critical_points:
        if not math.isinf(c.order):
            ell_min = min(ell_min, math.sqrt(
                nu * local_timescale(profile, nu, c.location)))
    if ell_min < 4.0 / M:
        raise ResolutionError(
            f"critical layer {ell_min:.3g} under 4 cells at M={M}")
    return ell_min


def evolve_torus(profile, nu, field0, t_end, dt, hypoelliptic=False,
                 n_snapshots=0, curve_samples=400, check_resolution=True,
                 record_per_y=False, stop_below=0.0):
    """Advance the torus field to t_end with Strang splitting.

    Returns (snapshots, curve) where curve is a DecayCurve of the L2 norm
    with the sup norm attached as ``curve.linf`` (and, with record_per_y,
    the per-streamline sup norms as ``curve.linf_y``, one row per sample);
    snapshots is a list of TorusField copies at evenly spaced times (always
    including the final state).  Sub-steps are exact, so nu=0 transports
    with no amplitude error and a single-mode heat decay is exact to
    roundoff.
    """
    if profile.kind != "torus":
        raise ValueError("evolve_torus needs a torus profile")
    if t_end <= 0 or dt <= 0:
        raise ValueError("t_end and dt must be positive")
    field0.check_invariants()
    K, M = field0.K, field0.M
    ys = np.arange(M) / M
    bvals = profile.b_array(ys)
    bmax = float(np.max(np.abs(bvals)))
    if bmax > 0 and K > 0 and dt > 0.05 / (K * bmax) * (1 + 1e-12):
        raise CFLError(f"dt={dt:.3g} exceeds 0.05/(K max|b|)={0.05 / (K * bmax):.3g}")
    if nu > 0 and check_resolution:
        _resolution_check_torus(profile, nu, M)

    n_steps = max(1, int(round(t_end / dt)))
    dt = t_end / n_steps
    half, full = _torus_multipliers(K, M, nu, dt, hypoelliptic)
    ks = np.arange(-K, K + 1)
    phase = np.exp(-TWO_PI * 1j * ks[:, None] * bvals[None, :] * dt)

    stride = max(1, n_steps // max(curve_samples, 1))
    snap_steps = set()
    if n_snapshots > 0:
        snap_steps = {int(round(s)) for s in
                      np.linspace(1, n_steps, min(n_snapshots, n_steps))}

    def diffuse(c, mult):
        return np.fft.ifft(np.fft.fft(c, axis=1) * mult, axis=1)

    first = streamline_norms(field0)
    times = [0.0]
    l2s = [field0.l2()]
    linfs = [first["linf"]]
    linf_rows = [first["linf_y"]] if record_per_y else None
    snaps = []

    def record(f):
        sn = streamline_norms(f)
        times.append(f.t - field0.t)
        l2s.append(f.l2())
        linfs.append(sn["linf"])
        if record_per_y:
            linf_rows.append(sn["linf_y"])

    l2_0 = max(l2s[0], 1e-300)
    state = diffuse(field0.coeffs, half)
    for n in range(1, n_steps + 1):
        state = phase * state
        if n == n_steps:
            state = diffuse(state, half)
            out = TorusField(K=K, M=M, coeffs=state, t=field0.t + t_end)
            record(out)
            snaps.append(out)
            break
        emit_curve = (n % stride == 0)
        emit_snap = n in snap_steps
        if emit_curve or emit_snap:
            snap = TorusField(K=K, M=M, coeffs=diffuse(state, half),
                              t=field0.t + n * dt)
            if emit_curve:
                record(snap)
            if emit_snap:
                snaps.append(snap)
            if emit_curve and stop_below > 0.0 and l2s[-1] < stop_below * l2_0:
                if not snaps or snaps[-1].t != snap.t:
                    snaps.append(snap)
                break
        state = diffuse(state, full)

    curve = DecayCurve(np.asarray(times), np.asarray(l2s), kind="l2")
    curve.linf = np.asarray(linfs)
    if record_per_y:
        curve.linf_y = np.asarray(linf_rows)
    return snaps, curve


# -- disk ---------------------------------------------------------------------

@dataclass
class DiskField:
    """Mean-free scalar on the unit disk: c[m + Mtheta, j] = fhat_m(r_j).

    Cell-centered radial grid r_j = (j + 1/2)/P; the m=0 row is structurally
    zero (theta average removed).
    """

    Mtheta: int
    P: int
    coeffs: np.ndarray
    t: float = 0.0

    def radii(self):
        return (np.arange(self.P) + 0.5) / self.P

    def dr(self):
        return 1.0 / self.P

    @classmethod
    def single_mode(cls, Mtheta, P, m, g):
        if not (1 <= abs(m) <= Mtheta):
            raise ValueError("mode m must satisfy 1 <= |m| <= Mtheta")
        c = np.zeros((2 * Mtheta + 1, P), dtype=complex)
        rs = (np.arange(P) + 0.5) / P
        gv = np.asarray(g(rs), dtype=complex)
        c[Mtheta + m] = gv
        c[Mtheta - m] = np.conj(gv)
        return cls(Mtheta=Mtheta, P=P, coeffs=c)

    def check_invariants(self, tol=1e-12):
        scale = max(np.max(np.abs(self.coeffs)), 1e-300)
        assert np.max(np.abs(self.coeffs[self.Mtheta])) <= tol * scale
        for m in range(1, self.Mtheta + 1):
            err = np.max(np.abs(self.coeffs[self.Mtheta - m]
                                - np.conj(self.coeffs[self.Mtheta + m])))
            assert err <= tol * scale, f"Hermitian symmetry violated at m={m}"

    def physical(self, ntheta=None):
        ntheta = ntheta or max(_LINF_OVERSAMPLE, 4 * (2 * self.Mtheta + 1))
        arr = np.zeros((ntheta, self.P), dtype=complex)
        for m in range(-self.Mtheta, self.Mtheta + 1):
            if m == 0:
                continue
            arr[m % ntheta] = self.coeffs[self.Mtheta + m]
        return np.real(np.fft.ifft(arr, axis=0) * ntheta)

    def l2(self) -> float:
        r = self.radii()
        return math.sqrt(float(np.sum(np.abs(self.coeffs) ** 2 * r) * self.dr() * TWO_PI))

    def copy(self):
        return DiskField(Mtheta=self.Mtheta, P=self.P, coeffs=self.coeffs.copy(),
                         t=self.t)


def radial_operator(P, m):
    """Tridiagonal (lower, diag, upper) of the conservative discretization of
    d_rr + (1/r) d_r - m^2/r^2 on the cell-centered grid.

    Zero flux through the r=0 face (regularity) and through r=1 (Neumann).
    """
    dr = 1.0 / P
    r = (np.arange(P) + 0.5) * dr
    r_lo = np.arange(P) * dr          # inner face radii
    r_hi = (np.arange(P) + 1) * dr    # outer face radii
    lower = np.zeros(P)
    upper = np.zeros(P)
    diag = np.zeros(P)
    inv = 1.0 / (r * dr * dr)
    upper[:-1] = (r_hi * inv)[:-1]
    lower[1:] = (r_lo * inv)[1:]
    diag = -(r_hi + r_lo) * inv - (m / r) ** 2
    diag[-1] += r_hi[-1] * inv[-1]    # Neumann ghost at r=1
    return lower, diag, upper


def radial_operator_dense(P, m):
    lower, diag, upper = radial_operator(P, m)
    return np.diag(diag) + np.diag(upper[:-1], 1) + np.diag(lower[1:], -1)


def _cn_pair(P, m, coef):
    """Banded matrices for (I - coef L) x_new = (I + coef L) x_old."""
    lower, diag, upper = radial_operator(P, m)
    ab = np.zeros((3, P))
    ab[0, 1:] = -coef * upper[:-1]
    ab[1] = 1.0 - coef * diag
    ab[2, :-1] = -coef * lower[1:]
    return ab, (coef * lower, 1.0 + coef * diag, coef * upper)


def _tridiag_apply(mats, x):
    lo, di, up = mats
    out = di * x
    out[:-1] += up[:-1] * x[1:]
    out[1:] += lo[1:] * x[:-1]
    return out


def evolve_disk(profile, nu, field0, t_end, dt, n_snapshots=0,
                curve_samples=400, check_resolution=True, stop_below=0.0):
    """Advance the disk field: per-mode Strang with Crank-Nicolson halves for
    the radial diffusion and the exact angular phase.

    Only the m >= 1 rows are evolved; the negative rows are their conjugates
    (the field is real and the operators commute with conjugation).  With
    ``stop_below`` the run ends early once the relative L2 norm of the field
    falls below it.  Raises ``SingularProfileResolution`` when the profile
    blows up at the origin and dt * m * b(r_innermost) >= 0.1.
    """
    if profile.kind != "radial-disk":
        raise ValueError("evolve_disk needs a radial-disk profile")
    field0.check_invariants()
    Mt, P = field0.Mtheta, field0.P
    rs = field0.radii()
    dr = field0.dr()
    bvals = profile.b_array(rs)
    if profile.singular_origin:
        worst = dt * Mt * abs(bvals[0])
        if worst >= 0.1:
            raise SingularProfileResolution(
                f"dt*m*b(r_1)={worst:.3g} >= 0.1 at P={P}")
    if nu > 0 and check_resolution:
        lo_check = 0.2 if profile.singular_origin else rs[0]
        ell_min = math.inf
        for r in np.linspace(lo_check, 1.0 - 1e-6, 65):
            ell_min = min(ell_min, math.sqrt(nu * local_timescale(profile, nu, float(r))))
        if ell_min < 4.0 / P:
            raise ResolutionError(
                f"critical layer {ell_min:.3g} under 4 cells at P={P}")

    n_steps = max(1, int(round(t_end / dt)))
    dt = t_end / n_steps
    coef = nu * dt / 4.0  # CN half-step
    solvers = {m: _cn_pair(P, m, coef) for m in range(1, Mt + 1)}
    phases = {m: np.exp(-1j * m * bvals * dt) for m in range(1, Mt + 1)}

    # work on the m >= 1 rows only, index m-1
    work = np.array([field0.coeffs[Mt + m] for m in range(1, Mt + 1)])

    def half_diffuse(w):
        for i, m in enumerate(range(1, Mt + 1)):
            ab, rhs = solvers[m]
            w[i] = solve_banded((1, 1), ab, _tridiag_apply(rhs, w[i]))

    def materialize(w, t):
        c = np.zeros((2 * Mt + 1, P), dtype=complex)
        for i, m in enumerate(range(1, Mt + 1)):
            c[Mt + m] = w[i]
            c[Mt - m] = np.conj(w[i])
        return DiskField(Mtheta=Mt, P=P, coeffs=c, t=t)

    def l2_of(w):
        return math.sqrt(2.0 * float(np.sum(np.abs(w) ** 2 * rs) * dr * TWO_PI))

    stride = max(1, n_steps // max(curve_samples, 1))
    snap_steps = set()
    if n_snapshots > 0:
        snap_steps = {int(round(s)) for s in
                      np.linspace(1, n_steps, min(n_snapshots, n_steps))}

    times = [0.0]
    l2s = [field0.l2()]
    linfs = [streamline_norms(field0)["linf"]]
    snaps = []
    l2_0 = max(l2s[0], 1e-300)
    for n in range(1, n_steps + 1):
        half_diffuse(work)
        for i, m in enumerate(range(1, Mt + 1)):
            work[i] *= phases[m]
        half_diffuse(work)
        last = n == n_steps
        if n % stride == 0 or last or n in snap_steps:
            f = materialize(work, field0.t + n * dt)
            if n % stride == 0 or last:
                times.append(n * dt)
                l2s.append(f.l2())
                linfs.append(streamline_norms(f)["linf"])
            if n in snap_steps or last:
                snaps.append(f)
            if stop_below > 0.0 and l2s[-1] < stop_below * l2_0:
                if not snaps or snaps[-1].t != f.t:
                    snaps.append(f)
                break
    curve = DecayCurve(np.asarray(times), np.asarray(l2s), kind="l2")
    curve.linf = np.asarray(linfs)
    return snaps, curve


# -- binary snapshot layout ---------------------------------------------------

_TORUS_MAGIC = b"SDTF"
_DISK_MAGIC = b"SDDF"


def write_field(field, path, nu=0.0):
    """Little-endian binary snapshot.

    Torus layout: magic 'SDTF', uint32 K, uint32 M, float64 nu, float64 t,
    then the (2K+1, M) coefficient block row-major as interleaved
    (real, imag) float64 pairs.  Disk layout is identical with magic 'SDDF'
    and (Mtheta, P) in place of (K, M).
    """
    if isinstance(field, TorusField):
        magic, a, b = _TORUS_MAGIC, field.K, field.M
    else:
        magic, a, b = _DISK_MAGIC, field.Mtheta, field.P
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIIdd", magic, a, b, nu, field.t))
        inter = np.empty(field.coeffs.shape + (2,), dtype="<f8")
        inter[..., 0] = field.coeffs.real
        inter[..., 1] = field.coeffs.imag
        fh.write(inter.tobytes())


def read_field(path):
    """Inverse of write_field: returns (field, nu)."""
    with open(path, "rb") as fh:
        magic, a, b, nu, t = struct.unpack("<4sIIdd", fh.read(28))
        raw = np.frombuffer(fh.read(), dtype="<f8").reshape(2 * a + 1, b, 2)
        coeffs = raw[..., 0] + 1j * raw[..., 1]
    if magic == _TORUS_MAGIC:
        return TorusField(K=a, M=b, coeffs=coeffs, t=t), nu
    if magic == _DISK_MAGIC:
        return DiskField(Mtheta=a, P=b, coeffs=coeffs, t=t), nu
    raise ValueError(f"unknown field magic {magic!r}")
