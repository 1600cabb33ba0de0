import math

import numpy as np
import pytest

from sheardecay.pde import TorusField, evolve_torus
from sheardecay.profiles import make_profile, minimal_differential
from sheardecay.sde import (
    boundary_escape_test,
    feynman_kac,
    hitting_time_bvp,
    hitting_time_flat_oracle,
    hitting_time_radial_oracle,
    simulate_radial,
    simulate_torus,
    torus_y_marginal_ks,
    variance_diagnostic,
)
from sheardecay.timescales import global_timescale, local_timescale

TWO_PI = 2 * math.pi


def constant_torus_profile(value):
    ys = np.linspace(0, 1, 65)
    return make_profile("custom-table", {"y": ys, "b": np.full_like(ys, value)})


def constant_disk_profile(value):
    rs = np.linspace(0, 1, 65)
    return make_profile("custom-table", {"y": rs, "b": np.full_like(rs, value),
                                         "kind": "radial-disk"})


class TestSimulateTorus:
    def test_pure_diffusion_variance(self):
        prof = constant_torus_profile(0.0)
        nu, t = 1e-3, 2.0
        ens = simulate_torus(prof, nu, (0.3, 0.7), t, dt=0.2, n_paths=100_000,
                             seed=12)
        var = ens.x[-1].var(ddof=1)
        target = 2 * nu * t
        se_var = target * math.sqrt(2 / ens.n_paths)
        assert abs(var - target) <= 4 * se_var

    def test_constant_drift_exact(self):
        prof = constant_torus_profile(1.0)
        ens = simulate_torus(prof, 0.0, (0.0, 0.5), 3.0, dt=0.01, n_paths=8,
                             seed=1)
        assert np.allclose(ens.x[-1], -3.0, atol=1e-12)
        assert np.allclose(ens.y[-1], 0.5, atol=1e-15)

    def test_shear_spreads_x(self):
        prof = make_profile("poly-crit", {"N": 1})
        nu = 1e-4
        T = global_timescale(minimal_differential(prof), nu)
        ens = simulate_torus(prof, nu, (0.0, 0.0), T, dt=T / 1000,
                             n_paths=2000, seed=7)
        spread = ens.x[-1].std(ddof=1)
        assert spread > 10 * math.sqrt(2 * nu * T)

    def test_deterministic_and_prefix_stable(self):
        prof = make_profile("triangle", {})
        a = simulate_torus(prof, 1e-3, (0.1, 0.2), 1.0, dt=0.01, n_paths=50,
                           seed=99)
        b = simulate_torus(prof, 1e-3, (0.1, 0.2), 1.0, dt=0.01, n_paths=50,
                           seed=99)
        assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)
        c = simulate_torus(prof, 1e-3, (0.1, 0.2), 1.0, dt=0.01, n_paths=80,
                           seed=99)
        assert np.array_equal(c.x[:, :50], a.x)
        assert np.array_equal(c.y[:, :50], a.y)

    def test_y_marginal_heat_kernel_ks(self):
        ks, crit = torus_y_marginal_ks(1e-3, 5.0, 0.4, 100_000, seed=3)
        assert ks <= 3 * crit


class TestSimulateRadial:
    def test_bessel_second_moment(self):
        prof = constant_disk_profile(0.0)
        nu, t, r0 = 1e-3, 1.0, 0.4
        ens = simulate_radial(prof, nu, (r0, 0.0), t, dt=0.05,
                              n_paths=100_000, seed=5)
        m2 = (ens.r[-1] ** 2).mean()
        target = r0 ** 2 + 4 * nu * t
        se = (ens.r[-1] ** 2).std(ddof=1) / math.sqrt(ens.n_paths)
        assert abs(m2 - target) <= 4 * se

    def test_rigid_rotation_mean_angle(self):
        omega = 1.5
        prof = constant_disk_profile(omega)
        ens = simulate_radial(prof, 1e-3, (0.5, 1.0), 2.0, dt=0.01,
                              n_paths=20_000, seed=6)
        drift_removed = ens.theta[-1] + omega * 2.0 - 1.0
        se = drift_removed.std(ddof=1) / math.sqrt(ens.n_paths)
        assert abs(drift_removed.mean()) <= 4 * se

    def test_radial_positivity_structural(self):
        prof = make_profile("vortex", {"alpha": 1.0})
        ens = simulate_radial(prof, 1e-3, (0.05, 0.0), 2.0, dt=0.001,
                              n_paths=500, seed=8)
        assert np.min(ens.r) >= 0.0

    def test_reflection_keeps_disk(self):
        prof = constant_disk_profile(0.0)
        ens = simulate_radial(prof, 5e-3, (0.9, 0.0), 5.0, dt=0.005,
                              n_paths=2000, seed=9, reflect=True)
        assert np.max(ens.r) <= 1.0 + 1e-12


class TestFeynmanKac:
    def test_constant_function(self):
        prof = constant_torus_profile(0.0)
        ens = simulate_torus(prof, 1e-3, (0.2, 0.3), 1.0, dt=0.1, n_paths=500,
                             seed=10)
        est, se = feynman_kac(ens, lambda x, y: np.ones_like(x))
        assert est == 1.0 and se == 0.0

    def test_time_zero(self):
        prof = constant_torus_profile(0.0)
        ens = simulate_torus(prof, 1e-3, (0.2, 0.3), 0.0, dt=0.1, n_paths=64,
                             seed=11)
        f0 = lambda x, y: np.cos(TWO_PI * x) * np.sin(TWO_PI * y)
        est, se = feynman_kac(ens, f0)
        assert est == pytest.approx(math.cos(TWO_PI * 0.2) * math.sin(TWO_PI * 0.3),
                                    abs=1e-12)

    def test_matches_pde_probe(self):
        # PDE solver as the oracle at a few probe points
        prof = make_profile("poly-crit", {"N": 1})
        nu = 1e-3
        T = global_timescale(minimal_differential(prof), nu)
        f0 = TorusField.single_mode(1, 128, 1, lambda y: np.full_like(y, 0.5))
        snaps, _ = evolve_torus(prof, nu, f0, T, dt=0.008)
        phys = snaps[-1].physical(nx=256)
        fn = lambda x, y: np.cos(TWO_PI * x)
        misses = 0
        for (xi, yi) in [(0.1, 0.3), (0.45, 0.15), (0.7, 0.8), (0.25, 0.55)]:
            ens = simulate_torus(prof, nu, (xi, yi), T, dt=T / 2000,
                                 n_paths=4000, seed=17)
            est, se = feynman_kac(ens, fn)
            ref = phys[int(round(xi * 256)) % 256, int(round(yi * 128)) % 128]
            if abs(est - ref) > 3 * se:
                misses += 1
        assert misses <= 1


class TestVarianceDiagnostic:
    def test_zero_shear_reference(self):
        prof = constant_torus_profile(0.0)
        ens = simulate_torus(prof, 1e-3, (0.0, 0.5), 1.0, dt=0.02,
                             n_paths=5000, seed=13)
        ys = np.linspace(0, 1, 65)
        diff = minimal_differential(make_profile("triangle", {}))
        rep = variance_diagnostic(ens, diff)
        # diffusive spread only
        assert rep.std_x[-1] == pytest.approx(math.sqrt(2e-3), rel=0.1)

    def test_triangle_shear_dominates(self):
        prof = make_profile("triangle", {})
        diff = minimal_differential(prof)
        nu = 1e-4
        T = global_timescale(diff, nu)
        ens = simulate_torus(prof, nu, (0.0, 0.2), T, dt=T / 800,
                             n_paths=3000, seed=14, n_records=80)
        rep = variance_diagnostic(ens, diff, constant=0.1)
        sel = (ens.times >= T / 4) & (ens.times <= T)
        assert np.all(rep.std_x[sel] >= 0.1 * rep.reference[sel])
        assert rep.first_exceed is not None and rep.first_exceed <= T / 4

    def test_critical_point_crossing_time(self):
        prof = make_profile("poly-crit", {"N": 1})
        nu = 1e-4
        t_loc = local_timescale(prof, nu, 0.25)
        ens = simulate_torus(prof, nu, (0.0, 0.25), 4 * t_loc, dt=t_loc / 400,
                             n_paths=3000, seed=15, n_records=160)
        std = ens.x.std(axis=1, ddof=1)
        crossing = None
        for i, s in enumerate(std):
            if s >= 1.0:
                crossing = ens.times[i]
                break
        assert crossing is not None
        assert t_loc / 4 <= crossing <= 4 * t_loc


class TestBoundaryEscape:
    def test_basic_floor(self):
        res = boundary_escape_test(1e-3, 0.1, n_paths=20_000, seed=20, c_mult=2.0)
        assert res.probability > 0.02
        assert res.probability > 0.2  # typical value is ~0.4

    def test_nu_invariance_at_fixed_ell(self):
        r1 = boundary_escape_test(1e-3, 0.1, n_paths=40_000, seed=21, c_mult=2.0)
        r2 = boundary_escape_test(1e-4, 0.1, n_paths=40_000, seed=22, c_mult=2.0)
        joint = math.hypot(r1.se, r2.se)
        assert abs(r1.probability - r2.probability) <= 3 * joint

    def test_c_mult_zero(self):
        res = boundary_escape_test(1e-3, 0.1, n_paths=100, seed=23, c_mult=0.0)
        assert res.probability == 0.0


class TestHittingTime:
    def test_flat_oracle_match(self):
        nu, ell = 1e-3, 0.1
        res = hitting_time_bvp(nu, ell, 256, include_curvature=False)
        oracle = hitting_time_flat_oracle(res.grid, ell, nu)
        assert np.max(np.abs(res.psi - oracle)) < 1e-6 * np.max(oracle)

    def test_radial_oracle_match(self):
        nu, ell = 1e-3, 0.1
        res = hitting_time_bvp(nu, ell, 512)
        oracle = hitting_time_radial_oracle(res.grid, ell, nu)
        assert np.max(np.abs(res.psi - oracle)) < 2e-4 * np.max(oracle)

    def test_dirichlet_end_exact(self):
        res = hitting_time_bvp(1e-3, 0.05, 128)
        assert res.psi[0] == 0.0

    def test_mc_agreement(self):
        nu, ell = 1e-3, 0.1
        res = hitting_time_bvp(nu, ell, 256, n_mc=4000, seed=31, mc_r0=1.0)
        psi_at_1 = res.psi[-1]
        assert res.mc_mean == pytest.approx(psi_at_1, abs=3 * res.mc_se)
