import math

import numpy as np
import pytest

from sheardecay.errors import NoEnhancement, StepExitsDomain, UnsupportedProfile
from sheardecay.profiles import VelocityDifferential, make_profile, minimal_differential
from sheardecay.timescales import (
    TimescaleTable,
    build_table,
    check_sandwich_bounds,
    critical_rate,
    global_timescale,
    local_rate_map,
    local_timescale,
    rate_bar,
)


def pure_power_diff(exponent, c=1.0, h0=0.25):
    # synthetic phi = c h^exponent; iota is never consulted
    return VelocityDifferential(h0=h0, shape="power", exponent=exponent, c=c,
                                profile=None)


class TestGlobalTimescale:
    def test_square_phi(self):
        # t * (nu t) = 1 => t = nu^{-1/2}
        assert global_timescale(pure_power_diff(2.0), 1e-4) == pytest.approx(100.0, rel=1e-8)

    def test_linear_phi(self):
        assert global_timescale(pure_power_diff(1.0), 1e-3) == pytest.approx(10.0, rel=1e-8)

    def test_degenerate_phi(self):
        with pytest.raises(NoEnhancement):
            global_timescale(pure_power_diff(2.0, c=0.0), 1e-3)

    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    @pytest.mark.parametrize("nu", [1e-2, 1e-3, 1e-4, 1e-5, 1e-6])
    def test_pure_power_scaling_exact(self, n, nu):
        # closed form: t = c^{-2/(n+3)} nu^{-(n+1)/(n+3)}
        c = 0.7
        t = global_timescale(pure_power_diff(n + 1.0, c=c), nu)
        expected = c ** (-2.0 / (n + 3)) * nu ** (-(n + 1.0) / (n + 3))
        assert t == pytest.approx(expected, rel=1e-8)

    def test_root_residual(self):
        for fam, params in [("poly-crit", {"N": 1}), ("triangle", {}),
                            ("flat-crit", {"p": 2.0})]:
            d = minimal_differential(make_profile(fam, params))
            for nu in (1e-3, 1e-5):
                t = global_timescale(d, nu)
                assert abs(t * d.phi(math.sqrt(nu * t)) - 1.0) <= 1e-9

    def test_nu_T_vanishes(self):
        # nu * T_nu strictly decreases as nu halves
        d = minimal_differential(make_profile("poly-crit", {"N": 1}))
        nus = [1e-3 / 2 ** k for k in range(8)]
        prods = [nu * global_timescale(d, nu) for nu in nus]
        assert all(a > b for a, b in zip(prods, prods[1:]))

    def test_flat_point_prediction(self):
        # T_nu <= 2^{2/p} nu^{-1} |log nu|^{-2/p} at desk-scale nu
        p = 2.0
        d = minimal_differential(make_profile("flat-crit", {"p": p}))
        for nu in (1e-3, 1e-4, 1e-5, 1e-6):
            t = global_timescale(d, nu)
            bound = 2 ** (2 / p) / (nu * abs(math.log(nu)) ** (2 / p))
            assert t <= bound


class TestLocalTimescale:
    def test_linear_slope_one(self):
        # |b'| = 1 everywhere on the triangle: t sqrt(nu t) = 1
        p = make_profile("triangle", {})
        assert local_timescale(p, 1e-3, 0.25) == pytest.approx(10.0, rel=1e-8)

    def test_sin_critical_point_sandwich(self):
        p = make_profile("poly-crit", {"N": 1})
        nu = 1e-4
        t = local_timescale(p, nu, 0.25)
        ref = nu ** -0.5
        assert ref / 10 <= t <= ref * 10
        # direct residual
        s = p.iota(0.25)
        assert abs(t * p.differential(0.25, s, math.sqrt(nu * t)) - 1.0) <= 1e-9

    def test_tie_break_smaller_root(self):
        # both directions valid and symmetric at y=0 for sin
        p = make_profile("poly-crit", {"N": 1})
        nu = 1e-4
        t = local_timescale(p, nu, 0.0)
        roots = []
        from sheardecay.timescales import _local_root
        for s in (+1, -1):
            roots.append(_local_root(p, nu, 0.0, s))
        assert t == pytest.approx(min(roots), rel=1e-12)

    def test_monotone_in_nu(self):
        p = make_profile("poly-crit", {"N": 2})
        for y in (0.1, 0.25, 0.4):
            ts = [local_timescale(p, nu, y) for nu in (1e-3, 1e-4, 1e-5)]
            assert ts[0] < ts[1] < ts[2]

    def test_flat_window_freezing(self):
        p = make_profile("flat-crit", {"p": 2.0})
        nu = 1e-4
        y1 = p.params["y1"]
        t_center = local_timescale(p, nu, y1)
        assert local_timescale(p, nu, y1 + 0.01) == pytest.approx(t_center, rel=1e-12)
        assert local_timescale(p, nu, y1 - 0.05) == pytest.approx(t_center, rel=1e-12)
        # frozen value solves t * exp(-1/(nu t)^(p/2)) = 1 at the flat point
        h = math.sqrt(nu * t_center)
        assert t_center * math.exp(-h ** -2.0) == pytest.approx(1.0, abs=1e-9)

    def test_radial_origin(self):
        # b = r^2: |b(h) - b(0)| = h^2, so t nu t = 1
        p = make_profile("radial-power", {"q": 1})
        assert local_timescale(p, 1e-4, 0.0) == pytest.approx(100.0, rel=1e-8)

    def test_disk_step_exits_domain_fallback(self):
        # near the boundary the inward direction is used
        p = make_profile("radial-power", {"q": 1})
        t = local_timescale(p, 1e-4, 0.95)
        assert t > 0

    def test_vortex_disk(self):
        p = make_profile("vortex", {"alpha": 1.0})
        nu = 1e-4
        t = local_timescale(p, nu, 0.5)
        # |b'(1/2)| = 4: t_nu ~ nu^{-1/3} |b'|^{-2/3}
        ref = nu ** (-1 / 3) * 4.0 ** (-2 / 3)
        assert ref / 5 <= t <= ref * 5


class TestRateMaps:
    def test_sin_rates(self):
        p = make_profile("poly-crit", {"N": 1})
        nu = 1e-4
        assert rate_bar(p, nu, 0.25) == pytest.approx(1e-2)
        expect = nu ** (1 / 3) * (2 * math.pi) ** (2 / 3)
        assert rate_bar(p, nu, 0.0) == pytest.approx(expect, rel=1e-12)
        assert expect == pytest.approx(0.1580, rel=0.01)

    def test_rate_mod_definition(self):
        p = make_profile("poly-crit", {"N": 1})
        nu = 1e-4
        tab = local_rate_map(p, nu, np.linspace(0, 1, 41, endpoint=False))
        n = p.max_order()
        lam_min = nu ** ((n + 1) / (n + 3))
        expect = tab.rate_bar / (1 + abs(math.log(nu)) ** (4 * n)) + lam_min
        assert np.allclose(tab.rate_mod, expect, rtol=1e-12)

    def test_flat_crit_unsupported(self):
        p = make_profile("flat-crit", {"p": 2.0})
        with pytest.raises(UnsupportedProfile):
            local_rate_map(p, 1e-4, [0.1, 0.2])

    def test_build_table_flat_has_nan_rates(self):
        p = make_profile("flat-crit", {"p": 2.0})
        tab = build_table(p, 1e-4, [0.2, 0.3, 0.4])
        assert np.all(np.isnan(tab.rate_bar))
        assert np.all(tab.t_local > 0)

    def test_table_invariants(self):
        p = make_profile("poly-crit", {"N": 1})
        nu = 1e-4
        tab = build_table(p, nu, np.linspace(0, 1, 33, endpoint=False))
        assert np.allclose(tab.ell_local ** 2, nu * tab.t_local, rtol=1e-12)
        assert tab.T_global >= np.max(tab.t_local) * (1 - 1e-9)

    def test_holder_singular_branch(self):
        alpha = 0.5
        p = make_profile("holder-singular", {"alpha": alpha})
        nu = 1e-4
        inner = nu ** (1 / (alpha + 2))
        assert rate_bar(p, nu, inner * 0.5) == pytest.approx(nu ** (alpha / (alpha + 2)))
        d = 5 * inner
        assert d < p.h0
        assert rate_bar(p, nu, d) == pytest.approx(
            nu ** (1 / 3) * d ** (2 * (alpha - 1) / 3))

    def test_csv_roundtrip(self, tmp_path):
        p = make_profile("poly-crit", {"N": 1})
        tab = build_table(p, 1e-3, [0.1, 0.2, 0.3])
        path = tmp_path / "table.csv"
        tab.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0].startswith("# nu=0.001")
        assert lines[1] == "location,t_local,ell_local,rate_bar,rate_mod"
        assert len(lines) == 5


class TestSandwich:
    def test_sin_constants_finite_and_stable(self):
        p = make_profile("poly-crit", {"N": 1})
        grid = np.linspace(0, 1, 101, endpoint=False)
        r1 = check_sandwich_bounds(p, 1e-4, grid)
        r2 = check_sandwich_bounds(p, 1e-5, grid)
        for a, b in [(r1.c_bprime_ratio, r2.c_bprime_ratio),
                     (r1.c_tnu, r2.c_tnu), (r1.c_interval, r2.c_interval),
                     (r1.c_weight, r2.c_weight)]:
            assert np.isfinite(a) and np.isfinite(b)
            assert max(a, b) / min(a, b) <= 2.0

    def test_triangle_bprime_ratio_exactly_one(self):
        p = make_profile("triangle", {})
        grid = np.linspace(0.05, 0.45, 21)
        r = check_sandwich_bounds(p, 1e-4, grid)
        assert r.c_bprime_ratio == pytest.approx(1.0)

    def test_radial_power_tnu_constant(self):
        p = make_profile("radial-power", {"q": 1})
        grid = np.linspace(0.1, 0.85, 31)
        r = check_sandwich_bounds(p, 1e-4, grid)
        assert r.c_tnu <= 10.0

    def test_flat_constant_reported(self):
        p = make_profile("flat-crit", {"p": 2.0})
        grid = np.linspace(0.45, 0.55, 11)
        r = check_sandwich_bounds(p, 1e-4, grid)
        assert np.isfinite(r.c_flat) and r.c_flat > 0
