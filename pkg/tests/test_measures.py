import itertools
import math

import numpy as np
import pytest
from scipy.stats import norm

from sheardecay.errors import MarginalMismatch, ShapeMismatch, UnderSampled
from sheardecay.measures import (
    fiber_tv,
    heat_mass_bound_check,
    marginal_contraction_check,
    maximal_coupling,
    tv_discrete,
    tv_from_samples,
)


def random_equal_marginal_pair(rng, a, b):
    ybar = rng.dirichlet(np.ones(b))
    cond1 = rng.dirichlet(np.ones(a), size=b).T
    cond2 = rng.dirichlet(np.ones(a), size=b).T
    return cond1 * ybar, cond2 * ybar


class TestTvDiscrete:
    def test_identical(self):
        p = np.array([0.2, 0.3, 0.5])
        assert tv_discrete(p, p) == 0.0

    def test_two_point(self):
        assert tv_discrete([0.7, 0.3], [0.4, 0.6]) == pytest.approx(0.3)

    def test_disjoint(self):
        assert tv_discrete([1.0, 0.0], [0.0, 1.0]) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            tv_discrete([1.0], [0.5, 0.5])

    def test_duality_signs_enumeration(self):
        # 0.5 * sup over +-1 test functions of the pairing equals the TV
        rng = np.random.default_rng(0)
        for n in (2, 5, 9, 12):
            p = rng.dirichlet(np.ones(n))
            q = rng.dirichlet(np.ones(n))
            best = max(0.5 * float(np.dot(phi, p - q))
                       for phi in itertools.product((-1.0, 1.0), repeat=n))
            assert best == pytest.approx(tv_discrete(p, q), abs=1e-12)


class TestMaximalCoupling:
    def test_identical_is_diagonal(self):
        p = np.array([0.25, 0.75])
        g = maximal_coupling(p, p)
        assert np.allclose(g, np.diag(p))

    def test_two_point_diagonal_mass(self):
        g = maximal_coupling([0.7, 0.3], [0.4, 0.6])
        assert np.trace(g) == pytest.approx(0.7)
        assert 1 - np.trace(g) == pytest.approx(tv_discrete([0.7, 0.3], [0.4, 0.6]))

    def test_point_masses(self):
        g = maximal_coupling([1.0, 0.0], [0.0, 1.0])
        assert g[0, 1] == pytest.approx(1.0)
        assert g.sum() == pytest.approx(1.0)

    def test_marginals_and_offdiag(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            n = rng.integers(2, 9)
            p = rng.dirichlet(np.ones(n))
            q = rng.dirichlet(np.ones(n))
            g = maximal_coupling(p, q)
            assert np.allclose(g.sum(axis=1), p, atol=1e-12)
            assert np.allclose(g.sum(axis=0), q, atol=1e-12)
            off = g.sum() - np.trace(g)
            assert off == pytest.approx(tv_discrete(p, q), abs=1e-12)

    def test_beats_random_couplings(self):
        # min over random couplings of off-diagonal mass >= TV, met by the
        # maximal coupling
        rng = np.random.default_rng(2)
        for _ in range(100):
            n = 4
            p = rng.dirichlet(np.ones(n))
            q = rng.dirichlet(np.ones(n))
            tv = tv_discrete(p, q)
            best = math.inf
            for _ in range(500):
                # random coupling by Sinkhorn-style scaling of a random matrix
                m = rng.random((n, n))
                for _ in range(60):
                    m *= (p / m.sum(axis=1))[:, None]
                    m *= (q / m.sum(axis=0))[None, :]
                if np.max(np.abs(m.sum(axis=1) - p)) > 1e-9:
                    continue
                best = min(best, m.sum() - np.trace(m))
            assert best >= tv - 1e-9
            g = maximal_coupling(p, q)
            assert g.sum() - np.trace(g) == pytest.approx(tv, abs=1e-12)


class TestFiberTv:
    def test_identical(self):
        rng = np.random.default_rng(3)
        mu, _ = random_equal_marginal_pair(rng, 4, 6)
        lhs, rhs = fiber_tv(mu, mu)
        assert lhs == 0.0 and rhs == 0.0

    def test_random_pairs_equality(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            mu1, mu2 = random_equal_marginal_pair(rng, 5, 7)
            lhs, rhs = fiber_tv(mu1, mu2)
            assert lhs == pytest.approx(rhs, abs=1e-12)

    def test_single_fiber_reduces_to_tv(self):
        rng = np.random.default_rng(5)
        p = rng.dirichlet(np.ones(6))
        q = rng.dirichlet(np.ones(6))
        lhs, _ = fiber_tv(p[:, None], q[:, None])
        assert lhs == pytest.approx(tv_discrete(p, q), abs=1e-14)

    def test_marginal_mismatch(self):
        rng = np.random.default_rng(6)
        mu1, _ = random_equal_marginal_pair(rng, 3, 4)
        mu2 = rng.dirichlet(np.ones(12)).reshape(3, 4)
        with pytest.raises(MarginalMismatch):
            fiber_tv(mu1, mu2)


class TestMarginalContraction:
    def test_resample_x_kernel(self):
        # resample x uniformly, keep y: one-step TV is zero
        a, b = 3, 4
        k = np.zeros((a * b, a * b))
        for x in range(a):
            for y in range(b):
                for xp in range(a):
                    k[x * b + y, xp * b + y] = 1.0 / a
        rng = np.random.default_rng(7)
        mu1, mu2 = random_equal_marginal_pair(rng, a, b)
        rep = marginal_contraction_check(k, mu1, mu2)
        assert rep.eps_computed == pytest.approx(1.0)
        assert rep.tv_after <= 1e-12
        assert rep.satisfied

    def test_identity_kernel(self):
        a, b = 3, 3
        k = np.eye(a * b)
        rng = np.random.default_rng(8)
        mu1, mu2 = random_equal_marginal_pair(rng, a, b)
        rep = marginal_contraction_check(k, mu1, mu2)
        assert rep.eps_computed == pytest.approx(0.0)
        assert rep.tv_after == pytest.approx(rep.tv_before, abs=1e-12)
        assert rep.satisfied

    def test_random_kernels(self):
        rng = np.random.default_rng(9)
        a, b = 4, 4
        for _ in range(200):
            k = rng.random((a * b, a * b))
            k /= k.sum(axis=1, keepdims=True)
            mu1, mu2 = random_equal_marginal_pair(rng, a, b)
            rep = marginal_contraction_check(k, mu1, mu2)
            assert rep.satisfied, rep


class TestTvFromSamples:
    def test_identical_sets(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal(10000)
        r = tv_from_samples(x, x, bins=50)
        assert r.estimate == 0.0

    def test_gaussian_shift_oracle(self):
        # analytic TV between N(0,1) and N(1,1) is 2 Phi(1/2) - 1
        rng = np.random.default_rng(11)
        n = 1_000_000
        a = rng.standard_normal(n)
        b = rng.standard_normal(n) + 1.0
        r = tv_from_samples(a, b, bins=200, range_=(-6.0, 7.0))
        oracle = 2 * norm.cdf(0.5) - 1
        assert oracle == pytest.approx(0.3829, abs=2e-4)
        assert r.estimate == pytest.approx(oracle, abs=0.01)

    def test_disjoint_supports(self):
        a = np.zeros(5000) + 0.1
        b = np.zeros(5000) + 0.9
        r = tv_from_samples(a, b, bins=8, range_=(0.0, 1.0))
        assert r.estimate == 1.0

    def test_undersampled(self):
        with pytest.raises(UnderSampled):
            tv_from_samples(np.arange(30.0), np.arange(30.0) + 0.5, bins=1000)

    def test_wrapping_contracts(self):
        # projecting R-supported samples onto the torus cannot increase the
        # estimate when bins are commensurate with the wrap
        rng = np.random.default_rng(12)
        n = 200_000
        a = rng.standard_normal(n) * 0.7
        b = rng.standard_normal(n) * 0.7 + 0.8
        m = 25  # bins per unit length
        lo = math.floor(min(a.min(), b.min()))
        hi = math.ceil(max(a.max(), b.max()))
        full = tv_from_samples(a, b, bins=(hi - lo) * m, range_=(float(lo), float(hi)))
        wrapped = tv_from_samples(a % 1.0, b % 1.0, bins=m, range_=(0.0, 1.0))
        assert wrapped.estimate <= full.estimate + 1e-12


class TestHeatMassBound:
    def test_r4_bound_value(self):
        est, se, bound = heat_mass_bound_check(1e-3, 1.0, 0.3, 4.0, 100_000, seed=1)
        assert bound == pytest.approx(math.sqrt(2) * math.exp(-2.0), rel=1e-12)
        assert bound == pytest.approx(0.19139, abs=1e-4)
        assert est <= bound + 3 * se

    def test_r2_gaussian_tail(self):
        # small nu t: torus wrap negligible, estimate ~ 2(1 - Phi(sqrt 2))
        est, se, bound = heat_mass_bound_check(1e-5, 1.0, 0.5, 2.0, 400_000, seed=2)
        oracle = 2 * (1 - norm.cdf(math.sqrt(2.0)))
        assert oracle == pytest.approx(0.157, abs=5e-4)
        assert est == pytest.approx(oracle, abs=4 * se + 1e-4)
        assert est <= bound + 3 * se

    def test_t_zero(self):
        est, se, bound = heat_mass_bound_check(1e-3, 0.0, 0.1, 3.0, 1000, seed=3)
        assert est == 0.0

    def test_deterministic(self):
        a = heat_mass_bound_check(1e-3, 2.0, 0.2, 2.0, 10_000, seed=42)
        b = heat_mass_bound_check(1e-3, 2.0, 0.2, 2.0, 10_000, seed=42)
        assert a == b
