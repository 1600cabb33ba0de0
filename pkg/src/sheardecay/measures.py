"""Exact total-variation machinery on finite spaces and sample-based TV.

Probabilist's normalization throughout: distances live in [0, 1].  The
finite-space pieces (maximal coupling, fiber decomposition, marginal
contraction) use dense arithmetic on grids small enough to brute force.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import MarginalMismatch, ShapeMismatch, UnderSampled

_MASS_TOL = 1e-12


def _check_weights(w, name):
    w = np.asarray(w, dtype=float)
    if np.any(w < -_MASS_TOL):
        raise ValueError(f"{name} has negative mass")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"{name} mass is {w.sum()}, not 1")
    return w


def tv_discrete(p, q) -> float:
    """Half the L1 distance between two weight vectors on a common grid."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ShapeMismatch(f"shapes {p.shape} vs {q.shape}")
    return 0.5 * float(np.abs(p - q).sum())


def maximal_coupling(p, q) -> np.ndarray:
    """Joint weights with marginals (p, q) and minimal off-diagonal mass.

    Diagonal carries min(p, q); the leftover masses are coupled independently.
    Off-diagonal mass equals tv_discrete(p, q) exactly.
    """
    p = _check_weights(p, "p")
    q = _check_weights(q, "q")
    if p.shape != q.shape:
        raise ShapeMismatch(f"shapes {p.shape} vs {q.shape}")
    n = p.size
    common = np.minimum(p, q)
    gamma = np.zeros((n, n))
    np.fill_diagonal(gamma, common)
    rest = 1.0 - common.sum()
    if rest > _MASS_TOL:
        gamma += np.outer(p - common, q - common) / rest
    return gamma


def fiber_tv(mu1, mu2) -> tuple[float, float]:
    """TV of two product-space measures and its fiberwise decomposition.

    Inputs are weight arrays of shape (a, b) over X x Y with equal
    Y-marginals.  Returns (joint TV, sum over y of ybar(y) * TV of the
    conditionals); the two agree to within accumulation error.
    """
    mu1 = _check_weights(mu1, "mu1")
    mu2 = _check_weights(mu2, "mu2")
    if mu1.shape != mu2.shape or mu1.ndim != 2:
        raise ShapeMismatch("need two equal-shape 2d weight arrays")
    ybar1 = mu1.sum(axis=0)
    ybar2 = mu2.sum(axis=0)
    if np.max(np.abs(ybar1 - ybar2)) > 1e-10:
        raise MarginalMismatch("Y-marginals differ")
    lhs = 0.5 * float(np.abs(mu1 - mu2).sum())
    rhs = 0.0
    for j in range(mu1.shape[1]):
        w = ybar1[j]
        if w <= _MASS_TOL:
            continue
        rhs += w * tv_discrete(mu1[:, j] / w, mu2[:, j] / w)
    assert abs(lhs - rhs) <= 1e-10, (lhs, rhs)
    return lhs, rhs


@dataclass
class ContractionReport:
    eps_computed: float
    tv_before: float
    tv_after: float
    bound: float
    satisfied: bool


def marginal_contraction_check(kernel, mu1, mu2) -> ContractionReport:
    """Check the marginal contraction inequality for a product-space kernel.

    ``kernel`` is row-stochastic of shape (a*b, a*b) acting on states indexed
    (x, y) -> x*b + y.  The fiberwise bound
    eps = 1 - sup_{x, xt, y} TV(delta_(x,y) P, delta_(xt,y) P) is computed
    from the kernel, and the report verifies
    TV(mu1 P, mu2 P) <= (1 - eps) TV(mu1, mu2) + 1e-12.
    """
    mu1 = _check_weights(mu1, "mu1")
    mu2 = _check_weights(mu2, "mu2")
    if mu1.shape != mu2.shape or mu1.ndim != 2:
        raise ShapeMismatch("need two equal-shape 2d weight arrays")
    a, b = mu1.shape
    kernel = np.asarray(kernel, dtype=float)
    if kernel.shape != (a * b, a * b):
        raise ShapeMismatch(f"kernel must be ({a * b}, {a * b})")
    if np.max(np.abs(kernel.sum(axis=1) - 1.0)) > 1e-9:
        raise ValueError("kernel rows must sum to 1")
    if np.max(np.abs(mu1.sum(axis=0) - mu2.sum(axis=0))) > 1e-10:
        raise MarginalMismatch("Y-marginals differ")

    worst = 0.0
    for y in range(b):
        rows = kernel[[x * b + y for x in range(a)]]
        for i in range(a):
            for j in range(i + 1, a):
                worst = max(worst, 0.5 * float(np.abs(rows[i] - rows[j]).sum()))
    eps = 1.0 - worst

    before = tv_discrete(mu1.ravel(), mu2.ravel())
    after = tv_discrete(mu1.ravel() @ kernel, mu2.ravel() @ kernel)
    bound = (1.0 - eps) * before + 1e-12
    return ContractionReport(eps_computed=eps, tv_before=before, tv_after=after,
                             bound=bound, satisfied=bool(after <= bound))


@dataclass
class HistogramTV:
    estimate: float
    bins: int
    occupied_bins: int
    min_expected_per_bin: float


def tv_from_samples(samples_a, samples_b, bins, range_=None) -> HistogramTV:
    """Histogram TV estimate between two sample sets on a common domain.

    Upwardly biased (histogram discretization only adds mass mismatch).
    Raises ``UnderSampled`` when the smaller sample would put fewer than 20
    expected counts on each occupied bin.
    """
    a = np.asarray(samples_a, dtype=float).ravel()
    b = np.asarray(samples_b, dtype=float).ravel()
    if range_ is None:
        lo = min(a.min(), b.min())
        hi = max(a.max(), b.max())
        pad = 1e-9 * max(1.0, abs(hi - lo))
        range_ = (lo - pad, hi + pad)
    ca, edges = np.histogram(a, bins=bins, range=range_)
    cb, _ = np.histogram(b, bins=bins, range=range_)
    occupied = int(np.count_nonzero(ca + cb))
    min_expected = min(a.size, b.size) / max(occupied, 1)
    if min_expected < 20.0:
        raise UnderSampled(
            f"{occupied} occupied bins for {min(a.size, b.size)} samples")
    est = 0.5 * float(np.abs(ca / a.size - cb / b.size).sum())
    return HistogramTV(estimate=est, bins=bins, occupied_bins=occupied,
                       min_expected_per_bin=min_expected)


def heat_mass_bound_check(nu, t, y0, big_r, n_paths, seed) -> tuple[float, float, float]:
    """Monte Carlo check of the periodized heat-kernel tail bound.

    Samples the y-diffusion endpoint exactly (y_t = y0 + sqrt(2 nu t) Z,
    wrapped), estimates the mass at torus distance >= R sqrt(nu t) from y0,
    and returns (estimate, standard error, bound) with
    bound = sqrt(2) exp(-R^2 / 8).
    """
    if big_r < 1.0:
        raise ValueError("R must be >= 1")
    bound = math.sqrt(2.0) * math.exp(-big_r ** 2 / 8.0)
    if t == 0.0:
        return 0.0, 0.0, bound
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    z = rng.standard_normal(int(n_paths))
    y = (y0 + math.sqrt(2.0 * nu * t) * z) % 1.0
    d = np.abs(y - y0 % 1.0)
    d = np.minimum(d, 1.0 - d)
    hits = d >= big_r * math.sqrt(nu * t)
    est = float(hits.mean())
    se = math.sqrt(max(est * (1.0 - est), 1e-300) / n_paths)
    return est, se, bound
