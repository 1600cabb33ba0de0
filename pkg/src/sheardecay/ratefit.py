"""Decay-rate extraction and scaling-law fits.

Rates come from least squares on log-norm vs time inside a fixed relative
window; scaling exponents from log-log regression of rate vs diffusivity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientData, UnsupportedFamily, WindowNotReached
from .profiles import ShearProfile

DEFAULT_WINDOW = (math.exp(-1.0), math.exp(-6.0))


@dataclass
class DecayCurve:
    """Norm-vs-time series for one run."""

    times: np.ndarray
    norms: np.ndarray
    kind: str = "l2"

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.norms = np.asarray(self.norms, dtype=float)
        if self.times.ndim != 1 or self.times.shape != self.norms.shape:
            raise ValueError("times and norms must be matching 1d arrays")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if np.any(self.norms < 0):
            raise ValueError("norms must be nonnegative")

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write(f"t,{self.kind}\n")
            for t, v in zip(self.times, self.norms):
                fh.write(f"{t!r},{v!r}\n")


@dataclass
class ScalingFit:
    nus: np.ndarray
    rates: np.ndarray
    gamma: float
    intercept: float
    residual_rms: float
    window: str = ""

    def as_dict(self) -> dict:
        return {"nu_list": list(map(float, self.nus)),
                "rates": list(map(float, self.rates)),
                "gamma_fit": self.gamma, "intercept": self.intercept,
                "residual": self.residual_rms, "window": self.window}


def fit_decay_rate(curve: DecayCurve, window=DEFAULT_WINDOW) -> float:
    """Least-squares decay rate inside a relative-amplitude window.

    The norm is normalized by its initial value; the slope of log norm vs t
    is fitted over samples with normalized value in [window_low, window_high]
    (hi/lo as fractions of the initial norm, defaults e^-1 down to e^-6).
    Raises ``WindowNotReached`` if fewer than 3 samples fall inside.
    """
    hi, lo = max(window), min(window)
    if curve.norms[0] <= 0:
        raise WindowNotReached("initial norm is zero")
    rel = curve.norms / curve.norms[0]
    mask = (rel <= hi) & (rel >= lo) & (rel > 0)
    if int(mask.sum()) < 3:
        raise WindowNotReached(
            f"{int(mask.sum())} samples inside [{lo:.3g}, {hi:.3g}]")
    t = curve.times[mask]
    y = np.log(rel[mask])
    slope = np.polyfit(t, y, 1)[0]
    return -float(slope)


def fit_scaling_exponent(nus, rates) -> ScalingFit:
    """Log-log regression of rate against nu: rate ~ C nu^gamma."""
    nus = np.asarray(nus, dtype=float)
    rates = np.asarray(rates, dtype=float)
    if nus.size < 3:
        raise InsufficientData("need at least 3 nu values")
    if nus.max() / nus.min() < 99.0:
        raise InsufficientData("nu values must span at least 2 decades")
    if np.any(rates <= 0):
        raise InsufficientData("rates must be positive")
    x = np.log(nus)
    y = np.log(rates)
    coeffs = np.polyfit(x, y, 1)
    fitted = np.polyval(coeffs, x)
    rms = float(np.sqrt(np.mean((y - fitted) ** 2)))
    return ScalingFit(nus=nus, rates=rates, gamma=float(coeffs[0]),
                      intercept=float(coeffs[1]), residual_rms=rms)


@dataclass
class ExponentPrediction:
    gamma: float
    log_power: float | None
    note: str


def predicted_exponent(profile: ShearProfile) -> ExponentPrediction:
    """Predicted rate exponent gamma in rate ~ nu^gamma for a family.

    flat-crit profiles get gamma = 1 with a log-correction descriptor
    (rate ~ nu |log nu|^(2/p)).
    """
    fam = profile.family
    if fam == "poly-crit":
        n = profile.params["N"]
        return ExponentPrediction((n + 1.0) / (n + 3.0), None,
                                  f"finite-order critical points, N={n}")
    if fam in ("triangle", "holder-singular"):
        return ExponentPrediction(1.0 / 3.0, None, "derivative bounded below")
    if fam == "flat-crit":
        p = profile.params["p"]
        return ExponentPrediction(1.0, 2.0 / p,
                                  f"flat critical point, log power 2/p with p={p}")
    if fam in ("radial-power", "radial-exp"):
        q = profile.params.get("q", 0)
        n = max(q, profile.max_order())
        return ExponentPrediction((n + 1.0) / (n + 3.0), None,
                                  f"radial shear, n=max(q,N)={n}")
    if fam == "vortex":
        return ExponentPrediction(1.0 / 3.0, None, "singular vortex")
    raise UnsupportedFamily(f"no predicted exponent for {fam}")


@dataclass
class LocalRateReport:
    locations: np.ndarray
    fitted: np.ndarray          # NaN where the window was not reached
    reference: np.ndarray       # modified local rate on the same grid
    ratio: np.ndarray
    flagged: np.ndarray         # fitted < floor * reference
    floor: float


def local_rate_profile(locations, curves, table, floor=0.2,
                       window=DEFAULT_WINDOW) -> LocalRateReport:
    """Fit a decay rate per streamline and compare with the modified rate.

    ``curves`` maps location index to a DecayCurve of the per-location sup
    norm; ``table`` is a TimescaleTable on the same grid.  Locations where
    the fit window is not reached get NaN and are not flagged.
    """
    locations = np.asarray(locations, dtype=float)
    fitted = np.full(locations.shape, math.nan)
    for i, curve in enumerate(curves):
        try:
            fitted[i] = fit_decay_rate(curve, window)
        except WindowNotReached:
            continue
    ref = np.asarray(table.rate_mod, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = fitted / ref
    flagged = np.where(np.isnan(fitted), False, fitted < floor * ref)
    return LocalRateReport(locations=locations, fitted=fitted, reference=ref,
                           ratio=ratio, flagged=flagged, floor=floor)


@dataclass
class LogCorrectionReport:
    nus: np.ndarray
    rates: np.ndarray
    rate_over_nu: np.ndarray
    rate_over_nu_increasing: bool     # as nu decreases
    rate_over_nu08_decreasing: bool   # as nu decreases
    log_slope: float                  # slope of log(rate/nu) vs log|log nu|


def logcorrection_check(nus, rates, p) -> LogCorrectionReport:
    """Trend checks for the flat-critical-point rate nu |log nu|^(2/p).

    Sorts by decreasing nu and reports whether rate/nu increases and
    rate/nu^0.8 decreases along the sequence, plus the regression slope of
    log(rate/nu) against log|log nu| (1.0 for a synthetic nu |log nu|^(2/p)
    sequence when plotted against |log nu|^(2/p), i.e. slope 2/p in
    log|log nu|).
    """
    nus = np.asarray(nus, dtype=float)
    rates = np.asarray(rates, dtype=float)
    if nus.size < 4:
        raise InsufficientData("need at least 4 nu values")
    order = np.argsort(-nus)
    nus = nus[order]
    rates = rates[order]
    r_nu = rates / nus
    r_nu08 = rates / nus ** 0.8
    inc = bool(np.all(np.diff(r_nu) > 0))
    dec = bool(np.all(np.diff(r_nu08) < 0))
    x = np.log(np.abs(np.log(nus)))
    slope = float(np.polyfit(x, np.log(r_nu), 1)[0])
    return LogCorrectionReport(nus=nus, rates=rates, rate_over_nu=r_nu,
                               rate_over_nu_increasing=inc,
                               rate_over_nu08_decreasing=dec,
                               log_slope=slope)
