"""Exception types shared across the package."""


class ShearDecayError(Exception):
    """Base class for all package errors."""


class InvalidParams(ShearDecayError):
    """Profile or operation parameters outside their valid range."""


class UnsupportedFamily(ShearDecayError):
    """Requested profile family is not registered."""


class SingularDerivative(ShearDecayError):
    """Derivative requested at a registered singular point."""


class DegenerateProfile(ShearDecayError):
    """Profile has no usable velocity differential (b constant on an interval)."""


class NoEnhancement(ShearDecayError):
    """Velocity differential is degenerate, no finite dissipation timescale."""


class BracketFailure(ShearDecayError):
    """Root bracketing failed (bounded differential never reaches the target)."""


class StepExitsDomain(ShearDecayError):
    """Local timescale step leaves the radial domain for every valid direction."""


class UnsupportedProfile(ShearDecayError):
    """Operation is undefined for this profile class."""


class ResolutionError(ShearDecayError):
    """Grid or time step too coarse for the requested run."""


class CFLError(ShearDecayError):
    """Time step violates the advective phase accuracy limit."""


class SingularProfileResolution(ShearDecayError):
    """Innermost radial cell under-resolved for a singular profile."""


class ShapeMismatch(ShearDecayError):
    """Discrete measures live on different support grids."""


class MarginalMismatch(ShearDecayError):
    """Product measures do not share the required marginal."""


class UnderSampled(ShearDecayError):
    """Histogram TV estimate would have too few counts per bin."""


class WindowNotReached(ShearDecayError):
    """Decay curve never enters the fitting window."""


class InsufficientData(ShearDecayError):
    """Not enough points or dynamic range for a scaling fit."""


class SolveFailure(ShearDecayError):
    """Linear solve failed (singular system)."""


class ConfigError(ShearDecayError):
    """Experiment configuration is missing or malformed."""
