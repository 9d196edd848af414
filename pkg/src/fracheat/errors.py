"""Exception hierarchy shared by every module.

``ValidationError`` subclasses signal bad input (CLI exit code 2); everything
else derived from ``ComputationError`` signals a numerical failure (exit 1).
"""


class FracHeatError(Exception):
    """Base class for all package errors."""

    code = "error"

    def to_dict(self) -> dict:
        return {"error": self.code, "message": str(self)}


class ValidationError(FracHeatError, ValueError):
    code = "validation"


class ComputationError(FracHeatError, ArithmeticError):
    code = "computation"


class NonPositiveArgument(ValidationError):
    code = "nonpositive-argument"


class ParameterOutOfRange(ValidationError):
    code = "parameter-out-of-range"


class CutoffTooSmall(ValidationError):
    code = "cutoff-too-small"


class SpacingTooCoarse(ValidationError):
    code = "spacing-too-coarse"


class AsymmetricInput(ValidationError):
    code = "asymmetric-input"


class RegionViolation(ValidationError):
    code = "region-violation"


class RegimeMismatch(ValidationError):
    code = "regime-argument-mismatch"


class SingularCovariance(ValidationError):
    code = "singular-sigma"


class DivergentAtOrigin(ValidationError):
    code = "divergent-at-origin"


class ExtentOverflow(ComputationError):
    code = "overflow-of-extent"


class AliasingDetected(ComputationError):
    code = "aliasing"


class TiltOutOfRange(ComputationError):
    code = "tilt-out-of-range"


class SeriesNotConverged(ComputationError):
    code = "series-not-converged"


class BranchDisagreement(ComputationError):
    code = "branch-disagreement"


class QuadratureNotConverged(ComputationError):
    code = "quadrature-not-converged"


class WindowTooSmall(ComputationError):
    code = "window-too-small"


class GridExtentInsufficient(ComputationError):
    code = "grid-extent-insufficient"


class NoConvergence(ComputationError):
    code = "no-convergence"


class BracketNotFound(ComputationError):
    code = "bracket-not-found"


class MinimizerAtBoundary(ComputationError):
    code = "minimizer-at-boundary"


class InsufficientSamples(ComputationError):
    code = "insufficient-samples"
