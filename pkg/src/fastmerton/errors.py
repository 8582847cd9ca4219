"""Exception hierarchy shared by all solver and simulation modules."""


class FastMertonError(Exception):
    """Base class for all package-specific failures."""


class NonPositiveVolatility(FastMertonError):
    """sigma(y) <= 0 where a positive volatility is required."""


class NonconvergedInverse(FastMertonError):
    """Root bracketing for the inverse marginal utility failed."""


class DegenerateSecondDerivative(FastMertonError):
    """|U''(x)| underflowed while evaluating the risk tolerance."""


class NonNormalizable(FastMertonError):
    """Unnormalized invariant density has zero or infinite mass."""


class DensityUnderflow(FastMertonError):
    """Invariant density fell below representable range inside the grid."""


class MonotonicityLoss(FastMertonError):
    """Heat surface lost strict monotonicity in the space variable."""


class BoundaryTooNarrow(FastMertonError):
    """Transformed grid does not bracket the requested wealth range."""


class InversionFailure(FastMertonError):
    """Wealth map x(z, t) could not be inverted."""


class OutOfRange(FastMertonError):
    """Query point lies outside the tabulated grid."""


class StencilOverflow(FastMertonError):
    """Finite-difference stencil does not fit inside the grid."""


class ConvexityLoss(FastMertonError):
    """Direct HJB march detected M_xx >= 0; the scheme is invalid."""


class StepTooCoarse(FastMertonError):
    """Simulation step dt exceeds epsilon/20 and cannot resolve the factor."""


class NumericBlowup(FastMertonError):
    """A simulated path exceeded the overflow guard."""


class NoiseDominated(FastMertonError):
    """Residuals are not significant enough for a slope fit."""


class InconclusiveNoise(FastMertonError):
    """Paired strategy differences are indistinguishable from noise."""


class CFLViolation(FastMertonError):
    """Explicitly treated terms violate their stability restriction."""


class InstabilityDetected(FastMertonError):
    """PDE max-norm grew between backward steps."""


class ConfigError(FastMertonError):
    """Experiment configuration failed schema validation."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")
