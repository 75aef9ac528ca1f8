"""Exception types shared across the package."""


class SinkbridgeError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(SinkbridgeError):
    pass


class NonPositiveMargin(SinkbridgeError):
    pass


class NonPositiveTotal(SinkbridgeError):
    pass


class MaxIterationsError(SinkbridgeError):
    """Sinkhorn did not reach the requested tolerance.

    Signals non-scalable or near-degenerate input.  The partial state is
    attached so callers probing convergence (e.g. scalability heuristics)
    can inspect how far the iteration got.
    """

    def __init__(self, message, alpha=None, beta=None, iterations=None, margin_error=None):
        super().__init__(message)
        self.alpha = alpha
        self.beta = beta
        self.iterations = iterations
        self.margin_error = margin_error


class GridMismatch(SinkbridgeError):
    pass


class ZeroEntry(SinkbridgeError):
    pass


class ZeroPatternMismatch(SinkbridgeError):
    pass


class ZeroAlignment(SinkbridgeError):
    pass


class TooLargeForExact(SinkbridgeError):
    pass


class UnboundedCost(SinkbridgeError):
    pass


class BernoulliMeanOutOfRange(SinkbridgeError):
    pass


class InfeasibleSpec(SinkbridgeError):
    pass


class FlatnessViolated(SinkbridgeError):
    pass


class LeftHalfPlane(SinkbridgeError):
    """Dyson iterate escaped the upper half-plane (damping fault)."""


class EigensolverFailure(SinkbridgeError):
    pass


class RankDeficiencyUnexpected(SinkbridgeError):
    pass


class ConfigError(SinkbridgeError):
    """Invalid or unknown fields in a CLI/experiment configuration."""
