"""Exception types shared across the package.

Every error raised on a violated precondition or an unreachable numerical
target derives from CircleBreakError so callers can catch the package's
failures in one clause. CLI config problems use ConfigError (exit code 2).
"""


class CircleBreakError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(CircleBreakError):
    """Invalid configuration (bad family name, malformed JSON, bad ranges)."""


class NotABreakPoint(CircleBreakError):
    """jump_ratio() was asked about a point where the one-sided derivatives agree."""


class RootNotBracketed(CircleBreakError):
    """A bracketed root solve was started on an interval with no sign change."""


class DepthUnreliable(CircleBreakError):
    """Continued-fraction expansion hit the precision floor before the requested depth.

    Carries the reliable partial expansion in .partial (list of quotients).
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = list(partial) if partial is not None else []


class ToleranceNotReached(CircleBreakError):
    """An iterative estimate stopped before meeting the requested tolerance.

    Carries the best estimate in .best and its error bound in .error.
    """

    def __init__(self, message, best=None, error=None):
        super().__init__(message)
        self.best = best
        self.error = error


class BracketFailure(CircleBreakError):
    """Offset tuning could not bracket the target rotation number."""


class PrecisionExhausted(CircleBreakError):
    """Partition points collide at the working precision; raise dps and retry."""


class OrbitHitsBreak(CircleBreakError):
    """An orbit landed exactly on a break point where a two-sided quantity was needed."""


class OrbitOfBreak(CircleBreakError):
    """Symbolic coding was requested for a point on the coding orbit (word undefined)."""


class NotQnSmall(CircleBreakError):
    """The interval handed to the distortion check is not q_n-small."""


class DomainViolation(CircleBreakError):
    """Input pair does not satisfy the commuting-pair domain identities."""


class OrbitCollision(CircleBreakError):
    """Two orbit points needed as distinct partition data coincide at working precision."""


class NoConvergence(CircleBreakError):
    """Power iteration failed to meet the Rayleigh-quotient stopping rule."""


class InconclusiveWithinErrorBars(CircleBreakError):
    """An eigenvalue inequality cannot be decided outside the propagated error bars.

    Carries .lhs, .rhs and the half-widths .lhs_err, .rhs_err.
    """

    def __init__(self, message, lhs=None, rhs=None, lhs_err=None, rhs_err=None):
        super().__init__(message)
        self.lhs = lhs
        self.rhs = rhs
        self.lhs_err = lhs_err
        self.rhs_err = rhs_err


class ConstructionFailure(CircleBreakError):
    """Tube construction violated one of its invariants; message carries diagnostics."""


class UnwrapAmbiguityWarning(UserWarning):
    """A noisy orbit drifted more than a quarter circle from its deterministic shadow.

    The remainder statistic is still computed but the circular unwrap is no
    longer provably unique; results carry a flag instead of failing.
    """
