"""Exception hierarchy shared across the toolkit."""


class CapflowError(Exception):
    """Base class for all capflow errors."""


class DimensionMismatchError(CapflowError):
    """Operands have incompatible shapes."""


class SingularMatrixError(CapflowError):
    """A pivot fell below the relative threshold during factorization."""


class NoStabilizingSolutionError(CapflowError):
    """The Riccati equation has no stabilizing solution."""


class NotConvergedError(CapflowError):
    """An iterative method exhausted its iteration budget."""


class StepSizeTooLargeError(CapflowError):
    """A trajectory entry diverged beyond the configured bound."""


class EigenFailureError(CapflowError):
    """The eigenvalue iteration did not converge."""


class InvalidIncidenceError(CapflowError):
    """An incidence matrix violates the column sign rules."""


class InfeasibleError(CapflowError):
    """No nonnegative flow satisfies the balance constraints."""


class EnumerationGuardError(CapflowError):
    """The network is too large for active-set enumeration."""


class NotComparableError(CapflowError):
    """A candidate point is too infeasible to compare against the optimum."""


class InvalidParamsError(CapflowError):
    """Topology generator parameters are out of range."""


class ConfigParseError(CapflowError):
    """The configuration file could not be parsed."""


class ConfigValidationError(CapflowError):
    """A parsed configuration violates a module invariant."""
