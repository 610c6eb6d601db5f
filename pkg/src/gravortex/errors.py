"""Exception hierarchy shared across the package."""


class GravortexError(Exception):
    """Base class for all package-specific errors."""


class ParameterError(GravortexError, ValueError):
    """A model parameter violates one of the defining inequalities."""


class MeshError(GravortexError, ValueError):
    """A mesh fails its structural invariants (symmetry, ordering, weights)."""


class ProfileError(GravortexError, ValueError):
    """A matrix profile is not admissible (positive-definiteness lost)."""


class AdmissibilityError(GravortexError):
    """A solver state left the admissible region."""


class ConfigError(GravortexError, ValueError):
    """A configuration file or flag set is malformed."""


class ExtrapolationError(GravortexError, ValueError):
    """Evaluation was requested outside the mesh interval [-T, T]."""


class NonconvergenceError(GravortexError):
    """Damped Newton hit its damping floor or iteration cap.

    Carries the residual history so callers can diagnose the failure.
    """

    def __init__(self, message, residual_history=None):
        super().__init__(message)
        self.residual_history = list(residual_history or [])


class ContinuationStuckError(GravortexError):
    """Parameter continuation underflowed its step size.

    ``last_good`` is the last parameter value at which a solve succeeded.
    """

    def __init__(self, message, last_good=None, last_solution=None):
        super().__init__(message)
        self.last_good = last_good
        self.last_solution = last_solution


class InconsistentSolutionError(GravortexError):
    """A computed quantity violates a bound it must satisfy (e.g. volume
    outside the admissible window by more than tolerance)."""


class SearchFailureError(GravortexError):
    """A bracketing scan exhausted its range without finding a bracket."""
