"""Exception hierarchy shared by every module."""


class ParametrixError(Exception):
    """Base class."""


class DomainError(ParametrixError, ValueError):
    """An argument lies outside the domain of the operation."""


class NonDiniError(ParametrixError):
    """A (double) Dini integral diverges or fails to converge."""


class EllipticityError(ParametrixError):
    """A coefficient matrix left the ellipticity class M_Lambda."""


class BackendError(ParametrixError):
    """Kernel backend failed (integral representation did not converge)."""


class QuadratureError(ParametrixError):
    """Refinement exhausted before reaching the requested tolerance."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class NonContractionError(ParametrixError):
    """The series bound ratio q is not below one for the chosen (lambda, eps)."""

    def __init__(self, message, q=None):
        super().__init__(message)
        self.q = q


class SingularLimitError(ParametrixError):
    """Collar extrapolation of a singular integral did not settle."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class HorizonError(ParametrixError):
    """T * nu exceeds the admissible threshold for Tychonoff data."""


class PreconditionError(ParametrixError):
    """A hypothesis required by the operation does not hold."""


class StabilityError(ParametrixError):
    """A time-stepping oracle blew up."""


class ConfigError(ParametrixError):
    """Run configuration failed validation."""
