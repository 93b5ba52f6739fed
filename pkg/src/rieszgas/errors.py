"""Exception hierarchy. CLI exit codes hang off these classes."""


class RieszGasError(Exception):
    """Base class for all package errors."""


class UsageError(RieszGasError, ValueError):
    """Bad arguments: dimension mismatch, empty grid, support violation."""


class ConfigError(UsageError):
    """Experiment configuration could not be parsed or validated."""


class UnsupportedModelError(RieszGasError):
    """The requested field/kernel combination is outside what is solvable."""


class UnsupportedFieldError(UnsupportedModelError):
    """Radial field is neither convex nor has increasing r^(d-1) v'(r)."""


class FieldTooWeakError(UnsupportedModelError):
    """w(r) = r^(d-1) v'(r) never reaches beta (d-2)."""


class MethodUnavailableError(RieszGasError):
    """A fast path was asked for on inputs it does not handle."""


class NumericalError(RieszGasError):
    """Runtime numerical failure."""


class SingularityError(NumericalError):
    """Gradient requested at a coincidence or at a singular point of V."""


class InitializationError(NumericalError):
    """Initial configuration could not be produced."""


class StepSizeError(NumericalError):
    """An integrator step produced non-finite coordinates."""
