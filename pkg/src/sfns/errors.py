"""Exception hierarchy shared across the package."""


class SfnsError(Exception):
    """Base class for all package-specific errors."""


class InvalidParameterError(SfnsError, ValueError):
    """A scalar parameter violates its documented range."""


class BasisMismatchError(SfnsError, ValueError):
    """Two objects built on different mode bases were combined."""


class InvalidOperatorError(SfnsError, ValueError):
    """An operator violates its sign/definiteness contract."""


class NumericFailureError(SfnsError, ArithmeticError):
    """A residual or sanity check exceeded its tolerance."""


class UnsupportedConfigurationError(SfnsError, ValueError):
    """A combination of inputs is outside the supported regime."""


class DivergenceError(SfnsError, ArithmeticError):
    """A trajectory exceeded the blow-up guard."""

    def __init__(self, message, step=None, time=None):
        super().__init__(message)
        self.step = step
        self.time = time


class EnsembleDivergenceError(SfnsError, ArithmeticError):
    """One or more ensemble replicas diverged; carries the partial result."""

    def __init__(self, message, failed_replicas, partial=None):
        super().__init__(message)
        self.failed_replicas = list(failed_replicas)
        self.partial = partial


class InsufficientSamplesError(SfnsError, ValueError):
    """Too few samples for the requested statistical comparison."""


class ConfigError(SfnsError, ValueError):
    """Experiment configuration failed validation.

    ``violations`` lists every violated precondition, not just the first.
    """

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))
