"""Exception hierarchy.

Validation problems (bad input, bad configuration) derive from
:class:`ValidationError`; failures that only show up while computing derive
from :class:`NumericalError`.  The CLI maps the two families to exit codes 1
and 2.
"""


class HomoglabError(Exception):
    """Base class for all package errors."""


class ValidationError(HomoglabError, ValueError):
    pass


class NumericalError(HomoglabError, ArithmeticError):
    pass


class DomainError(ValidationError):
    """Argument outside the mathematical domain of the operation."""


class OutOfRangeError(ValidationError):
    """Tabulated covariance queried outside its table."""


class NonIntegrableError(ValidationError):
    """Declared decay too slow for the requested integral to exist."""


class WindowTooSmallError(ValidationError):
    pass


class CoverageError(ValidationError):
    """Base field window does not cover the rescaled domain."""


class GridMismatchError(ValidationError):
    pass


class InsufficientDataError(ValidationError):
    pass


class UnsupportedModelError(ValidationError):
    pass


class FormatError(ValidationError):
    """CSV or config file does not follow the expected schema."""


class EmbeddingError(NumericalError):
    """Circulant embedding has too much negative spectral mass."""

    def __init__(self, message, suggested_shape=None):
        super().__init__(message)
        self.suggested_shape = suggested_shape


class InstabilityError(NumericalError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ConvergenceError(NumericalError):
    pass


class UndefinedRatioError(ValidationError):
    """A norm ratio has a zero denominator."""
