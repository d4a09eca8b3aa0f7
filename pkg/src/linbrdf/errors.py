"""Exception hierarchy.

The CLI maps these onto process exit codes, so every error raised on purpose
inside the package derives from :class:`LinBrdfError`.
"""


class LinBrdfError(Exception):
    exit_code = 1


class ConfigError(LinBrdfError, ValueError):
    exit_code = 2


class FormatError(LinBrdfError, ValueError):
    """Bytes do not follow the expected file layout."""

    exit_code = 3


class DataError(LinBrdfError, ValueError):
    """Well-formed input carrying unusable values (NaN, Inf, wrong size)."""

    exit_code = 3


class DomainError(LinBrdfError, ValueError):
    """A direction or parameter lies outside the function's domain."""

    exit_code = 3


class NumericalError(LinBrdfError, ArithmeticError):
    exit_code = 4


class IllPosedError(NumericalError):
    """Least-squares problem without a unique minimizer."""


class EstimationError(NumericalError):
    """No material class produced a usable candidate."""
