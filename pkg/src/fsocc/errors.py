"""Exception types shared across the package.

Every failure mode is a distinct class so callers (and the CLI exit-code
mapping) can tell usage problems, bad data, and numerical trouble apart.
"""


class FsoccError(Exception):
    """Base class for all package errors."""


class ContractError(FsoccError):
    """A precondition was violated (shape mismatch, bad argument)."""


class NumericError(FsoccError):
    """A computation produced NaN/Inf or is otherwise numerically invalid."""


class ConfigError(FsoccError):
    """Invalid configuration or dataset (bad key, class too small, ...)."""


class ParseError(FsoccError):
    """Malformed input file. Carries the byte offset where parsing failed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class SolverError(NumericError):
    """QP solver failed to reach tolerance. Carries the best iterate found."""

    def __init__(self, message, alpha=None, residual=None):
        super().__init__(message)
        self.alpha = alpha
        self.residual = residual


class DifferentiationError(NumericError):
    """Implicit differentiation of a QP solution failed (degenerate system)."""
