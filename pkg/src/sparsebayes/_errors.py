"""Exception types shared across the package."""


class DomainError(ValueError):
    """Invalid argument: out-of-range parameter, shape mismatch, non-finite input."""


class NumericalError(ArithmeticError):
    """A numerical routine failed (factorization, quadrature, non-finite gradient).

    ``diagnostics`` carries whatever the failing routine could report.
    """

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class ConditioningWarning(UserWarning):
    """A covariance matrix was close to singular."""


class ParseError(DomainError):
    """Malformed input file; ``line`` and ``column`` are 1-based (``None`` if unknown)."""

    def __init__(self, message, path=None, line=None, column=None):
        where = ":".join(str(p) for p in (path, line, column) if p is not None)
        super().__init__(f"{where}: {message}" if where else message)
        self.path, self.line, self.column = path, line, column
