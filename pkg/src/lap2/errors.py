"""Exception types raised by the accountant."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class InfeasibleError(RuntimeError):
    """No admissible parameter achieves the requested privacy target."""


class InvariantError(RuntimeError):
    """An internal monotonicity or consistency check failed."""


class QuadratureError(RuntimeError):
    """Numerical integration did not reach the requested accuracy."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
