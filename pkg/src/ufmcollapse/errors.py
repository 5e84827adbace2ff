"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """An input violates a documented precondition."""


class DomainError(InvalidArgumentError):
    """A scalar function was evaluated outside its domain.

    ``boundary`` carries the value at which the domain ends, when known.
    """

    def __init__(self, message, boundary=None):
        super().__init__(message)
        self.boundary = boundary


class RegimeError(InvalidArgumentError):
    """A regime solver was called with parameters outside its regime."""


class NumericError(RuntimeError):
    """A numerical routine failed (bracket lost, SVD failure, ...)."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
