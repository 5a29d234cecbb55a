"""Exception types raised across the package.

The CLI maps each class to a distinct exit code, so the hierarchy is kept flat.
"""


class ValidationError(ValueError):
    """Input failed a shape, range, or finiteness check."""


class BudgetInfeasibleError(ValueError):
    """The requested retention ratio cannot satisfy the per-frame floor."""

    def __init__(self, message: str, min_ratio: float | None = None):
        super().__init__(message)
        self.min_ratio = min_ratio


class FormatError(IOError):
    """A tensor file or manifest is malformed."""
