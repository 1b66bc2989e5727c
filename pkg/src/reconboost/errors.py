"""Exception types shared across the package."""


class ReconBoostError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(ReconBoostError, ValueError):
    pass


class InvalidStateError(ReconBoostError, RuntimeError):
    pass


class NumericalFailureError(ReconBoostError, ArithmeticError):
    """Raised when a loss or gradient stops being finite.

    ``diagnostics`` carries whatever context the raiser had (stage, epoch,
    batch index, offending values).
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class FormatError(ReconBoostError, ValueError):
    """A file on disk does not follow the expected layout."""

    def __init__(self, message, path=None):
        super().__init__(message if path is None else f"{path}: {message}")
        self.path = path


class ParseError(FormatError):
    def __init__(self, message, path=None, row=None, col=None):
        loc = ""
        if row is not None:
            loc = f" (row {row}" + (f", col {col})" if col is not None else ")")
        super().__init__(message + loc, path)
        self.row = row
        self.col = col
