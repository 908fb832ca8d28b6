"""Exception types shared across the package."""


class ConvergenceError(ArithmeticError):
    """A series or iteration hit its term budget before meeting its tolerance."""


class CancellationError(ArithmeticError):
    """A closed-form evaluation lost too many significant digits to be trusted.

    Callers are expected to fall back to the direct tail series.
    """

    def __init__(self, message, ratio=None):
        super().__init__(message)
        self.ratio = ratio


class OutputError(OSError):
    """Writing a result file failed; carries the offending path."""

    def __init__(self, path, cause):
        super().__init__(f"cannot write {path}: {cause}")
        self.path = path
        self.cause = cause
