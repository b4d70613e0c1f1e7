"""Exception hierarchy shared by the solver modules."""


class InversionError(Exception):
    """Base class for all errors raised by ukinv."""


class DimensionError(InversionError, ValueError):
    pass


class InputError(InversionError, ValueError):
    pass


class ConfigError(InversionError, ValueError):
    """Invalid run configuration; ``field`` names the offending key."""

    def __init__(self, message, field=None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


class DecompositionError(InversionError, ArithmeticError):
    """Factorization failed; ``pivot`` is the zero-based failing pivot, if known."""

    def __init__(self, message, pivot=None):
        self.pivot = pivot
        super().__init__(message)


class NumericError(InversionError, ArithmeticError):
    pass


class RankError(InversionError, ValueError):
    pass


class BatchError(InversionError, RuntimeError):
    """A forward evaluation inside a batch failed."""

    def __init__(self, index, cause):
        self.index = index
        self.cause = cause
        super().__init__(f"forward evaluation failed at point {index}: {cause!r}")


class VerificationError(InversionError, AssertionError):
    """A structural invariant checked in verify mode did not hold."""


class FormatError(InversionError, ValueError):
    pass
