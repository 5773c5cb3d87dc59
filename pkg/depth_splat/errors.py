"""Exceptions raised across depth_splat.

Everything a caller can fix by changing inputs is a ValidationError (and so also a ValueError); the CLI maps those
to exit code 2. A non-finite training loss is an ArithmeticError and maps to exit code 3.
"""


class ValidationError(ValueError):
    pass


class DegenerateRotationError(ValidationError):
    pass


class EmptyFieldError(ValidationError):
    pass


class DimensionMismatchError(ValidationError):
    pass


class ModeMismatchError(ValidationError):
    pass


class DatasetFormatError(ValidationError):
    pass


class StaleCacheError(ValidationError):
    pass


class NonFiniteLossError(ArithmeticError):
    """Raised when a training step produces a non-finite loss.

    Attributes:
        diagnostics: dict with the iteration, loss components and parameter health at the time of failure
    """

    def __init__(self, message, diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics
