"""Exception types shared across the package."""


class ParameterError(ValueError):
    """A distribution or operation parameter is outside its domain."""


class SingularMatrixError(RuntimeError):
    """A matrix required to be positive definite failed to factorize."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class ModeError(RuntimeError):
    """An operation was called on the wrong observation variant."""


class SchemaError(ValueError):
    """A posterior document is malformed or incompatible."""


class ParseError(ValueError):
    """A data file failed to parse; carries the offending location."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class DivergenceError(RuntimeError):
    """An ODE trajectory left the finite range."""


class ChainAborted(RuntimeError):
    """A Gibbs chain hit a numeric failure; carries what was salvaged."""

    def __init__(self, message, last_state=None, samples=None, iteration=None):
        super().__init__(message)
        self.last_state = last_state
        self.samples = samples if samples is not None else []
        self.iteration = iteration
