"""Exception types shared across the toolkit."""


class DomainError(ValueError):
    """An argument lies outside a function's mathematical domain."""


class NumericError(ArithmeticError):
    """An iterative numeric routine failed to converge or produced a non-finite value."""

    def __init__(self, message: str, iterations: int | None = None):
        super().__init__(message)
        self.iterations = iterations


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class ContractError(ValueError):
    """An operation was invoked in a way its contract forbids."""


class ConfigError(ValueError):
    """An experiment configuration is malformed or violates an invariant."""


class CsvFormatError(ValueError):
    """A dataset CSV file is malformed; carries the offending 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
