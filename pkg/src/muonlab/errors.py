"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Raised when an argument violates a documented precondition."""


class NumericalDivergenceError(ArithmeticError):
    """Raised when an iteration or training run produces non-finite values."""


class ConfigError(ValueError):
    """Raised for malformed or semantically invalid experiment configs.

    Parameters
    ----------
    field : str
        Dotted path of the offending config field (or the file path).
    message : str
        Human readable description.
    """

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
