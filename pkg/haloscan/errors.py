class ConfigError(ValueError):
    """Invalid or inconsistent parameters."""


class NumericalError(ArithmeticError):
    """A computation could not produce a meaningful number."""
