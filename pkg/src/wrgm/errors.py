"""Exception hierarchy. Every error carries a short machine-readable code."""


class WrgmError(Exception):
    code = "E_WRGM"


class ArgumentError(WrgmError, ValueError):
    code = "E_ARGUMENT"


class NumericError(WrgmError, ArithmeticError):
    """Numerical failure; ``payload`` holds the offending object when useful."""

    code = "E_NUMERIC"

    def __init__(self, message, payload=None):
        super().__init__(message)
        self.payload = payload


class ConfigError(WrgmError, ValueError):
    code = "E_CONFIG"

    def __init__(self, message, field=None):
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field


class DataError(WrgmError, ValueError):
    code = "E_DATA"
