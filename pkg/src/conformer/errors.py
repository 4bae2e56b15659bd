"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Shapes do not line up for the requested operation."""


class ConfigError(ValueError):
    """An invalid or unknown configuration value."""


class ContractError(RuntimeError):
    """A call violated an API precondition (e.g. backward on a non-scalar)."""


class NumericError(ArithmeticError):
    """A non-finite value was produced; ``op`` names the offending kernel."""

    def __init__(self, op, message=None):
        self.op = op
        super().__init__(message or f"non-finite values produced by '{op}'")


class FormatError(ValueError):
    """A file could not be decoded; ``field`` names the bad header field."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
