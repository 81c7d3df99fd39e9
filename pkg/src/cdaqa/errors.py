"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Bad experiment / model configuration (CLI exit code 2)."""


class DataError(ValueError):
    """Malformed or unusable input data (CLI exit code 3)."""


class ShapeError(ValueError):
    """Tensor dimension mismatch."""


class ContractError(RuntimeError):
    """A caller violated a documented precondition."""


class InvariantViolation(RuntimeError):
    """An internal invariant was broken, e.g. a frozen parameter changed (CLI exit code 4)."""
