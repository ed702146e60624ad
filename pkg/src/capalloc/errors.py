"""Exception types shared across the package."""


class AllocationError(Exception):
    """Base class for all package errors."""


class ConfigError(AllocationError, ValueError):
    """Malformed or inconsistent scenario configuration."""


class NumericalError(AllocationError, ArithmeticError):
    """A computation is undefined for the given inputs (empty tail, zero total, stuck chain...)."""
