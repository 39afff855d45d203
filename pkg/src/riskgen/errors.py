class RiskgenError(Exception):
    """Base class for all package errors."""


class ConfigError(RiskgenError, ValueError):
    """Invalid configuration, preset name, or shape mismatch."""


class NumericError(RiskgenError, ArithmeticError):
    """Non-finite or out-of-domain numeric value."""
