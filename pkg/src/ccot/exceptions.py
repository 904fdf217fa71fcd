"""Exception types raised across the package."""


class CCOTError(Exception):
    """Base class for errors raised by ccot."""


class InfeasibleError(CCOTError, ValueError):
    """A problem has no solution for the requested parameters."""


class NumericalError(CCOTError, ArithmeticError):
    """A solver broke down (underflow, divergence, non-finite values)."""


class ConfigError(CCOTError, ValueError):
    """An experiment configuration failed validation."""
