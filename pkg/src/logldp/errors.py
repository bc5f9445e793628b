class LogLDPError(Exception):
    """Base class for package errors."""


class ConfigError(LogLDPError, ValueError):
    """Invalid configuration; maps to CLI exit code 2."""


class NumericalError(LogLDPError, ArithmeticError):
    """Numerical failure (overflow, non-finite values, infeasibility); exit code 3."""

    reason = "numerical"


class SolverOverflow(NumericalError):
    reason = "overflow"

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class NonFiniteError(NumericalError):
    reason = "non_finite"
