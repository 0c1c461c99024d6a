"""Exception types raised across the package."""

import numpy as np


class SpikedPCAError(Exception):
    """Base class for package errors."""


class DimensionError(SpikedPCAError, ValueError):
    """Invalid dimensions or mismatched shapes."""


class ConventionError(SpikedPCAError, ValueError):
    """Two Stiefel points use different scale conventions, or the wrong one."""


class SingularMatrixError(SpikedPCAError, np.linalg.LinAlgError):
    """A matrix that must be positive definite is (numerically) singular."""


class BlowUpError(SpikedPCAError, ArithmeticError):
    """Evaluation requested at or past a finite-time blow-up.

    The blow-up time is kept in ``t_star`` so callers can clip horizons.
    """

    def __init__(self, message: str, t_star: float):
        super().__init__(message)
        self.t_star = t_star


class OrderingError(SpikedPCAError, ValueError):
    """Threshold ordering violated (target below starting point, etc.)."""


class BudgetError(SpikedPCAError, ValueError):
    """A request exceeds a configured memory or compute budget."""


class NumericalError(SpikedPCAError, FloatingPointError):
    """Non-finite values produced during a computation."""


class UnsupportedError(SpikedPCAError, NotImplementedError):
    """A feature level outside the supported range was requested."""


class ConfigError(SpikedPCAError, ValueError):
    """Malformed or inconsistent configuration."""
