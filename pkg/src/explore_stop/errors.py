"""Exception types shared across the package."""

import numpy as np


class InvalidConfigError(ValueError):
    """A market, grid or training configuration violates its invariants."""


class FactorizationError(np.linalg.LinAlgError):
    """Cholesky factorization of a covariance/correlation matrix failed.

    ``minor`` is the 1-based order of the first leading principal minor that
    is negative.
    """

    def __init__(self, message, minor=None):
        super().__init__(message)
        self.minor = minor


class SingularSystemError(np.linalg.LinAlgError):
    """A tridiagonal system could not be solved."""


class ConvergenceError(RuntimeError):
    """Newton iteration did not reach tolerance within its budget."""

    def __init__(self, message, worst_residual=float("nan"), time_index=None):
        super().__init__(message)
        self.worst_residual = worst_residual
        self.time_index = time_index


class ContractViolation(ValueError):
    """An input breaks a documented precondition (e.g. pi*dt outside [0, 1])."""


class GridMismatchError(ValueError):
    """Two value fields live on different grids."""


class NonFiniteLossError(FloatingPointError):
    def __init__(self, message, path_index=None, time_index=None):
        super().__init__(message)
        self.path_index = path_index
        self.time_index = time_index


class TrainingDivergedError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


class ConfigError(ValueError):
    """Config file could not be parsed or validated.

    ``line`` is set for syntax errors, ``field`` for validation errors.
    """

    def __init__(self, message, line=None, field=None):
        super().__init__(message)
        self.line = line
        self.field = field
