"""Exception types shared across the package."""


class QSDError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(QSDError):
    """Invalid experiment configuration (bad field value, unknown key, ...)."""


class DivergenceError(QSDError):
    """A numerical integration produced NaN/Inf.

    Carries the first bad time and, for ensemble runs, the trajectory index.
    """

    def __init__(self, message, t=None, trajectory=None):
        super().__init__(message)
        self.t = t
        self.trajectory = trajectory


class DegenerateStateError(QSDError):
    """A state vector with (near-)zero norm where a normalized one is required."""


class KernelError(QSDError):
    """A correlation kernel failed validation (e.g. not positive semidefinite)."""


class GridMismatchError(QSDError):
    """Operands live on different time grids or index ranges."""
