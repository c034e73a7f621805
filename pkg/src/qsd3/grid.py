"""Uniform time grid with half-step sampling.

The integrators take full steps of size dt but evaluate their Runge-Kutta
midpoints at t + dt/2, so noise and coefficient series are sampled on the
half-step grid t_k = k * dt / 2 for k = 0 .. 2*n_steps.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError


@dataclass(frozen=True)
class TimeGrid:
    dt: float
    n_steps: int
    t0: float = 0.0

    def __post_init__(self):
        if not (self.dt > 0.0 and np.isfinite(self.dt)):
            raise ConfigError(f"dt must be positive and finite, got {self.dt!r}")
        if self.n_steps < 1:
            raise ConfigError(f"n_steps must be >= 1, got {self.n_steps!r}")
        if self.t0 != 0.0:
            raise ConfigError("grids starting at t0 != 0 are not supported")

    @classmethod
    def from_horizon(cls, dt: float, t_max: float) -> "TimeGrid":
        if not (t_max > 0.0 and np.isfinite(t_max)):
            raise ConfigError(f"t_max must be positive and finite, got {t_max!r}")
        n = int(round(t_max / dt))
        if n < 1 or abs(n * dt - t_max) > 1e-9 * max(1.0, t_max):
            raise ConfigError(f"t_max = {t_max!r} is not an integer multiple of dt = {dt!r}")
        return cls(dt=dt, n_steps=n)

    @property
    def half_dt(self) -> float:
        return self.dt / 2.0

    @property
    def n_half(self) -> int:
        """Number of half-step samples, 2*n_steps + 1."""
        return 2 * self.n_steps + 1

    @property
    def t_max(self) -> float:
        return self.n_steps * self.dt

    def times(self) -> np.ndarray:
        """Full-step times, length n_steps + 1."""
        return np.arange(self.n_steps + 1) * self.dt

    def half_times(self) -> np.ndarray:
        """Half-step sample times, length 2*n_steps + 1."""
        return np.arange(self.n_half) * self.half_dt

    def output_indices(self, stride: int) -> np.ndarray:
        """Full-step indices 0, stride, 2*stride, ... covering the horizon."""
        if stride < 1:
            raise ConfigError(f"output stride must be >= 1, got {stride!r}")
        return np.arange(0, self.n_steps + 1, stride)

    def half_index(self, t: float, tol: float = 1e-9) -> int:
        """Index of t on the half-step grid; raises if t is off-grid."""
        k = int(round(t / self.half_dt))
        if k < 0 or k >= self.n_half or abs(k * self.half_dt - t) > tol * max(1.0, abs(t)):
            raise ValueError(f"time {t!r} is not on the half-step grid (dt/2 = {self.half_dt!r})")
        return k
