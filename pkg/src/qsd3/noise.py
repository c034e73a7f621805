"""Colored complex Gaussian noise: kernels, samplers, and statistical self-tests.

The driving process z(t) is circularly symmetric (E[z z] = 0) with conjugate
correlation E[z*(t) z(s)] = alpha(t, s).  Two samplers are provided:

* an exact stationary recursion for the Ornstein-Uhlenbeck kernel
  alpha(t, s) = (gamma/2) exp(-gamma |t - s|), O(N) per path, and
* a dense covariance factorization valid for any positive semidefinite
  kernel, O(N^3) once plus O(N^2) per path, which doubles as an oracle
  for the recursion.

Paths are sampled on the half-step grid so integrator midpoints hit true
samples.  Every sampler is a pure function of (parameters, generator);
trajectory generators are derived from (master_seed, trajectory_index) so
ensembles are reproducible and order-insensitive.
"""

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy.signal import lfilter

from .exceptions import GridMismatchError, KernelError
from .grid import TimeGrid

PSD_TOLERANCE = 1e-10


def trajectory_rng(master_seed: int, index: int) -> np.random.Generator:
    """Independent generator for one trajectory, insensitive to run order."""
    return np.random.default_rng(np.random.SeedSequence((int(master_seed), int(index))))


def ou_correlation(gamma: float, t: float, s: float) -> float:
    """(gamma/2) exp(-gamma |t - s|)."""
    if not gamma > 0.0:
        raise ValueError(f"gamma must be positive, got {gamma!r}")
    return 0.5 * gamma * np.exp(-gamma * abs(t - s))


@dataclass(frozen=True)
class OUKernel:
    gamma: float

    def __post_init__(self):
        if not (self.gamma > 0.0 and np.isfinite(self.gamma)):
            raise ValueError(f"gamma must be positive and finite, got {self.gamma!r}")

    def alpha(self, t, s):
        """alpha(t, s), vectorized over either argument."""
        return 0.5 * self.gamma * np.exp(-self.gamma * np.abs(np.asarray(t) - np.asarray(s)))

    @property
    def at_zero(self) -> float:
        return 0.5 * self.gamma


@dataclass(frozen=True)
class TabulatedKernel:
    """Stationary kernel alpha(t, s) = table(t - s), tabulated on lags >= 0.

    Values at negative lags follow from Hermiticity, alpha(-L) = alpha(L)*.
    Lags must start at 0 with a real positive alpha(0) and be spaced no
    coarser than the sampling grid they are used on.
    """

    lags: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        lags = np.asarray(self.lags, dtype=float)
        values = np.asarray(self.values, dtype=complex)
        if lags.ndim != 1 or lags.shape != values.shape or lags.size < 2:
            raise KernelError("tabulated kernel needs matching 1-d lag/value arrays (>= 2 points)")
        if lags[0] != 0.0 or np.any(np.diff(lags) <= 0.0):
            raise KernelError("kernel lags must start at 0 and increase strictly")
        if abs(values[0].imag) > PSD_TOLERANCE * max(1.0, abs(values[0])) or not values[0].real >= 0.0:
            raise KernelError(f"alpha(0) must be real and nonnegative, got {values[0]!r}")
        object.__setattr__(self, "lags", lags)
        object.__setattr__(self, "values", values)

    def alpha(self, t, s):
        lag = np.asarray(t, dtype=float) - np.asarray(s, dtype=float)
        mag = np.abs(lag)
        if np.any(mag > self.lags[-1] * (1.0 + 1e-12) + 1e-12):
            raise KernelError(f"kernel table covers lags up to {self.lags[-1]!r}, requested {np.max(mag)!r}")
        re = np.interp(mag, self.lags, self.values.real)
        im = np.interp(mag, self.lags, self.values.imag)
        out = re + 1j * np.where(lag >= 0.0, im, -im)
        return out if out.shape else complex(out)

    @property
    def at_zero(self) -> float:
        return float(self.values[0].real)

    def check_spacing(self, grid: TimeGrid):
        step = np.max(np.diff(self.lags))
        if step > grid.half_dt * (1.0 + 1e-9):
            raise KernelError(
                f"kernel table spacing {step!r} is coarser than the sampling step {grid.half_dt!r}"
            )


KernelSpec = Union[OUKernel, TabulatedKernel]


@dataclass(frozen=True)
class NoisePath:
    """One realization of z on the half-step grid of `grid`."""

    grid: TimeGrid
    samples: np.ndarray = field(repr=False)

    def __post_init__(self):
        z = np.asarray(self.samples, dtype=complex)
        if z.shape != (self.grid.n_half,):
            raise GridMismatchError(
                f"path has {z.shape} samples, grid wants ({self.grid.n_half},)"
            )
        if not np.all(np.isfinite(z.view(float))):
            raise ValueError("noise path contains non-finite samples")
        z.flags.writeable = False
        object.__setattr__(self, "samples", z)

    def at(self, t: float) -> complex:
        return complex(self.samples[self.grid.half_index(t)])

    def to_csv(self, path):
        ts = self.grid.half_times()
        with open(path, "w") as fh:
            fh.write("t,re_z,im_z\n")
            for t, z in zip(ts, self.samples):
                fh.write(f"{t:.17g},{z.real:.17g},{z.imag:.17g}\n")


def _complex_standard_normal(rng: np.random.Generator, n: int) -> np.ndarray:
    """n circular complex normals with unit E[|w|^2] (re/im variance 1/2)."""
    raw = rng.standard_normal((n, 2))
    return (raw[:, 0] + 1j * raw[:, 1]) / np.sqrt(2.0)


def sample_ou_path(gamma: float, grid: TimeGrid, rng: np.random.Generator) -> NoisePath:
    """Stationary complex OU realization via the exact one-step recursion.

    z(0) ~ CN(0, gamma/2); z(t + h) = e^{-gamma h} z(t) + xi with
    Var xi = (gamma/2)(1 - e^{-2 gamma h}), h = dt/2.  The recursion is exact
    for every h, so refining the grid does not change the law at shared times.
    """
    if not gamma > 0.0:
        raise ValueError(f"gamma must be positive, got {gamma!r}")
    n = grid.n_half
    decay = np.exp(-gamma * grid.half_dt)
    w = _complex_standard_normal(rng, n)
    driver = np.empty(n, dtype=complex)
    driver[0] = np.sqrt(gamma / 2.0) * w[0]
    driver[1:] = np.sqrt((gamma / 2.0) * (1.0 - decay * decay)) * w[1:]
    samples = lfilter([1.0], [1.0, -decay], driver)
    return NoisePath(grid=grid, samples=samples)


def sample_ou_block(gamma: float, grid: TimeGrid, master_seed: int, start: int, count: int) -> np.ndarray:
    """Stack of OU paths for trajectory indices start .. start+count-1."""
    block = np.empty((count, grid.n_half), dtype=complex)
    for i in range(count):
        rng = trajectory_rng(master_seed, start + i)
        block[i] = sample_ou_path(gamma, grid, rng).samples
    return block


def kernel_covariance(kernel: KernelSpec, grid: TimeGrid) -> np.ndarray:
    """Hermitian covariance C[j, k] = alpha(t_j, t_k) on the half-step grid."""
    ts = grid.half_times()
    c = np.asarray(kernel.alpha(ts[:, None], ts[None, :]), dtype=complex)
    return 0.5 * (c + c.conj().T)


def _failing_leading_minor(c: np.ndarray) -> int:
    lo, hi = 1, c.shape[0]
    # smallest k whose leading k x k block fails to factorize
    while lo < hi:
        mid = (lo + hi) // 2
        try:
            np.linalg.cholesky(c[:mid, :mid])
            lo = mid + 1
        except np.linalg.LinAlgError:
            hi = mid
    return lo


def cholesky_factor(kernel: KernelSpec, grid: TimeGrid) -> np.ndarray:
    """Factor L with C = L L^dag; falls back to an eigendecomposition for
    semidefinite kernels (e.g. identically zero) within PSD_TOLERANCE."""
    c = kernel_covariance(kernel, grid)
    scale = max(np.max(np.abs(np.diag(c)).astype(float)), 1.0)
    try:
        return np.linalg.cholesky(c)
    except np.linalg.LinAlgError:
        pass
    eigvals, eigvecs = np.linalg.eigh(c)
    if eigvals[0] < -PSD_TOLERANCE * scale:
        minor = _failing_leading_minor(c)
        raise KernelError(
            f"kernel is not positive semidefinite: leading minor of order {minor} "
            f"fails (min eigenvalue {eigvals[0]:.3e})"
        )
    return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))


def sample_cholesky_path(
    kernel: KernelSpec,
    grid: TimeGrid,
    rng: np.random.Generator,
    factor: np.ndarray | None = None,
) -> NoisePath:
    """Exact-covariance path z = L w for any positive semidefinite kernel.

    Pass a precomputed `factor` (from :func:`cholesky_factor`) when drawing
    many paths on the same grid.
    """
    if factor is None:
        factor = cholesky_factor(kernel, grid)
    if factor.shape != (grid.n_half, grid.n_half):
        raise GridMismatchError("factor shape does not match the grid")
    w = _complex_standard_normal(rng, grid.n_half)
    return NoisePath(grid=grid, samples=factor @ w)


def _common_grid(paths: Sequence[NoisePath]) -> TimeGrid:
    if len(paths) < 2:
        raise ValueError("need at least 2 paths")
    grid = paths[0].grid
    for p in paths[1:]:
        if p.grid != grid:
            raise GridMismatchError("paths live on different grids")
    return grid


def empirical_covariance(paths: Sequence[NoisePath], pairs: Sequence[tuple]):
    """Sample means of z*(t) z(s) and z(t) z(s) over the paths.

    Returns two lists aligned with `pairs`, each of (complex estimate,
    real standard error).  The standard error is the norm-type
    sqrt(sum |x - mean|^2 / (M-1) / M).
    """
    grid = _common_grid(paths)
    z = np.stack([p.samples for p in paths])
    m = z.shape[0]
    conj_out, rel_out = [], []
    for t, s in pairs:
        j, k = grid.half_index(t), grid.half_index(s)
        for samples, out in ((z[:, j].conj() * z[:, k], conj_out), (z[:, j] * z[:, k], rel_out)):
            mean = samples.mean()
            se = np.sqrt(np.sum(np.abs(samples - mean) ** 2) / (m - 1) / m)
            out.append((complex(mean), float(se)))
    return conj_out, rel_out


def lag_covariance(paths: Sequence[NoisePath], lag_steps: int):
    """Covariance estimates averaged over every same-lag pair on the grid.

    For a stationary kernel this sharpens the estimate well below the
    single-pair Monte Carlo error.  Each path contributes one averaged
    sample (paths are independent; pairs within a path are not), so the
    across-path scatter gives a valid standard error.

    Returns (conj_mean, conj_se, rel_mean, rel_se).
    """
    grid = _common_grid(paths)
    z = np.stack([p.samples for p in paths])
    if not 0 <= lag_steps < grid.n_half:
        raise ValueError(f"lag_steps must lie in [0, {grid.n_half}), got {lag_steps!r}")
    a = z[:, : grid.n_half - lag_steps]
    b = z[:, lag_steps:]
    m = z.shape[0]
    out = []
    for per_path in ((a.conj() * b).mean(axis=1), (a * b).mean(axis=1)):
        mean = per_path.mean()
        se = np.sqrt(np.sum(np.abs(per_path - mean) ** 2) / (m - 1) / m)
        out.extend([complex(mean), float(se)])
    return tuple(out)
