"""Deterministic reference dynamics for validating the stochastic ensembles.

Two desk-scale master equations:

* ``lindblad_evolve`` — the Markov limit, d rho/dt = -i omega [Jz, rho]
  + Jm rho Jp - {Jp Jm, rho}/2.

* ``pseudomode_evolve`` — exact dynamics for the Ornstein-Uhlenbeck bath at
  zero temperature: couple the system to one damped auxiliary bosonic mode
  at frequency 0 with coupling sqrt(gamma/2) and mode damping 2*gamma, then
  trace the mode out.  The damped vacuum mode reproduces the correlation
  (gamma/2) exp(-gamma |t - s|) exactly, and the joint excitation number is
  never raised, so a three-level Fock truncation of the mode is exact for
  the initial states used here (vacuum mode, at most two system quanta).
"""

import warnings

import numpy as np

from .algebra import spin1_operators
from .exceptions import DivergenceError
from .grid import TimeGrid

_OPS = spin1_operators()


class TruncationSensitivityWarning(UserWarning):
    """Raising the pseudomode Fock cutoff changed the output noticeably."""


def _rk4_evolve(rhs, rho0, grid: TimeGrid, output_stride: int, substeps: int):
    """Generic dense RK4 march returning states at strided full-step times."""
    out_idx = grid.output_indices(output_stride)
    out = np.empty((len(out_idx), *rho0.shape), dtype=complex)
    out[0] = rho0
    w = rho0.astype(complex)
    h = grid.dt / substeps
    pos = 1
    for step in range(1, grid.n_steps + 1):
        for _ in range(substeps):
            k1 = rhs(w)
            k2 = rhs(w + 0.5 * h * k1)
            k3 = rhs(w + 0.5 * h * k2)
            k4 = rhs(w + h * k3)
            w = w + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(w.view(float))):
            raise DivergenceError(f"oracle integration diverged at t = {step * grid.dt:.6g}",
                                  t=step * grid.dt)
        if pos < len(out_idx) and step == out_idx[pos]:
            out[pos] = w
            pos += 1
    return out


def lindblad_evolve(omega: float, rho0, grid: TimeGrid, output_stride: int = 1) -> np.ndarray:
    """Markov master equation; returns rho at the strided output times."""
    jz, jm, jp, jpjm = _OPS["Jz"], _OPS["Jminus"], _OPS["Jplus"], _OPS["JpJm"]
    h_sys = omega * jz

    def rhs(rho):
        return (
            -1j * (h_sys @ rho - rho @ h_sys)
            + jm @ rho @ jp
            - 0.5 * (jpjm @ rho + rho @ jpjm)
        )

    rho0 = np.asarray(rho0, dtype=complex)
    return _rk4_evolve(rhs, rho0, grid, output_stride, substeps=1)


def _mode_ops(n_max: int):
    dim = n_max + 1
    a = np.zeros((dim, dim), dtype=complex)
    for k in range(1, dim):
        a[k - 1, k] = np.sqrt(k)
    return a, a.conj().T


def _partial_trace_mode(w: np.ndarray, dim_mode: int) -> np.ndarray:
    return np.einsum("imjm->ij", w.reshape(3, dim_mode, 3, dim_mode))


def pseudomode_evolve(
    gamma: float,
    omega: float,
    rho0,
    grid: TimeGrid,
    output_stride: int = 1,
    n_max: int = 2,
    check_truncation: bool = True,
) -> np.ndarray:
    """Exact OU-bath dynamics via one damped auxiliary mode.

    Returns the reduced system state at the strided output times.  With
    ``check_truncation`` the run is repeated at n_max + 1 and a
    :class:`TruncationSensitivityWarning` is emitted if any output element
    moves by more than 1e-10.
    """
    if not gamma > 0.0:
        raise ValueError(f"gamma must be positive, got {gamma!r}")
    rho0 = np.asarray(rho0, dtype=complex)
    # mode damping 2*gamma sets the stiffest rate; substep so RK4 stays accurate
    substeps = max(1, int(np.ceil(grid.dt * max(1.0, 2.0 * gamma) / 0.1)))

    def run(cutoff: int) -> np.ndarray:
        a, ad = _mode_ops(cutoff)
        dim = cutoff + 1
        eye_m = np.eye(dim, dtype=complex)
        eye_s = np.eye(3, dtype=complex)
        lam = np.sqrt(gamma / 2.0)
        h_joint = omega * np.kron(_OPS["Jz"], eye_m) + lam * (
            np.kron(_OPS["Jminus"], ad) + np.kron(_OPS["Jplus"], a)
        )
        a_joint = np.kron(eye_s, a)
        ad_joint = a_joint.conj().T
        num = ad_joint @ a_joint

        def rhs(w):
            return (
                -1j * (h_joint @ w - w @ h_joint)
                + 2.0 * gamma * (a_joint @ w @ ad_joint - 0.5 * (num @ w + w @ num))
            )

        vac = np.zeros((dim, dim), dtype=complex)
        vac[0, 0] = 1.0
        w0 = np.kron(rho0, vac)
        joint = _rk4_evolve(rhs, w0, grid, output_stride, substeps)
        return np.stack([_partial_trace_mode(w, dim) for w in joint])

    result = run(n_max)
    if check_truncation:
        wider = run(n_max + 1)
        dev = float(np.max(np.abs(wider - result)))
        if dev > 1e-10:
            warnings.warn(
                f"raising the mode cutoff from {n_max} to {n_max + 1} moved "
                f"outputs by {dev:.3e} (> 1e-10); increase n_max",
                TruncationSensitivityWarning,
                stacklevel=2,
            )
    return result
