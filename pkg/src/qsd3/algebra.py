"""Spin-1 operator algebra for the three-level system.

Basis order is (|2>, |1>, |0>), i.e. index 0 is the highest level and index 2
the ground level, so that Jz = diag(1, 0, -1) and dissipative decay ends up in
the last component.  All operators are dense 3x3 complex matrices; states are
length-3 complex vectors.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateStateError

SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class Tolerances:
    """Numerical tolerances used by the validation helpers."""

    norm: float = 1e-6          # max |<psi|psi> - 1| accepted as "normalized"
    hermiticity: float = 1e-9   # max elementwise |rho - rho^dag| accepted
    zero_norm: float = 1e-12    # below this a vector counts as degenerate


DEFAULT_TOLERANCES = Tolerances()


def _frozen(m):
    a = np.asarray(m, dtype=complex)
    a.flags.writeable = False
    return a


_JZ = _frozen(np.diag([1.0, 0.0, -1.0]))
_JM = _frozen([[0, 0, 0], [SQRT2, 0, 0], [0, SQRT2, 0]])
_JP = _frozen(_JM.conj().T)
_JX = _frozen((_JP + _JM) / 2.0)
_JY = _frozen((_JP - _JM) / (2.0j))
_JZJM = _frozen(_JZ @ _JM)
_JPJM = _frozen(_JP @ _JM)
_JPJZJM = _frozen(_JP @ _JZ @ _JM)
_JM2 = _frozen(_JM @ _JM)
_JPJM2 = _frozen(_JP @ _JM @ _JM)

_OPERATORS = {
    "Jz": _JZ,
    "Jplus": _JP,
    "Jminus": _JM,
    "Jx": _JX,
    "Jy": _JY,
    "JzJm": _JZJM,
    "JpJm": _JPJM,
    "JpJzJm": _JPJZJM,
    "Jm2": _JM2,
    "JpJm2": _JPJM2,
}


def spin1_operators():
    """Return the dict of constant spin-1 matrices and their precomputed products.

    Keys: Jz, Jplus, Jminus, Jx, Jy, JzJm, JpJm, JpJzJm, Jm2, JpJm2.
    The arrays are shared read-only singletons.
    """
    return dict(_OPERATORS)


def state_norm(state) -> float:
    psi = np.asarray(state, dtype=complex)
    return float(np.sqrt(np.sum(np.abs(psi) ** 2)))


def normalize(state, tol: Tolerances = DEFAULT_TOLERANCES):
    """Return (state / ||state||, ||state||); degenerate input raises."""
    psi = np.asarray(state, dtype=complex)
    n = state_norm(psi)
    if not np.isfinite(n) or n <= tol.zero_norm:
        raise DegenerateStateError(f"cannot normalize state with norm {n!r}")
    return psi / n, n


def expectation(state, op, tol: Tolerances = DEFAULT_TOLERANCES) -> complex:
    """<psi|A|psi> for a normalized state; rejects non-normalized input."""
    psi = np.asarray(state, dtype=complex)
    n = state_norm(psi)
    if abs(n - 1.0) > tol.norm:
        raise ValueError(f"state is not normalized: ||psi|| = {n!r}")
    return complex(np.vdot(psi, np.asarray(op) @ psi))


def projector(state) -> np.ndarray:
    """|psi><psi| without normalization (trace equals the squared norm)."""
    psi = np.asarray(state, dtype=complex)
    return np.outer(psi, psi.conj())


def hermiticity_deviation(rho) -> float:
    r = np.asarray(rho, dtype=complex)
    return float(np.max(np.abs(r - r.conj().T)))


def purity(rho, tol: Tolerances = DEFAULT_TOLERANCES) -> float:
    """Tr[rho^2] of a Hermitian matrix; rejects non-Hermitian input."""
    r = np.asarray(rho, dtype=complex)
    dev = hermiticity_deviation(r)
    if dev > tol.hermiticity:
        raise ValueError(f"matrix is not Hermitian (max deviation {dev:.3e})")
    return float(np.sum(np.abs(r) ** 2))


def density_row(rho) -> list:
    """Serialize a 3x3 Hermitian matrix as 9 reals.

    Order: the three diagonals (real part), then the upper off-diagonals in
    row-major order as (re, im) pairs: rho01, rho02, rho12.
    """
    r = np.asarray(rho, dtype=complex)
    return [
        r[0, 0].real, r[1, 1].real, r[2, 2].real,
        r[0, 1].real, r[0, 1].imag,
        r[0, 2].real, r[0, 2].imag,
        r[1, 2].real, r[1, 2].imag,
    ]


def density_from_row(row) -> np.ndarray:
    """Inverse of :func:`density_row`."""
    d0, d1, d2, r01, i01, r02, i02, r12, i12 = row
    rho = np.array(
        [
            [d0, r01 + 1j * i01, r02 + 1j * i02],
            [r01 - 1j * i01, d1, r12 + 1j * i12],
            [r02 - 1j * i02, r12 - 1j * i12, d2],
        ],
        dtype=complex,
    )
    return rho
