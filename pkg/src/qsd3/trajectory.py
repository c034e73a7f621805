"""Single-trajectory integrators for the three diffusion modes.

All integrators advance batches of trajectories simultaneously: states are
held component-major as (3, B) complex arrays and every arithmetic step is
an elementwise numpy expression with the 3x3 operator applications unrolled
against the fixed spin-1 matrices.  Elementwise operations make the results
independent of the batch layout, which is what lets sharded ensemble runs
reproduce single runs bit for bit.

Modes:

* linear — the unnormalized equation; the memory integral
  Q(t) = int_0^t P(t, s') z(s') ds' rides along as one auxiliary ODE
  dQ/dt = kappa(t) Q - i G(t) z(t) (exact consequence of the closed-form
  P for the OU kernel).
* nonlinear — the norm-preserving equation for the normalized state, driven
  by the shifted noise zt = z + Y with dY/dt = (gamma/2) <J+> - gamma Y;
  the state is renormalized after every step and the pre-normalization
  norm drift is recorded.
* markov (white noise) — Euler-Maruyama with complex Wiener increments of
  variance dt (dt/2 per quadrature), renormalized every step.  Runge-Kutta
  stepping is meaningless for white noise, hence the separate scheme.

For non-OU kernels the memory integral and noise shift have no ODE form;
``integrate_surface_trajectories`` instead quadratures them against the
stored kernel surface each step with a Heun (trapezoidal) update, matching
the second-order accuracy of the surface itself.
"""

from dataclasses import dataclass, field

import numpy as np

from .algebra import SQRT2
from .coefficients import CoefficientSet, KernelCoefficientSurface, _trapezoid_weights
from .exceptions import DegenerateStateError, DivergenceError
from .grid import TimeGrid
from .noise import NoisePath

NORM_COLLAPSE = 1e-8


@dataclass(frozen=True)
class TrajectoryRecord:
    """States of one trajectory at the strided output times."""

    times: np.ndarray
    states: np.ndarray              # (T, 3); unnormalized in linear mode
    mode: str
    norm_drift: np.ndarray | None = field(default=None)   # per-interval max, nonlinear only
    q: np.ndarray | None = field(default=None)            # memory integral, when recorded


def _check_finite(psi, t, batch_start):
    flat = np.ascontiguousarray(psi).reshape(-1)
    if np.all(np.isfinite(flat.view(np.float64))):
        return
    bad_cols = np.argwhere((~np.isfinite(psi)).any(axis=0))
    bad = int(bad_cols[0][0]) if bad_cols.size else 0
    raise DivergenceError(
        f"trajectory {batch_start + bad} diverged at t = {t:.6g}",
        t=t, trajectory=batch_start + bad,
    )


def _linear_dpsi(psi, q, z, F, G, omega):
    p0, p1, p2 = psi
    d0 = -(1j * omega + 2.0 * F) * p0
    d1 = (SQRT2 * z - 2j * SQRT2 * q) * p0 + (2.0 * G - 2.0 * F) * p1
    d2 = 1j * omega * p2 + SQRT2 * z * p1
    return d0, d1, d2


def _nonlinear_dpsi(psi, q, zt, F, G, omega):
    """Right-hand side of the norm-preserving equation.

    Expectations are evaluated against the instantaneous stage state
    (divided by its squared norm), so every fluctuation term contributes
    exactly zero norm growth in continuous time.
    """
    p0, p1, p2 = psi
    a0 = p0.real**2 + p0.imag**2
    a1 = p1.real**2 + p1.imag**2
    a2 = p2.real**2 + p2.imag**2
    inv = 1.0 / (a0 + a1 + a2)
    jm = SQRT2 * (p1.conj() * p0 + p2.conj() * p1) * inv
    jp = jm.conj()
    e_jpjm = 2.0 * (a0 + a1) * inv
    e_jzjm = -SQRT2 * (p2.conj() * p1) * inv
    e_jpjzjm = -2.0 * a1 * inv
    e_jm2 = 2.0 * (p2.conj() * p0) * inv
    e_jpjm2 = 2.0 * SQRT2 * (p1.conj() * p0) * inv

    cA = zt + jp * F
    cB = jp * G
    cC = 1j * jp * q
    # scalar multiple of psi collecting all the -<A> pieces
    s = -cA * jm + F * e_jpjm - cB * e_jzjm + G * e_jpjzjm - cC * e_jm2 + 1j * q * e_jpjm2

    d0 = -(1j * omega + 2.0 * F) * p0 + s * p0
    d1 = (SQRT2 * cA - 2j * SQRT2 * q) * p0 + (2.0 * G - 2.0 * F) * p1 + s * p1
    d2 = 1j * omega * p2 + SQRT2 * (cA - cB) * p1 + 2.0 * cC * p0 + s * p2
    return (d0, d1, d2), jp


def _output_plan(grid: TimeGrid, output_stride: int):
    out_idx = grid.output_indices(output_stride)
    return out_idx, grid.times()[out_idx]


def integrate_linear_batch(
    coeffs: CoefficientSet,
    noise_block: np.ndarray,
    psi0: np.ndarray,
    output_stride: int = 1,
    record_q: bool = False,
    batch_start: int = 0,
):
    """RK4 for a (B, n_half) block of noise paths; returns states (B, T, 3)."""
    grid = coeffs.grid
    out_idx, out_times = _output_plan(grid, output_stride)
    b = noise_block.shape[0]
    if noise_block.shape != (b, grid.n_half):
        raise ValueError(f"noise block shape {noise_block.shape} does not match the grid")
    dt = grid.dt
    F, G, kap = coeffs.F, coeffs.G, coeffs.kappa
    om = coeffs.omega

    psi = np.empty((3, b), dtype=complex)
    psi[:] = np.asarray(psi0, dtype=complex)[:, None]
    q = np.zeros(b, dtype=complex)
    states = np.empty((b, len(out_idx), 3), dtype=complex)
    qs = np.empty((b, len(out_idx)), dtype=complex) if record_q else None

    pos = 0
    if out_idx[0] == 0:
        states[:, 0, :] = psi.T
        if record_q:
            qs[:, 0] = q
        pos = 1
    for step in range(grid.n_steps):
        h0 = 2 * step
        z0, z1, z2 = noise_block[:, h0], noise_block[:, h0 + 1], noise_block[:, h0 + 2]
        k1 = _linear_dpsi(psi, q, z0, F[h0], G[h0], om)
        q1 = kap[h0] * q - 1j * G[h0] * z0
        s2 = psi + (0.5 * dt) * np.asarray(k1)
        k2 = _linear_dpsi(s2, q + 0.5 * dt * q1, z1, F[h0 + 1], G[h0 + 1], om)
        q2 = kap[h0 + 1] * (q + 0.5 * dt * q1) - 1j * G[h0 + 1] * z1
        s3 = psi + (0.5 * dt) * np.asarray(k2)
        k3 = _linear_dpsi(s3, q + 0.5 * dt * q2, z1, F[h0 + 1], G[h0 + 1], om)
        q3 = kap[h0 + 1] * (q + 0.5 * dt * q2) - 1j * G[h0 + 1] * z1
        s4 = psi + dt * np.asarray(k3)
        k4 = _linear_dpsi(s4, q + dt * q3, z2, F[h0 + 2], G[h0 + 2], om)
        q4 = kap[h0 + 2] * (q + dt * q3) - 1j * G[h0 + 2] * z2
        psi = psi + (dt / 6.0) * (np.asarray(k1) + 2.0 * np.asarray(k2) + 2.0 * np.asarray(k3) + np.asarray(k4))
        q = q + (dt / 6.0) * (q1 + 2.0 * q2 + 2.0 * q3 + q4)
        t_now = (step + 1) * dt
        _check_finite(psi, t_now, batch_start)
        if pos < len(out_idx) and step + 1 == out_idx[pos]:
            states[:, pos, :] = psi.T
            if record_q:
                qs[:, pos] = q
            pos += 1
    return out_times, states, qs


def integrate_nonlinear_batch(
    coeffs: CoefficientSet,
    noise_block: np.ndarray,
    psi0: np.ndarray,
    output_stride: int = 1,
    record_q: bool = False,
    batch_start: int = 0,
):
    """RK4 for the coupled (psi, Q, Y) system with per-step renormalization.

    Returns (times, states, drift, qs): states are normalized, drift[b, j]
    is the largest pre-normalization |norm - 1| seen since the previous
    output time.
    """
    if coeffs.gamma is None:
        raise ValueError("nonlinear mode requires the OU coefficient variant (finite gamma)")
    grid = coeffs.grid
    out_idx, out_times = _output_plan(grid, output_stride)
    b = noise_block.shape[0]
    if noise_block.shape != (b, grid.n_half):
        raise ValueError(f"noise block shape {noise_block.shape} does not match the grid")
    dt = grid.dt
    F, G, kap = coeffs.F, coeffs.G, coeffs.kappa
    om, gamma = coeffs.omega, coeffs.gamma

    psi = np.empty((3, b), dtype=complex)
    psi[:] = np.asarray(psi0, dtype=complex)[:, None]
    q = np.zeros(b, dtype=complex)
    y = np.zeros(b, dtype=complex)
    states = np.empty((b, len(out_idx), 3), dtype=complex)
    drift = np.zeros((b, len(out_idx)))
    qs = np.empty((b, len(out_idx)), dtype=complex) if record_q else None
    running = np.zeros(b)

    def stage(state, qq, yy, z, hidx):
        zt = z + yy
        dpsi, jp = _nonlinear_dpsi(state, qq, zt, F[hidx], G[hidx], om)
        dq = kap[hidx] * qq - 1j * G[hidx] * zt
        dy = 0.5 * gamma * jp - gamma * yy
        return np.asarray(dpsi), dq, dy

    pos = 0
    if out_idx[0] == 0:
        states[:, 0, :] = psi.T
        if record_q:
            qs[:, 0] = q
        pos = 1
    for step in range(grid.n_steps):
        h0 = 2 * step
        z0, z1, z2 = noise_block[:, h0], noise_block[:, h0 + 1], noise_block[:, h0 + 2]
        k1, q1, y1 = stage(psi, q, y, z0, h0)
        k2, q2, y2 = stage(psi + 0.5 * dt * k1, q + 0.5 * dt * q1, y + 0.5 * dt * y1, z1, h0 + 1)
        k3, q3, y3 = stage(psi + 0.5 * dt * k2, q + 0.5 * dt * q2, y + 0.5 * dt * y2, z1, h0 + 1)
        k4, q4, y4 = stage(psi + dt * k3, q + dt * q3, y + dt * y3, z2, h0 + 2)
        psi = psi + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        q = q + (dt / 6.0) * (q1 + 2.0 * q2 + 2.0 * q3 + q4)
        y = y + (dt / 6.0) * (y1 + 2.0 * y2 + 2.0 * y3 + y4)
        t_now = (step + 1) * dt
        _check_finite(psi, t_now, batch_start)
        norm = np.sqrt(psi[0].real**2 + psi[0].imag**2
                       + psi[1].real**2 + psi[1].imag**2
                       + psi[2].real**2 + psi[2].imag**2)
        if np.any(norm < NORM_COLLAPSE):
            bad = int(np.argmin(norm))
            raise DegenerateStateError(
                f"trajectory {batch_start + bad} norm collapsed to {norm[bad]:.3e} "
                f"at t = {t_now:.6g}"
            )
        np.maximum(running, np.abs(norm - 1.0), out=running)
        psi = psi / norm
        if pos < len(out_idx) and step + 1 == out_idx[pos]:
            states[:, pos, :] = psi.T
            drift[:, pos] = running
            running = np.zeros(b)
            if record_q:
                qs[:, pos] = q
            pos += 1
    return out_times, states, drift, qs


def integrate_markov_batch(
    omega: float,
    wiener_block: np.ndarray,
    psi0: np.ndarray,
    grid: TimeGrid,
    output_stride: int = 1,
    batch_start: int = 0,
):
    """Euler-Maruyama for the white-noise equation, renormalized each step.

    ``wiener_block`` holds the complex increments dW (variance dt) for each
    trajectory and step, shape (B, n_steps).
    """
    out_idx, out_times = _output_plan(grid, output_stride)
    b = wiener_block.shape[0]
    if wiener_block.shape != (b, grid.n_steps):
        raise ValueError(f"wiener block shape {wiener_block.shape} does not match the grid")
    dt = grid.dt

    psi = np.empty((3, b), dtype=complex)
    psi[:] = np.asarray(psi0, dtype=complex)[:, None]
    states = np.empty((b, len(out_idx), 3), dtype=complex)

    pos = 0
    if out_idx[0] == 0:
        states[:, 0, :] = psi.T
        pos = 1
    for step in range(grid.n_steps):
        p0, p1, p2 = psi
        a0 = p0.real**2 + p0.imag**2
        a1 = p1.real**2 + p1.imag**2
        a2 = p2.real**2 + p2.imag**2
        inv = 1.0 / (a0 + a1 + a2)
        jm = SQRT2 * (p1.conj() * p0 + p2.conj() * p1) * inv
        jp = jm.conj()
        e_jpjm = 2.0 * (a0 + a1) * inv
        n0 = -jm * p0
        n1 = SQRT2 * p0 - jm * p1
        n2v = SQRT2 * p1 - jm * p2
        # drift: -i omega Jz psi + <J+> Delta(Jm) psi - 1/2 Delta(JpJm) psi;
        # the noise term shares the Delta(Jm) psi vector with the <J+> drift
        dw = wiener_block[:, step]
        g0 = dw + jp * dt
        d0 = -1j * omega * p0 * dt - (1.0 - 0.5 * e_jpjm) * p0 * dt + n0 * g0
        d1 = -(1.0 - 0.5 * e_jpjm) * p1 * dt + n1 * g0
        d2 = 1j * omega * p2 * dt + 0.5 * e_jpjm * p2 * dt + n2v * g0
        psi = np.asarray((p0 + d0, p1 + d1, p2 + d2))
        t_now = (step + 1) * dt
        _check_finite(psi, t_now, batch_start)
        norm = np.sqrt(np.sum(psi.real**2 + psi.imag**2, axis=0))
        if np.any(norm < NORM_COLLAPSE):
            bad = int(np.argmin(norm))
            raise DegenerateStateError(
                f"trajectory {batch_start + bad} norm collapsed at t = {t_now:.6g}"
            )
        psi = psi / norm
        if pos < len(out_idx) and step + 1 == out_idx[pos]:
            states[:, pos, :] = psi.T
            pos += 1
    return out_times, states


def sample_wiener_block(grid: TimeGrid, rng: np.random.Generator) -> np.ndarray:
    """Complex Wiener increments with E[dW* dW] = dt and E[dW dW] = 0."""
    raw = rng.standard_normal((grid.n_steps, 2))
    return (raw[:, 0] + 1j * raw[:, 1]) * np.sqrt(grid.dt / 2.0)


def run_linear_trajectory(
    coeffs: CoefficientSet,
    noise: NoisePath,
    psi0,
    output_stride: int = 1,
    record_q: bool = False,
) -> TrajectoryRecord:
    """Integrate the unnormalized equation along one recorded noise path."""
    times, states, qs = integrate_linear_batch(
        coeffs, noise.samples[None, :], np.asarray(psi0, dtype=complex),
        output_stride, record_q,
    )
    return TrajectoryRecord(times=times, states=states[0], mode="linear",
                            q=None if qs is None else qs[0])


def run_nonlinear_trajectory(
    coeffs: CoefficientSet,
    noise: NoisePath,
    psi0,
    output_stride: int = 1,
    record_q: bool = False,
) -> TrajectoryRecord:
    """Integrate the norm-preserving equation along one recorded noise path."""
    psi0 = np.asarray(psi0, dtype=complex)
    n = np.linalg.norm(psi0)
    if abs(n - 1.0) > 1e-9:
        raise ValueError(f"nonlinear mode needs a normalized initial state, ||psi0|| = {n!r}")
    times, states, drift, qs = integrate_nonlinear_batch(
        coeffs, noise.samples[None, :], psi0, output_stride, record_q,
    )
    return TrajectoryRecord(times=times, states=states[0], mode="nonlinear",
                            norm_drift=drift[0], q=None if qs is None else qs[0])


def run_markov_trajectory(
    omega: float,
    psi0,
    grid: TimeGrid,
    rng: np.random.Generator,
    output_stride: int = 1,
) -> TrajectoryRecord:
    """White-noise trajectory driven by increments drawn from `rng`."""
    psi0 = np.asarray(psi0, dtype=complex)
    n = np.linalg.norm(psi0)
    if abs(n - 1.0) > 1e-9:
        raise ValueError(f"markov mode needs a normalized initial state, ||psi0|| = {n!r}")
    dw = sample_wiener_block(grid, rng)
    times, states = integrate_markov_batch(omega, dw[None, :], psi0, grid, output_stride)
    return TrajectoryRecord(times=times, states=states[0], mode="markov_white")


def propagate_noise_integral(
    q: complex,
    coeffs: CoefficientSet,
    G_t: complex,
    F_t: complex,
    z_input: complex,
    dt: float,
) -> complex:
    """One RK4 update of dQ/dt = kappa Q - i G z with frozen coefficients.

    kappa = -gamma + 2 i omega + 4 F - 2 G follows from differentiating the
    closed-form memory kernel.  The trajectory integrators inline the same
    update with stage-resolved coefficients; this standalone version exists
    for stepwise use with per-step (e.g. midpoint) coefficient values.
    """
    if coeffs.gamma is None:
        raise ValueError("noise-integral propagation requires the OU coefficient variant")
    kappa = -coeffs.gamma + 2j * coeffs.omega + 4.0 * F_t - 2.0 * G_t
    src = -1j * G_t * z_input

    def rhs(v):
        return kappa * v + src

    k1 = rhs(q)
    k2 = rhs(q + 0.5 * dt * k1)
    k3 = rhs(q + 0.5 * dt * k2)
    k4 = rhs(q + dt * k3)
    return complex(q + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))


def memory_integral_general(
    surface: KernelCoefficientSurface,
    noise: NoisePath,
    t_index: int,
) -> complex:
    """Trapezoidal quadrature of P(t_i, s') z(s') over s' in [0, t_i].

    The quadrature runs on the noise's half-step grid (the integrand's
    roughness lives in z); the stored kernel row, smooth in s', is linearly
    interpolated onto the midpoints.
    """
    n = surface.grid.n_steps
    if not 0 <= t_index <= n:
        raise ValueError(f"t_index must lie in [0, {n}], got {t_index!r}")
    if noise.grid != surface.grid:
        raise ValueError("noise path and surface live on different grids")
    row = surface.P[t_index, : t_index + 1]
    p_half = np.empty(2 * t_index + 1, dtype=complex)
    p_half[::2] = row
    p_half[1::2] = 0.5 * (row[:-1] + row[1:])
    w = _trapezoid_weights(2 * t_index + 1, surface.grid.half_dt)
    return complex(np.sum(w * p_half * noise.samples[: 2 * t_index + 1]))


def integrate_surface_trajectories(
    surface: KernelCoefficientSurface,
    noise_block: np.ndarray,
    psi0,
    output_stride: int = 1,
    nonlinear: bool = True,
    kernel=None,
    batch_start: int = 0,
):
    """General-kernel trajectories: Heun stepping with quadrature memory terms.

    The memory integral and (for the nonlinear mode) the noise shift are
    recomputed from stored history by trapezoidal quadrature each step, the
    only route available when the kernel admits no closed-form propagator.
    Second-order accurate, matching the surface coefficients.  ``kernel``
    must be supplied in nonlinear mode to evaluate alpha*(t, s).
    """
    grid = surface.grid
    out_idx, out_times = _output_plan(grid, output_stride)
    b = noise_block.shape[0]
    dt = grid.dt
    om = surface.omega
    n = grid.n_steps
    ts = grid.times()
    if nonlinear and kernel is None:
        raise ValueError("nonlinear surface integration needs the kernel for the noise shift")

    psi = np.empty((3, b), dtype=complex)
    psi[:] = np.asarray(psi0, dtype=complex)[:, None]
    z_full = noise_block[:, ::2]                     # (B, n+1)
    zt_hist = np.zeros((b, n + 1), dtype=complex)    # z (linear) or shifted z (nonlinear)
    jp_hist = np.zeros((b, n + 1), dtype=complex)
    states = np.empty((b, len(out_idx), 3), dtype=complex)
    drift = np.zeros((b, len(out_idx)))
    running = np.zeros(b)

    def dpsi(state, qq, zz, Fv, Gv):
        if nonlinear:
            d, jp = _nonlinear_dpsi(state, qq, zz, Fv, Gv, om)
            return np.asarray(d), jp
        return np.asarray(_linear_dpsi(state, qq, zz, Fv, Gv, om)), None

    def q_of(i, hist):
        w = _trapezoid_weights(i + 1, dt) * surface.P[i, : i + 1]
        return hist[:, : i + 1] @ w

    def shift_of(i, jp_cols):
        w = _trapezoid_weights(i + 1, dt) * np.conj(np.asarray(kernel.alpha(ts[i], ts[: i + 1])))
        return jp_cols @ w

    if nonlinear:
        p0, p1, p2 = psi
        inv = 1.0 / np.sum(psi.real**2 + psi.imag**2, axis=0)
        jp_hist[:, 0] = (SQRT2 * (p1.conj() * p0 + p2.conj() * p1) * inv).conj()
    zt_hist[:, 0] = z_full[:, 0]

    pos = 0
    if out_idx[0] == 0:
        states[:, 0, :] = psi.T
        pos = 1
    for i in range(n):
        q_i = q_of(i, zt_hist)
        k1, _ = dpsi(psi, q_i, zt_hist[:, i], surface.F[i], surface.G[i])
        pred = psi + dt * k1
        if nonlinear:
            pp0, pp1, pp2 = pred
            inv = 1.0 / np.sum(pred.real**2 + pred.imag**2, axis=0)
            jp_pred = (SQRT2 * (pp1.conj() * pp0 + pp2.conj() * pp1) * inv).conj()
            jp_hist[:, i + 1] = jp_pred
            zt_hist[:, i + 1] = z_full[:, i + 1] + shift_of(i + 1, jp_hist[:, : i + 2])
        else:
            zt_hist[:, i + 1] = z_full[:, i + 1]
        q_next = q_of(i + 1, zt_hist)
        k2, _ = dpsi(pred, q_next, zt_hist[:, i + 1], surface.F[i + 1], surface.G[i + 1])
        psi = psi + (0.5 * dt) * (k1 + k2)
        t_now = ts[i + 1]
        _check_finite(psi, t_now, batch_start)
        if nonlinear:
            norm = np.sqrt(np.sum(psi.real**2 + psi.imag**2, axis=0))
            if np.any(norm < NORM_COLLAPSE):
                bad = int(np.argmin(norm))
                raise DegenerateStateError(
                    f"trajectory {batch_start + bad} norm collapsed at t = {t_now:.6g}"
                )
            np.maximum(running, np.abs(norm - 1.0), out=running)
            psi = psi / norm
            p0, p1, p2 = psi
            jp_hist[:, i + 1] = (SQRT2 * (p1.conj() * p0 + p2.conj() * p1)).conj()
            zt_hist[:, i + 1] = z_full[:, i + 1] + shift_of(i + 1, jp_hist[:, : i + 2])
        if pos < len(out_idx) and i + 1 == out_idx[pos]:
            states[:, pos, :] = psi.T
            drift[:, pos] = running
            running = np.zeros(b)
            pos += 1
    return out_times, states, (drift if nonlinear else None)
