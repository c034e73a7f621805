"""Time-dependent coefficients of the time-local diffusion equations.

Two independent routes compute the reduced coefficients F(t), G(t), Pbar(t):

* ``integrate_ou_coefficients``: for the Ornstein-Uhlenbeck kernel the
  coefficient system closes into three coupled complex ODEs, solved here
  with classical RK4 on the half-step grid.  The solver simultaneously
  accumulates log E(t) = int_0^t [-gamma + 2i omega + 4F - 2G] ds, which
  turns the two-time memory kernel P(t, s') into the closed form
  -i G(s') E(t) / E(s') (see :func:`closed_form_P`).

* ``integrate_general_kernel``: for an arbitrary stationary kernel the
  underlying two-time fields f(t, s), g(t, s) and the three-time field
  p(t, s, s') are marched forward in t with their boundary seeding
  f(t, t) = 1, g(t, t) = 0, p(t, s, t) = -i g(t, s), p(t, t, s') = 0,
  and the reductions are recomputed each step by trapezoidal quadrature
  against alpha(t, .).  Only the current-t slice of p is stored (O(N^2)
  memory).  Reductions vary within a step, so each step runs a cheap
  predictor (frozen reductions, Euler for p) followed by an RK4 corrector
  whose stage reductions are interpolated linearly in time; the overall
  scheme is second order, limited by the quadrature.

The two routes are analytically equivalent for the OU kernel, which the
test suite exploits as a cross-check.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DivergenceError
from .grid import TimeGrid
from .noise import KernelSpec, OUKernel, TabulatedKernel

GENERAL_KERNEL_MAX_STEPS = 4096  # p front is O(N^2) memory


@dataclass(frozen=True)
class CoefficientSet:
    """F, G, Pbar and log E sampled on the half-step grid.

    ``gamma is None`` marks the constant Markov-limit variant (F = 1/2,
    G = Pbar = 0), for which kappa and log E are identically zero.
    """

    grid: TimeGrid
    F: np.ndarray = field(repr=False)
    G: np.ndarray = field(repr=False)
    Pbar: np.ndarray = field(repr=False)
    logE: np.ndarray = field(repr=False)
    kappa: np.ndarray = field(repr=False)
    gamma: float | None
    omega: float

    def __post_init__(self):
        n = self.grid.n_half
        for name in ("F", "G", "Pbar", "logE", "kappa"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=complex)
            if arr.shape != (n,):
                raise ValueError(f"{name} must have shape ({n},), got {arr.shape}")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def to_csv(self, path):
        ts = self.grid.half_times()
        with open(path, "w") as fh:
            fh.write("t,re_F,im_F,re_G,im_G,re_Pbar,im_Pbar\n")
            for k, t in enumerate(ts):
                fh.write(
                    f"{t:.17g},{self.F[k].real:.17g},{self.F[k].imag:.17g},"
                    f"{self.G[k].real:.17g},{self.G[k].imag:.17g},"
                    f"{self.Pbar[k].real:.17g},{self.Pbar[k].imag:.17g}\n"
                )


def _ou_rhs(y, gamma, omega):
    f, g, pbar = y[0], y[1], y[2]
    a = -gamma + 1j * omega
    df = 0.5 * gamma + a * f + 2.0 * f * g - 2j * pbar
    dg = a * g - 2.0 * f * f + 6.0 * f * g - 2.0 * g * g - 2j * pbar
    dp = -0.5j * gamma * g + 2.0 * a * pbar + 4.0 * f * pbar - 2.0 * g * pbar
    dlog = -gamma + 2j * omega + 4.0 * f - 2.0 * g
    return np.array([df, dg, dp, dlog])


def integrate_ou_coefficients(gamma: float, omega: float, grid: TimeGrid) -> CoefficientSet:
    """Solve the OU coefficient ODEs with RK4 at half-step resolution.

    Initial conditions F(0) = G(0) = Pbar(0) = 0.  log E is integrated as a
    fourth state so exponent differences stay accurate over long horizons.
    """
    if not gamma > 0.0:
        raise ValueError(f"gamma must be positive, got {gamma!r}")
    h = grid.half_dt
    n = grid.n_half
    out = np.zeros((4, n), dtype=complex)
    y = np.zeros(4, dtype=complex)
    for k in range(1, n):
        k1 = _ou_rhs(y, gamma, omega)
        k2 = _ou_rhs(y + 0.5 * h * k1, gamma, omega)
        k3 = _ou_rhs(y + 0.5 * h * k2, gamma, omega)
        k4 = _ou_rhs(y + h * k3, gamma, omega)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y.view(float))):
            raise DivergenceError(
                f"coefficient integration diverged at t = {k * h:.6g}", t=k * h
            )
        out[:, k] = y
    kappa = -gamma + 2j * omega + 4.0 * out[0] - 2.0 * out[1]
    return CoefficientSet(
        grid=grid, F=out[0], G=out[1], Pbar=out[2], logE=out[3],
        kappa=kappa, gamma=gamma, omega=omega,
    )


def markov_coefficients(grid: TimeGrid, omega: float = 1.0) -> CoefficientSet:
    """Constant Markov-limit coefficients F = 1/2, G = Pbar = 0."""
    n = grid.n_half
    return CoefficientSet(
        grid=grid,
        F=np.full(n, 0.5, dtype=complex),
        G=np.zeros(n, dtype=complex),
        Pbar=np.zeros(n, dtype=complex),
        logE=np.zeros(n, dtype=complex),
        kappa=np.zeros(n, dtype=complex),
        gamma=None,
        omega=omega,
    )


def closed_form_P(coeffs: CoefficientSet, t: float, s_prime: float) -> complex:
    """P(t, s') = -i G(s') exp(log E(t) - log E(s')) for grid-aligned times."""
    if s_prime > t + 1e-12:
        raise ValueError(f"need s_prime <= t, got s_prime = {s_prime!r} > t = {t!r}")
    kt = coeffs.grid.half_index(t)
    ks = coeffs.grid.half_index(s_prime)
    return complex(-1j * coeffs.G[ks] * np.exp(coeffs.logE[kt] - coeffs.logE[ks]))


@dataclass(frozen=True)
class KernelCoefficientSurface:
    """Marched general-kernel fields and their reductions on the full-step grid.

    ``f[i, j]`` and ``g[i, j]`` hold f(t_i, s_j) for j <= i; ``P[i, k]`` holds
    P(t_i, s'_k) for k <= i; ``p_front[j, k]`` is p(t_n, s_j, s'_k) at the
    final time.  F, G, Pbar are the reduced coefficient series.
    """

    grid: TimeGrid
    F: np.ndarray = field(repr=False)
    G: np.ndarray = field(repr=False)
    Pbar: np.ndarray = field(repr=False)
    f: np.ndarray = field(repr=False)
    g: np.ndarray = field(repr=False)
    P: np.ndarray = field(repr=False)
    p_front: np.ndarray = field(repr=False)
    omega: float = 0.0

    def times(self) -> np.ndarray:
        return self.grid.times()


def _trapezoid_weights(npts: int, h: float) -> np.ndarray:
    w = np.full(npts, h)
    if npts == 1:
        return np.zeros(1)
    w[0] = w[-1] = 0.5 * h
    return w


def _fg_rhs(fv, gv, F, G, P, omega):
    df = (1j * omega + 2.0 * G) * fv - 2j * P
    dg = (1j * omega + 2.0 * F - 2.0 * G) * gv + (4.0 * G - 2.0 * F) * fv - 2j * P
    return df, dg


def _fg_rk4(f, g, omega, h, s1, sm, s2):
    """One RK4 step of the f/g fields; s* = (F, G, P-row) at start/mid/end.

    Returns the advanced fields plus the four stage field values (needed to
    assemble the matching update of the p field).
    """
    F1, G1, P1 = s1
    Fm, Gm, Pm = sm
    F2, G2, P2 = s2
    k1f, k1g = _fg_rhs(f, g, F1, G1, P1, omega)
    f2, g2 = f + 0.5 * h * k1f, g + 0.5 * h * k1g
    k2f, k2g = _fg_rhs(f2, g2, Fm, Gm, Pm, omega)
    f3, g3 = f + 0.5 * h * k2f, g + 0.5 * h * k2g
    k3f, k3g = _fg_rhs(f3, g3, Fm, Gm, Pm, omega)
    f4, g4 = f + h * k3f, g + h * k3g
    k4f, k4g = _fg_rhs(f4, g4, F2, G2, P2, omega)
    fn = f + (h / 6.0) * (k1f + 2.0 * k2f + 2.0 * k3f + k4f)
    gn = g + (h / 6.0) * (k1g + 2.0 * k2g + 2.0 * k3g + k4g)
    return fn, gn, (f, f2, f3, f4), (g, g2, g3, g4)


def integrate_general_kernel(
    kernel: KernelSpec, omega: float, grid: TimeGrid
) -> KernelCoefficientSurface:
    """March the coefficient fields for an arbitrary stationary kernel.

    The p equation is linear in p with a rank-one source, so its RK4 update
    collapses to one scaling of the current front plus three outer-product
    additions; per-step work is O(N^2) and the whole march O(N^3).
    """
    n = grid.n_steps
    if n > GENERAL_KERNEL_MAX_STEPS:
        raise ValueError(
            f"general-kernel march limited to {GENERAL_KERNEL_MAX_STEPS} steps "
            f"(O(N^2) memory), got {n}"
        )
    if isinstance(kernel, TabulatedKernel):
        kernel.check_spacing(grid)
    h = grid.dt
    ts = grid.times()

    f_hist = np.zeros((n + 1, n + 1), dtype=complex)
    g_hist = np.zeros((n + 1, n + 1), dtype=complex)
    P_hist = np.zeros((n + 1, n + 1), dtype=complex)
    F = np.zeros(n + 1, dtype=complex)
    G = np.zeros(n + 1, dtype=complex)
    Pbar = np.zeros(n + 1, dtype=complex)

    p = np.zeros((n + 1, n + 1), dtype=complex)
    f = np.zeros(n + 1, dtype=complex)
    g = np.zeros(n + 1, dtype=complex)
    f[0] = 1.0
    f_hist[0, 0] = 1.0

    Fi = 0.0 + 0.0j
    Gi = 0.0 + 0.0j
    Prow = np.zeros(n + 1, dtype=complex)

    for i in range(n):
        m = i + 1
        sl = slice(0, m)
        f0, g0, P0 = f[sl], g[sl], Prow[sl].copy()
        pb = p[0:m, 0:m]
        t_new = ts[m]
        alpha_row = np.asarray(kernel.alpha(t_new, ts[0 : m + 1]), dtype=complex)
        wA = _trapezoid_weights(m + 1, h) * alpha_row

        # predictor: frozen reductions, Euler for p; only used to estimate
        # the end-of-step reductions feeding the corrector stages.  The Euler
        # p advance never needs materializing: its reduction distributes as
        # wA @ [(1 + h c) p + h sig (x) P] = (1 + h c)(wA @ p) + h (wA . sig) P
        frozen = (Fi, Gi, P0)
        fp, gp, _, _ = _fg_rk4(f0, g0, omega, h, frozen, frozen, frozen)
        c1 = 2j * omega + 2.0 * Fi
        sig1 = 2.0 * (f0 - g0)
        fpe = np.append(fp, 1.0)
        gpe = np.append(gp, 0.0)
        F_end = complex(wA @ fpe)
        G_end = complex(wA @ gpe)
        P_end = np.empty(m + 1, dtype=complex)
        P_end[0:m] = (1.0 + h * c1) * (wA[0:m] @ pb) + (h * (wA[0:m] @ sig1)) * P0
        P_end[m] = -1j * G_end         # s' = t_new column is -i g(t_new, s)

        # corrector: RK4 with stage reductions interpolated linearly in time
        s_start = (Fi, Gi, P0)
        s_mid = (0.5 * (Fi + F_end), 0.5 * (Gi + G_end), 0.5 * (P0 + P_end[0:m]))
        s_end = (F_end, G_end, P_end[0:m])
        fn, gn, fs, gs = _fg_rk4(f0, g0, omega, h, s_start, s_mid, s_end)

        c = (
            2j * omega + 2.0 * Fi,
            2j * omega + 2.0 * s_mid[0],
            2j * omega + 2.0 * s_mid[0],
            2j * omega + 2.0 * F_end,
        )
        sig = [2.0 * (fs[k] - gs[k]) for k in range(4)]
        a1 = c[0]
        a2 = c[1] * (1.0 + 0.5 * h * a1)
        a3 = c[2] * (1.0 + 0.5 * h * a2)
        a4 = c[3] * (1.0 + h * a3)
        scale = 1.0 + (h / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        w_start = (h / 6.0) * sig[0] * (
            1.0 + h * c[1] + 0.5 * h * h * c[2] * c[1] + 0.25 * h**3 * c[3] * c[2] * c[1]
        )
        w_mid = (h / 6.0) * (
            sig[1] * (2.0 + h * c[2] + 0.5 * h * h * c[3] * c[2]) + sig[2] * (2.0 + h * c[3])
        )
        w_end = (h / 6.0) * sig[3]
        # the three rank-one source contributions collapse into one (m,3)x(3,m)
        # product, the dominant cost of the whole march
        w_stack = np.stack([w_start, w_mid, w_end])
        p_stack = np.stack([P0, s_mid[2], P_end[0:m]])
        pb *= scale
        pb += w_stack.T @ p_stack

        # seed the new boundary values and recompute reductions at t_new
        f[sl], g[sl] = fn, gn
        f[m], g[m] = 1.0, 0.0
        p[m, 0 : m + 1] = 0.0
        p[0 : m + 1, m] = -1j * g[0 : m + 1]
        Fi = complex(wA @ f[0 : m + 1])
        Gi = complex(wA @ g[0 : m + 1])
        Prow[0:m] = wA[0:m] @ p[0:m, 0:m]
        Prow[m] = -1j * Gi

        F[m], G[m] = Fi, Gi
        Pbar[m] = complex(wA @ Prow[0 : m + 1])
        if not (np.isfinite(F[m]) and np.isfinite(G[m]) and np.isfinite(Pbar[m])):
            bad = np.argwhere(~np.isfinite(p[0 : m + 1, 0 : m + 1]))
            where = f"(t, s) = ({t_new:.6g}, {ts[bad[0][0]]:.6g})" if len(bad) else f"t = {t_new:.6g}"
            raise DivergenceError(f"general-kernel march diverged at {where}", t=t_new)
        f_hist[m, 0 : m + 1] = f[0 : m + 1]
        g_hist[m, 0 : m + 1] = g[0 : m + 1]
        P_hist[m, 0 : m + 1] = Prow[0 : m + 1]

    return KernelCoefficientSurface(
        grid=grid, F=F, G=G, Pbar=Pbar, f=f_hist, g=g_hist, P=P_hist,
        p_front=p, omega=omega,
    )
