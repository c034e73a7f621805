"""Ensemble fan-out and reduction to the reduced density matrix.

Trajectory payloads are combined along a fixed dyadic tree keyed to the
trajectory index: an accumulator keeps the maximal aligned power-of-two
decomposition of its (contiguous) index range, and nodes are only ever
added when they are exact tree siblings.  Because every tree node's value
is then uniquely determined by the leaf payloads, any contiguous sharding
of an index range — one worker, many workers, or separately merged
accumulators — reproduces the same floating-point totals bit for bit.

Besides the running projector sum, each payload carries the second-moment
matrix of vectorized projectors and the trace moments needed to evaluate a
one-pass jackknife standard error for the (nonlinear in rho) purity, plus
per-observable sums of squares for ordinary standard errors.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .algebra import SQRT2
from .coefficients import integrate_general_kernel, integrate_ou_coefficients
from .config import ExperimentConfig
from .exceptions import ConfigError, GridMismatchError
from .noise import cholesky_factor, sample_cholesky_path, sample_ou_block, trajectory_rng
from .trajectory import (
    integrate_linear_batch,
    integrate_markov_batch,
    integrate_nonlinear_batch,
    integrate_surface_trajectories,
    sample_wiener_block,
)

CHUNK = 512  # trajectories integrated per vectorized batch


@dataclass
class _Payload:
    """Additive per-node statistics; drift combines by elementwise max."""

    proj: np.ndarray    # (T, 3, 3) complex, sum of projectors
    m2: np.ndarray      # (T, 9, 9) complex, sum of vecP vecP^dag
    v2: np.ndarray      # (T, 9) complex, sum of tr^2 vecP
    tr1: np.ndarray     # (T,) sums of tr, tr^2, tr^4
    tr2: np.ndarray
    tr4: np.ndarray
    obs: np.ndarray     # (T, 3) sums of <Jx>, <Jy>, <Jz> samples
    obs2: np.ndarray    # (T, 3) sums of squares
    drift: np.ndarray   # (T,) max pre-normalization norm drift

    def __add__(self, other):
        return _Payload(
            proj=self.proj + other.proj,
            m2=self.m2 + other.m2,
            v2=self.v2 + other.v2,
            tr1=self.tr1 + other.tr1,
            tr2=self.tr2 + other.tr2,
            tr4=self.tr4 + other.tr4,
            obs=self.obs + other.obs,
            obs2=self.obs2 + other.obs2,
            drift=np.maximum(self.drift, other.drift),
        )


def trajectory_payload(states: np.ndarray, drift: np.ndarray | None = None) -> _Payload:
    """Statistics of one trajectory's (T, 3) state series."""
    psi = np.asarray(states, dtype=complex)
    proj = np.einsum("ti,tj->tij", psi, psi.conj())
    vec = proj.reshape(psi.shape[0], 9)
    m2 = np.einsum("ti,tj->tij", vec, vec.conj())
    tr = np.sum(np.abs(psi) ** 2, axis=1)
    jminus = SQRT2 * (psi[:, 1].conj() * psi[:, 0] + psi[:, 2].conj() * psi[:, 1])
    obs = np.stack(
        [jminus.real, -jminus.imag, np.abs(psi[:, 0]) ** 2 - np.abs(psi[:, 2]) ** 2],
        axis=1,
    )
    return _Payload(
        proj=proj,
        m2=m2,
        v2=(tr**2)[:, None] * vec,
        tr1=tr,
        tr2=tr**2,
        tr4=tr**4,
        obs=obs,
        obs2=obs**2,
        drift=np.zeros(psi.shape[0]) if drift is None else np.asarray(drift, dtype=float),
    )


@dataclass
class EnsembleAccumulator:
    """Mergeable reduction state over a contiguous trajectory index range."""

    times: np.ndarray
    mode: str
    nodes: list = field(default_factory=list)   # (start, size, payload), dyadic
    lo: int | None = None
    hi: int | None = None

    @property
    def count(self) -> int:
        return 0 if self.lo is None else self.hi - self.lo

    def add_trajectory(self, index: int, payload: _Payload):
        if self.lo is None:
            self.lo = self.hi = int(index)
        elif index != self.hi:
            raise GridMismatchError(
                f"trajectories must be added contiguously: expected {self.hi}, got {index}"
            )
        self.nodes.append((int(index), 1, payload))
        self.hi = int(index) + 1
        self._cascade()

    def _cascade(self):
        # combine exact dyadic siblings only, so node values are path-independent
        while len(self.nodes) >= 2:
            s1, n1, p1 = self.nodes[-2]
            s2, n2, p2 = self.nodes[-1]
            if n1 == n2 and s1 % (2 * n1) == 0 and s1 + n1 == s2:
                self.nodes[-2:] = [(s1, 2 * n1, p1 + p2)]
            else:
                break

    def totals(self) -> _Payload:
        if not self.nodes:
            raise ValueError("empty accumulator has no totals")
        total = self.nodes[0][2]
        for _, _, p in self.nodes[1:]:
            total = total + p
        return total


def merge_accumulators(a: EnsembleAccumulator, b: EnsembleAccumulator) -> EnsembleAccumulator:
    """Combine accumulators over adjacent index ranges (either argument order)."""
    if a.mode != b.mode or a.times.shape != b.times.shape or not np.array_equal(a.times, b.times):
        raise GridMismatchError("accumulators disagree on output grid or mode")
    if a.lo is None:
        return replace(b, nodes=list(b.nodes))
    if b.lo is None:
        return replace(a, nodes=list(a.nodes))
    first, second = (a, b) if a.lo <= b.lo else (b, a)
    if first.hi != second.lo:
        raise GridMismatchError(
            f"accumulator ranges [{first.lo}, {first.hi}) and [{second.lo}, {second.hi}) "
            "are not adjacent"
        )
    merged = EnsembleAccumulator(
        times=a.times, mode=a.mode,
        nodes=list(first.nodes) + list(second.nodes),
        lo=first.lo, hi=second.hi,
    )
    changed = True
    while changed:
        changed = False
        k = 0
        while k + 1 < len(merged.nodes):
            s1, n1, p1 = merged.nodes[k]
            s2, n2, p2 = merged.nodes[k + 1]
            if n1 == n2 and s1 % (2 * n1) == 0 and s1 + n1 == s2:
                merged.nodes[k : k + 2] = [(s1, 2 * n1, p1 + p2)]
                changed = True
            else:
                k += 1
    return merged


def reduce_density(acc: EnsembleAccumulator, t_index: int, trace_normalize: bool = False) -> np.ndarray:
    """Mean projector at one output time, Hermitized; optionally trace 1."""
    if acc.count == 0:
        raise ValueError("cannot reduce an empty accumulator")
    total = acc.totals()
    rho = total.proj[t_index] / acc.count
    rho = 0.5 * (rho + rho.conj().T)
    if trace_normalize:
        rho = rho / np.trace(rho).real
    return rho


def _sample_se(sums, sums_sq, m):
    var = np.clip((sums_sq - sums**2 / m) / (m - 1), 0.0, None)
    return np.sqrt(var / m)


def _purity_stats(total: _Payload, m: int):
    """Trace-normalized purity and its jackknife standard error.

    With rank-one summands a_i = Tr[S P_i] and b_i = tr_i^2 reduce the
    delete-one purities to moments already accumulated; for unit-trace
    payloads (nonlinear/markov modes) the jackknife is exact, otherwise the
    deleted trace in the denominator is replaced by its mean.
    """
    vec_s = total.proj.reshape(-1, 9)
    t2 = np.einsum("ti,ti->t", vec_s, vec_s.conj()).real
    m1 = total.tr1
    purity = t2 / m1**2
    if m < 2:
        return purity, np.zeros_like(purity)
    sum_a2 = np.einsum("ti,tij,tj->t", vec_s.conj(), total.m2, vec_s).real
    sum_ab = np.einsum("ti,ti->t", total.v2.conj(), vec_s).real
    var_a = np.clip(sum_a2 - t2**2 / m, 0.0, None)
    var_b = np.clip(total.tr4 - total.tr2**2 / m, 0.0, None)
    cov_ab = sum_ab - t2 * total.tr2 / m
    dev2 = np.clip(4.0 * var_a - 4.0 * cov_ab + var_b, 0.0, None)
    denom = (m1 - m1 / m) ** 2
    se = np.sqrt((m - 1) / m * dev2) / denom
    return purity, se


def standard_errors(acc: EnsembleAccumulator) -> dict:
    """Per-time standard errors of the scalar observables (needs count >= 2)."""
    m = acc.count
    if m < 2:
        raise ValueError(f"standard errors need at least 2 trajectories, have {m}")
    total = acc.totals()
    se = _sample_se(total.obs, total.obs2, m)
    _, purity_se = _purity_stats(total, m)
    return {"jx_se": se[:, 0], "jy_se": se[:, 1], "jz_se": se[:, 2], "purity_se": purity_se}


@dataclass(frozen=True)
class ObservableSeries:
    """Reduced ensemble output on the strided output grid."""

    times: np.ndarray
    jx: np.ndarray
    jx_se: np.ndarray
    jy: np.ndarray
    jy_se: np.ndarray
    jz: np.ndarray
    jz_se: np.ndarray
    purity: np.ndarray
    purity_se: np.ndarray
    rho: np.ndarray          # (T, 3, 3); raw mean projector (Eq.-(4)-style) per mode
    rho_se: np.ndarray       # (T, 3, 3) real, MC error of each entry
    n_traj: int
    mode: str
    rho_tn: np.ndarray | None = None     # trace-normalized variant (linear mode)
    raw_trace: np.ndarray | None = None  # mean trace of the raw estimator (linear mode)
    norm_drift: np.ndarray | None = None


def accumulator_to_series(acc: EnsembleAccumulator) -> ObservableSeries:
    m = acc.count
    if m == 0:
        raise ValueError("cannot summarize an empty accumulator")
    total = acc.totals()
    rho = total.proj / m
    rho = 0.5 * (rho + np.conj(np.transpose(rho, (0, 2, 1))))
    traces = total.tr1 / m
    rho_tn = rho / traces[:, None, None]
    if m >= 2:
        se = _sample_se(total.obs, total.obs2, m)
        m2diag = np.einsum("tkk->tk", total.m2).real
        vec_s = total.proj.reshape(-1, 9)
        var = np.clip((m2diag - np.abs(vec_s) ** 2 / m) / (m - 1), 0.0, None)
        rho_se = np.sqrt(var / m).reshape(-1, 3, 3)
    else:
        se = np.zeros_like(total.obs)
        rho_se = np.zeros_like(rho, dtype=float)
    purity, purity_se = _purity_stats(total, m)
    linear = acc.mode == "linear"
    return ObservableSeries(
        times=acc.times,
        jx=total.obs[:, 0] / m, jx_se=se[:, 0],
        jy=total.obs[:, 1] / m, jy_se=se[:, 1],
        jz=total.obs[:, 2] / m, jz_se=se[:, 2],
        purity=purity, purity_se=purity_se,
        rho=rho, rho_se=rho_se,
        n_traj=m, mode=acc.mode,
        rho_tn=rho_tn if linear else None,
        raw_trace=traces if linear else None,
        norm_drift=total.drift,
    )


def observables_from_densities(times, rhos, mode: str, n_traj: int = 0) -> ObservableSeries:
    """Wrap a deterministic density-matrix series (zero standard errors)."""
    from .algebra import spin1_operators

    ops = spin1_operators()
    rhos = np.asarray(rhos, dtype=complex)
    t = np.asarray(times, dtype=float)
    zeros = np.zeros(len(t))

    def expect(op):
        return np.einsum("ij,tji->t", op, rhos).real

    purity = np.einsum("tij,tji->t", rhos, rhos).real
    return ObservableSeries(
        times=t,
        jx=expect(ops["Jx"]), jx_se=zeros,
        jy=expect(ops["Jy"]), jy_se=zeros,
        jz=expect(ops["Jz"]), jz_se=zeros,
        purity=purity, purity_se=zeros,
        rho=rhos, rho_se=np.zeros_like(rhos, dtype=float),
        n_traj=n_traj, mode=mode,
    )


def _prepare(config: ExperimentConfig):
    grid = config.time_grid()
    psi0 = config.normalized_psi0()
    if config.mode == "markov_white":
        return grid, psi0, None, None, None
    kernel = config.kernel_spec()
    if config.uses_ou_kernel():
        coeffs = integrate_ou_coefficients(config.gamma, config.omega, grid)
        return grid, psi0, coeffs, None, None
    surface = integrate_general_kernel(kernel, config.omega, grid)
    factor = cholesky_factor(kernel, grid)
    return grid, psi0, None, surface, factor


def _run_range(config: ExperimentConfig, prep, lo: int, hi: int) -> EnsembleAccumulator:
    grid, psi0, coeffs, surface, factor = prep
    out_times = grid.times()[grid.output_indices(config.output_stride)]
    acc = EnsembleAccumulator(times=out_times, mode=config.mode)
    kernel = None if config.uses_ou_kernel() or config.mode == "markov_white" \
        else config.kernel_spec()
    for c0 in range(lo, hi, CHUNK):
        c1 = min(c0 + CHUNK, hi)
        b = c1 - c0
        if config.mode == "markov_white":
            block = np.stack(
                [sample_wiener_block(grid, trajectory_rng(config.master_seed, i))
                 for i in range(c0, c1)]
            )
            _, states = integrate_markov_batch(
                config.omega, block, psi0, grid, config.output_stride, batch_start=c0
            )
            drift = None
        else:
            if coeffs is not None:
                block = sample_ou_block(config.gamma, grid, config.master_seed, c0, b)
            else:
                block = np.stack(
                    [sample_cholesky_path(kernel, grid, trajectory_rng(config.master_seed, i),
                                          factor=factor).samples
                     for i in range(c0, c1)]
                )
            if coeffs is not None and config.mode == "nonlinear":
                _, states, drift, _ = integrate_nonlinear_batch(
                    coeffs, block, psi0, config.output_stride, batch_start=c0
                )
            elif coeffs is not None:
                _, states, _ = integrate_linear_batch(
                    coeffs, block, psi0, config.output_stride, batch_start=c0
                )
                drift = None
            else:
                _, states, drift = integrate_surface_trajectories(
                    surface, block, psi0, config.output_stride,
                    nonlinear=(config.mode == "nonlinear"), kernel=kernel, batch_start=c0,
                )
                if config.mode == "linear":
                    drift = None
        for row in range(b):
            acc.add_trajectory(
                c0 + row,
                trajectory_payload(states[row], None if drift is None else drift[row]),
            )
    return acc


def run_ensemble(config: ExperimentConfig) -> ObservableSeries:
    """Run config.n_traj independent trajectories and reduce them.

    Per-trajectory noise streams are seeded by (master_seed, index), the
    reduction tree is fixed by index, and workers receive contiguous index
    ranges, so the result is independent of worker count and bit-identical
    across reruns.
    """
    if config.mode not in ("linear", "nonlinear", "markov_white"):
        raise ConfigError(f"run_ensemble handles stochastic modes only, got {config.mode!r}")
    if config.n_traj < 1:
        raise ConfigError("n_traj must be >= 1")
    prep = _prepare(config)
    workers = max(1, config.workers)
    if workers == 1 or config.n_traj < 64:
        acc = _run_range(config, prep, 0, config.n_traj)
    else:
        bounds = np.linspace(0, config.n_traj, workers + 1).astype(int)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_run_range, config, prep, int(bounds[k]), int(bounds[k + 1]))
                for k in range(workers)
                if bounds[k + 1] > bounds[k]
            ]
            accs = [f.result() for f in futures]
        acc = accs[0]
        for nxt in accs[1:]:
            acc = merge_accumulators(acc, nxt)
    return accumulator_to_series(acc)
