import numpy as np
import pytest
from scipy.signal import lfilter

from qsd3.exceptions import GridMismatchError, KernelError
from qsd3.grid import TimeGrid
from qsd3.noise import (
    NoisePath,
    OUKernel,
    TabulatedKernel,
    cholesky_factor,
    empirical_covariance,
    kernel_covariance,
    lag_covariance,
    ou_correlation,
    sample_cholesky_path,
    sample_ou_path,
    trajectory_rng,
)


def bulk_ou_paths(gamma, grid, n_paths, seed):
    """Fast block sampler for statistical tests (one shared generator)."""
    rng = np.random.default_rng(seed)
    n = grid.n_half
    decay = np.exp(-gamma * grid.half_dt)
    raw = rng.standard_normal((n_paths, n, 2))
    w = (raw[..., 0] + 1j * raw[..., 1]) / np.sqrt(2.0)
    driver = np.empty((n_paths, n), dtype=complex)
    driver[:, 0] = np.sqrt(gamma / 2.0) * w[:, 0]
    driver[:, 1:] = np.sqrt((gamma / 2.0) * (1.0 - decay * decay)) * w[:, 1:]
    samples = lfilter([1.0], [1.0, -decay], driver, axis=1)
    return [NoisePath(grid=grid, samples=s) for s in samples]


class TestOUCorrelation:
    def test_zero_lag(self):
        assert ou_correlation(2.0, 1.3, 1.3) == pytest.approx(1.0)
        assert ou_correlation(0.2, 0.7, 0.7) == pytest.approx(0.1)

    def test_log4_lag(self):
        assert ou_correlation(1.0, np.log(4.0), 0.0) == pytest.approx(0.125)

    def test_rejects_bad_gamma(self):
        with pytest.raises(ValueError):
            ou_correlation(0.0, 1.0, 0.0)
        with pytest.raises(ValueError):
            OUKernel(-1.0)


class TestOUSampler:
    def test_reproducible(self):
        grid = TimeGrid(dt=0.1, n_steps=50)
        a = sample_ou_path(0.5, grid, trajectory_rng(9, 3))
        b = sample_ou_path(0.5, grid, trajectory_rng(9, 3))
        c = sample_ou_path(0.5, grid, trajectory_rng(9, 4))
        assert np.array_equal(a.samples, b.samples)
        assert not np.array_equal(a.samples, c.samples)

    def test_stationary_magnitude(self):
        # E|z|^2 = gamma/2 at every grid time
        gamma = 0.8
        grid = TimeGrid(dt=1.0, n_steps=2)
        paths = bulk_ou_paths(gamma, grid, 100_000, seed=10)
        z = np.stack([p.samples for p in paths])
        for k in range(grid.n_half):
            est = np.mean(np.abs(z[:, k]) ** 2)
            assert abs(est - gamma / 2.0) < 0.02 * (gamma / 2.0)

    def test_correlation_at_memory_time(self):
        gamma = 0.8
        grid = TimeGrid(dt=1.0 / gamma, n_steps=2)  # lag 1/gamma = 2 half-steps
        paths = bulk_ou_paths(gamma, grid, 100_000, seed=11)
        (conj, rel) = empirical_covariance(paths, [(2.0 / gamma, 1.0 / gamma)])
        est, se = conj[0]
        assert abs(est - (gamma / 2.0) * np.exp(-1.0)) < 3.0 * se
        rel_est, rel_se = rel[0]
        assert abs(rel_est) < 3.0 * rel_se

    def test_grid_refinement_consistency(self):
        # exact recursion: halving dt leaves the law at shared times unchanged
        gamma = 1.0
        coarse = TimeGrid(dt=0.5, n_steps=4)
        fine = TimeGrid(dt=0.25, n_steps=8)
        pc = bulk_ou_paths(gamma, coarse, 40_000, seed=12)
        pf = bulk_ou_paths(gamma, fine, 40_000, seed=13)
        (conj_c, _) = empirical_covariance(pc, [(2.0, 0.5)])
        (conj_f, _) = empirical_covariance(pf, [(2.0, 0.5)])
        (ec, sc), (ef, sf) = conj_c[0], conj_f[0]
        assert abs(ec - ef) < 3.0 * np.hypot(sc, sf)

    def test_stderr_scaling_with_ensemble_size(self):
        gamma = 1.0
        grid = TimeGrid(dt=1.0, n_steps=1)
        small = bulk_ou_paths(gamma, grid, 2_000, seed=14)
        big = bulk_ou_paths(gamma, grid, 8_000, seed=15)
        se_small = empirical_covariance(small, [(1.0, 0.0)])[0][0][1]
        se_big = empirical_covariance(big, [(1.0, 0.0)])[0][0][1]
        assert 1.6 < se_small / se_big < 2.4


class TestCholeskySampler:
    def test_matches_ou_correlation(self):
        gamma = 0.5
        grid = TimeGrid(dt=0.5, n_steps=4)  # half grid covers lags 0..2
        kernel = OUKernel(gamma)
        factor = cholesky_factor(kernel, grid)
        rng = np.random.default_rng(16)
        paths = [sample_cholesky_path(kernel, grid, rng, factor=factor) for _ in range(10_000)]
        for lag_t in (0.0, 1.0, 2.0):
            steps = grid.half_index(lag_t)
            est, se, rel, rel_se = lag_covariance(paths, steps)
            exact = ou_correlation(gamma, lag_t, 0.0)
            assert abs(est - exact) < 0.05 * exact
            assert abs(rel) < 4.0 * rel_se

    def test_cross_method_equivalence(self):
        gamma = 0.5
        grid = TimeGrid(dt=0.5, n_steps=4)
        kernel = OUKernel(gamma)
        factor = cholesky_factor(kernel, grid)
        rng = np.random.default_rng(17)
        chol = [sample_cholesky_path(kernel, grid, rng, factor=factor) for _ in range(8_000)]
        recur = bulk_ou_paths(gamma, grid, 8_000, seed=18)
        for steps in (0, 2, 4):
            e1, s1, _, _ = lag_covariance(chol, steps)
            e2, s2, _, _ = lag_covariance(recur, steps)
            assert abs(e1 - e2) < 3.0 * np.hypot(s1, s2)

    def test_single_point_variance(self):
        grid = TimeGrid(dt=0.1, n_steps=1)
        kernel = OUKernel(3.0)
        rng = np.random.default_rng(19)
        z0 = np.array([sample_cholesky_path(kernel, grid, rng).samples[0] for _ in range(20_000)])
        est = np.mean(np.abs(z0) ** 2)
        assert abs(est - kernel.at_zero) < 0.05 * kernel.at_zero

    def test_tabulated_kernel_reproduced(self):
        # two-point tabulated kernel on a tiny grid, checked at all grid pairs
        grid = TimeGrid(dt=0.2, n_steps=2)
        lags = np.linspace(0.0, 0.4, 9)
        kernel = TabulatedKernel(lags=lags, values=0.7 * np.exp(-2.0 * lags))
        factor = cholesky_factor(kernel, grid)
        rng = np.random.default_rng(20)
        z = np.stack(
            [sample_cholesky_path(kernel, grid, rng, factor=factor).samples for _ in range(30_000)]
        )
        cov = kernel_covariance(kernel, grid)
        emp = z.conj().T @ z / z.shape[0]
        assert np.max(np.abs(emp.T - cov)) < 0.05 * kernel.at_zero

    def test_zero_kernel_is_allowed(self):
        grid = TimeGrid(dt=0.2, n_steps=2)
        kernel = TabulatedKernel(lags=np.array([0.0, 0.5]), values=np.zeros(2, dtype=complex))
        path = sample_cholesky_path(kernel, grid, np.random.default_rng(0))
        assert np.all(path.samples == 0.0)

    def test_non_psd_kernel_names_minor(self):
        grid = TimeGrid(dt=0.2, n_steps=2)
        kernel = TabulatedKernel(
            lags=np.array([0.0, 0.1, 0.2, 0.3, 0.4]),
            values=np.array([0.1, 0.9, 1.0, 0.9, 0.8], dtype=complex),
        )
        with pytest.raises(KernelError, match="leading minor of order"):
            cholesky_factor(kernel, grid)


class TestKernelValidation:
    def test_lags_must_start_at_zero(self):
        with pytest.raises(KernelError):
            TabulatedKernel(lags=np.array([0.1, 0.2]), values=np.ones(2, dtype=complex))

    def test_alpha0_must_be_real(self):
        with pytest.raises(KernelError):
            TabulatedKernel(lags=np.array([0.0, 0.1]), values=np.array([1j, 0.0]))

    def test_spacing_check(self):
        kernel = TabulatedKernel(lags=np.array([0.0, 1.0]), values=np.array([1.0, 0.5 + 0j]))
        with pytest.raises(KernelError, match="spacing"):
            kernel.check_spacing(TimeGrid(dt=0.1, n_steps=10))

    def test_hermitian_extension(self):
        kernel = TabulatedKernel(
            lags=np.array([0.0, 1.0]), values=np.array([1.0, 0.5 + 0.2j])
        )
        assert kernel.alpha(1.0, 0.0) == pytest.approx(0.5 + 0.2j)
        assert kernel.alpha(0.0, 1.0) == pytest.approx(0.5 - 0.2j)


class TestEmpiricalCovariance:
    def test_identical_constant_paths(self):
        grid = TimeGrid(dt=0.1, n_steps=1)
        paths = [NoisePath(grid=grid, samples=np.ones(3, dtype=complex)) for _ in range(5)]
        (conj, rel) = empirical_covariance(paths, [(0.1, 0.0)])
        assert conj[0] == (1.0 + 0.0j, 0.0)
        assert rel[0] == (1.0 + 0.0j, 0.0)

    def test_two_paths_plus_minus(self):
        grid = TimeGrid(dt=0.1, n_steps=1)
        paths = [
            NoisePath(grid=grid, samples=np.full(3, v, dtype=complex)) for v in (1.0, -1.0)
        ]
        (conj, rel) = empirical_covariance(paths, [(0.0, 0.0)])
        assert conj[0][0] == pytest.approx(1.0)
        assert rel[0][0] == pytest.approx(1.0)

    def test_zero_lag_value(self):
        gamma = 1.0
        grid = TimeGrid(dt=1.0, n_steps=1)
        paths = bulk_ou_paths(gamma, grid, 10_000, seed=21)
        (conj, _) = empirical_covariance(paths, [(1.0, 1.0)])
        est, se = conj[0]
        assert est.real == pytest.approx(0.5, abs=4.0 * se + 1e-3)

    def test_grid_mismatch(self):
        g1 = TimeGrid(dt=0.1, n_steps=1)
        g2 = TimeGrid(dt=0.2, n_steps=1)
        paths = [
            NoisePath(grid=g1, samples=np.ones(3, dtype=complex)),
            NoisePath(grid=g2, samples=np.ones(3, dtype=complex)),
        ]
        with pytest.raises(GridMismatchError):
            empirical_covariance(paths, [(0.0, 0.0)])


def test_noise_path_validation_and_dump(tmp_path):
    grid = TimeGrid(dt=0.1, n_steps=2)
    with pytest.raises(GridMismatchError):
        NoisePath(grid=grid, samples=np.ones(4, dtype=complex))
    with pytest.raises(ValueError):
        NoisePath(grid=grid, samples=np.full(5, np.nan, dtype=complex))
    path = sample_ou_path(1.0, grid, trajectory_rng(0, 0))
    out = tmp_path / "path.csv"
    path.to_csv(out)
    lines = out.read_text().splitlines()
    assert lines[0] == "t,re_z,im_z"
    assert len(lines) == 6
    assert path.at(0.05) == path.samples[1]
