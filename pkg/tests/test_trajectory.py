import numpy as np
import pytest

from qsd3.algebra import spin1_operators
from qsd3.coefficients import (
    CoefficientSet,
    closed_form_P,
    integrate_general_kernel,
    integrate_ou_coefficients,
)
from qsd3.exceptions import DivergenceError
from qsd3.grid import TimeGrid
from qsd3.noise import NoisePath, OUKernel, sample_ou_path, trajectory_rng
from qsd3.trajectory import (
    integrate_surface_trajectories,
    memory_integral_general,
    propagate_noise_integral,
    run_linear_trajectory,
    run_markov_trajectory,
    run_nonlinear_trajectory,
)
from qsd3.coefficients import _trapezoid_weights

OPS = spin1_operators()
KET0 = np.array([0.0, 0.0, 1.0], dtype=complex)
PLUS = np.array([1.0, 1.0, 1.0], dtype=complex) / np.sqrt(3.0)


def zero_coefficients(grid, omega=1.0):
    """Closed-system coefficient set (no environment)."""
    n = grid.n_half
    z = np.zeros(n, dtype=complex)
    return CoefficientSet(grid=grid, F=z, G=z, Pbar=z, logE=z, kappa=z,
                          gamma=None, omega=omega)


def zero_noise(grid):
    return NoisePath(grid=grid, samples=np.zeros(grid.n_half, dtype=complex))


class TestDarkState:
    @pytest.mark.parametrize("gamma", [0.2, 0.8, 2.0])
    def test_all_modes_leave_ground_state_invariant(self, gamma):
        grid = TimeGrid.from_horizon(0.01, 3.0)
        coeffs = integrate_ou_coefficients(gamma, 1.0, grid)
        for seed in range(5):
            noise = sample_ou_path(gamma, grid, trajectory_rng(100, seed))
            lin = run_linear_trajectory(coeffs, noise, KET0, output_stride=50)
            non = run_nonlinear_trajectory(coeffs, noise, KET0, output_stride=50)
            mk = run_markov_trajectory(1.0, KET0, grid, trajectory_rng(200, seed), 50)
            for rec in (lin, non, mk):
                assert np.max(np.abs(np.abs(rec.states[:, 2]) - 1.0)) < 1e-8
                assert np.max(np.abs(rec.states[:, :2])) < 1e-12

    def test_linear_ground_state_phase(self):
        omega = 1.0
        grid = TimeGrid.from_horizon(0.01, 2.0)
        coeffs = integrate_ou_coefficients(0.5, omega, grid)
        noise = sample_ou_path(0.5, grid, trajectory_rng(3, 0))
        rec = run_linear_trajectory(coeffs, noise, KET0, output_stride=20)
        expected = np.exp(1j * omega * rec.times)
        assert np.max(np.abs(rec.states[:, 2] - expected)) < 1e-9


class TestClosedSystemLimit:
    def test_pure_unitary_evolution(self):
        grid = TimeGrid.from_horizon(0.01, 10.0)
        coeffs = zero_coefficients(grid)
        rec = run_linear_trajectory(coeffs, zero_noise(grid), PLUS, output_stride=100)
        norms = np.linalg.norm(rec.states, axis=1)
        assert np.max(np.abs(norms - 1.0)) < 1e-10
        jz = np.einsum("ti,ij,tj->t", rec.states.conj(), OPS["Jz"], rec.states).real
        assert np.max(np.abs(jz - jz[0])) < 1e-10


class TestNoiseIntegralPropagation:
    def test_zero_source_stays_zero(self):
        grid = TimeGrid(dt=0.01, n_steps=10)
        coeffs = integrate_ou_coefficients(0.5, 1.0, grid)
        q = 0.0 + 0.0j
        for _ in range(10):
            q = propagate_noise_integral(q, coeffs, 0.0, 0.5, 1.3 - 0.2j, 0.01)
        assert q == 0.0

    def test_rk4_matches_constant_coefficient_solution(self):
        grid = TimeGrid(dt=0.01, n_steps=10)
        coeffs = integrate_ou_coefficients(0.5, 1.0, grid)
        gamma, omega = 0.5, 1.0
        f_t, g_t, z = 0.4 + 0.05j, -0.1 + 0.2j, 0.7 - 0.3j
        kappa = -gamma + 2j * omega + 4.0 * f_t - 2.0 * g_t
        q0 = 0.2 + 0.1j

        def exact(dt):
            return q0 * np.exp(kappa * dt) + (-1j * g_t * z) * (np.exp(kappa * dt) - 1.0) / kappa

        err = {}
        for dt in (0.1, 0.05):
            got = propagate_noise_integral(q0, coeffs, g_t, f_t, z, dt)
            err[dt] = abs(got - exact(dt))
        assert err[0.1] / err[0.05] > 25.0  # fifth-order local error

    def test_ode_route_matches_quadrature_of_closed_form(self):
        # Q(t) accumulated by the trajectory integrator vs direct quadrature
        gamma, omega, t_end = 0.5, 1.0, 2.0
        grid = TimeGrid.from_horizon(0.005, t_end)
        coeffs = integrate_ou_coefficients(gamma, omega, grid)
        noise = sample_ou_path(gamma, grid, trajectory_rng(5, 1))
        rec = run_linear_trajectory(coeffs, noise, PLUS, output_stride=grid.n_steps,
                                    record_q=True)
        ts = grid.half_times()
        pvals = np.array([closed_form_P(coeffs, t_end, s) for s in ts])
        quad = np.trapezoid(pvals * noise.samples, dx=grid.half_dt)
        assert abs(rec.q[-1] - quad) < 1e-4

    def test_stepwise_midpoint_chain_matches_quadrature(self):
        gamma, omega, t_end = 0.5, 1.0, 2.0
        grid = TimeGrid.from_horizon(0.005, t_end)
        coeffs = integrate_ou_coefficients(gamma, omega, grid)
        noise = sample_ou_path(gamma, grid, trajectory_rng(5, 2))
        q = 0.0 + 0.0j
        for step in range(grid.n_steps):
            mid = 2 * step + 1
            q = propagate_noise_integral(
                q, coeffs, coeffs.G[mid], coeffs.F[mid], noise.samples[mid], grid.dt
            )
        ts = grid.half_times()
        pvals = np.array([closed_form_P(coeffs, t_end, s) for s in ts])
        quad = np.trapezoid(pvals * noise.samples, dx=grid.half_dt)
        assert abs(q - quad) < 1e-4


class TestNonlinearTrajectory:
    def test_norm_drift_scales_with_step(self):
        gamma, omega = 0.5, 1.0
        drifts = {}
        for dt in (0.01, 0.005):
            grid = TimeGrid.from_horizon(dt, 2.0)
            coeffs = integrate_ou_coefficients(gamma, omega, grid)
            noise = sample_ou_path(gamma, grid, trajectory_rng(7, 0))
            rec = run_nonlinear_trajectory(coeffs, noise, PLUS, output_stride=grid.n_steps)
            drifts[dt] = np.max(rec.norm_drift)
        for dt, drift in drifts.items():
            assert drift < 10.0 * dt * dt

    def test_states_stay_normalized(self):
        grid = TimeGrid.from_horizon(0.01, 3.0)
        coeffs = integrate_ou_coefficients(2.0, 1.0, grid)
        noise = sample_ou_path(2.0, grid, trajectory_rng(8, 0))
        rec = run_nonlinear_trajectory(coeffs, noise, PLUS, output_stride=10)
        assert np.max(np.abs(np.linalg.norm(rec.states, axis=1) - 1.0)) < 1e-9

    def test_requires_normalized_initial_state(self):
        grid = TimeGrid(dt=0.01, n_steps=10)
        coeffs = integrate_ou_coefficients(0.5, 1.0, grid)
        with pytest.raises(ValueError, match="normalized"):
            run_nonlinear_trajectory(coeffs, zero_noise(grid), 2.0 * PLUS)

    def test_rejects_constant_coefficient_variant(self):
        grid = TimeGrid(dt=0.01, n_steps=10)
        with pytest.raises(ValueError, match="OU coefficient"):
            run_nonlinear_trajectory(zero_coefficients(grid), zero_noise(grid), PLUS)

    def test_determinism(self):
        grid = TimeGrid.from_horizon(0.01, 1.0)
        coeffs = integrate_ou_coefficients(0.8, 1.0, grid)
        noise = sample_ou_path(0.8, grid, trajectory_rng(9, 0))
        a = run_nonlinear_trajectory(coeffs, noise, PLUS, output_stride=10)
        b = run_nonlinear_trajectory(coeffs, noise, PLUS, output_stride=10)
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.norm_drift, b.norm_drift)


class TestDivergenceDetection:
    def test_absurd_noise_raises_with_index(self):
        grid = TimeGrid(dt=0.5, n_steps=40)
        coeffs = integrate_ou_coefficients(0.5, 1.0, grid)
        samples = np.full(grid.n_half, 1e160 + 0j)
        noise = NoisePath(grid=grid, samples=samples)
        with pytest.raises(DivergenceError) as err, np.errstate(over="ignore", invalid="ignore"):
            run_linear_trajectory(coeffs, noise, PLUS)
        assert err.value.trajectory == 0
        assert err.value.t is not None


class TestMarkovTrajectory:
    def test_middle_level_population_decay(self):
        # rho_11(t) = exp(-2t) for the white-noise cascade
        grid = TimeGrid.from_horizon(0.005, 1.0)
        ket1 = np.array([0.0, 1.0, 0.0], dtype=complex)
        n_traj = 600
        pops = np.zeros(grid.n_steps // 100 + 1)
        for i in range(n_traj):
            rec = run_markov_trajectory(1.0, ket1, grid, trajectory_rng(400, i), 100)
            pops += np.abs(rec.states[:, 1]) ** 2
        pops /= n_traj
        ts = rec.times
        se = np.sqrt(np.exp(-2 * ts) * (1 - np.exp(-2 * ts)) / n_traj) + 0.01
        assert np.max(np.abs(pops - np.exp(-2.0 * ts)) / se) < 3.5


class TestGeneralKernelRoute:
    def test_memory_integral_trivial_cases(self):
        grid = TimeGrid.from_horizon(0.01, 1.0)
        surface = integrate_general_kernel(OUKernel(0.5), 1.0, grid)
        noise = sample_ou_path(0.5, grid, trajectory_rng(11, 0))
        assert memory_integral_general(surface, noise, 0) == 0.0
        k = 40
        assert surface.P[0].max() == 0.0
        with pytest.raises(ValueError):
            memory_integral_general(surface, noise, grid.n_steps + 1)
        assert memory_integral_general(surface, noise, k) != 0.0

    def test_quadrature_matches_ode_route_on_shared_noise(self):
        gamma, omega = 0.5, 1.0
        grid = TimeGrid.from_horizon(0.005, 2.5)
        coeffs = integrate_ou_coefficients(gamma, omega, grid)
        surface = integrate_general_kernel(OUKernel(gamma), omega, grid)
        noise = sample_ou_path(gamma, grid, trajectory_rng(12, 0))
        rec = run_linear_trajectory(coeffs, noise, PLUS, output_stride=100, record_q=True)
        for pos, t_idx in enumerate(range(0, grid.n_steps + 1, 100)):
            quad = memory_integral_general(surface, noise, t_idx)
            assert abs(rec.q[pos] - quad) < 1e-4

    def test_surface_trajectories_match_ou_fast_path_statistically(self):
        # same physics through the tabulated-kernel Heun route and the OU RK4
        # route; independent noise, so compare ensemble means loosely
        gamma, omega = 0.8, 1.0
        grid = TimeGrid.from_horizon(0.01, 2.0)
        coeffs = integrate_ou_coefficients(gamma, omega, grid)
        surface = integrate_general_kernel(OUKernel(gamma), omega, grid)
        kernel = OUKernel(gamma)
        n_b = 300
        block = np.stack(
            [sample_ou_path(gamma, grid, trajectory_rng(500, i)).samples for i in range(n_b)]
        )
        _, states_fast, _, _ = __import__("qsd3.trajectory", fromlist=["x"]).integrate_nonlinear_batch(
            coeffs, block, PLUS, output_stride=50
        )
        _, states_surf, _ = integrate_surface_trajectories(
            surface, block, PLUS, output_stride=50, nonlinear=True, kernel=kernel
        )
        jz_fast = np.mean(np.abs(states_fast[:, :, 0]) ** 2 - np.abs(states_fast[:, :, 2]) ** 2, axis=0)
        jz_surf = np.mean(np.abs(states_surf[:, :, 0]) ** 2 - np.abs(states_surf[:, :, 2]) ** 2, axis=0)
        assert np.max(np.abs(jz_fast - jz_surf)) < 0.02


def test_trapezoid_weights():
    w = _trapezoid_weights(5, 0.1)
    assert np.allclose(w, [0.05, 0.1, 0.1, 0.1, 0.05])
    assert np.allclose(_trapezoid_weights(1, 0.1), [0.0])
