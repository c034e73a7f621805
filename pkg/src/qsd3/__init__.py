"""Exact diffusion-trajectory simulation of a dissipative three-level system.

The package integrates the time-local linear and norm-preserving stochastic
equations for a spin-1 system coupled to a zero-temperature bosonic
environment with Ornstein-Uhlenbeck (or arbitrary tabulated) correlation,
averages trajectory ensembles into the reduced density matrix, and checks
the result against deterministic Lindblad and pseudomode references.
"""

from .algebra import expectation, normalize, projector, purity, spin1_operators
from .coefficients import (
    CoefficientSet,
    KernelCoefficientSurface,
    closed_form_P,
    integrate_general_kernel,
    integrate_ou_coefficients,
    markov_coefficients,
)
from .config import ExperimentConfig, config_from_dict, config_from_file
from .ensemble import (
    EnsembleAccumulator,
    ObservableSeries,
    merge_accumulators,
    reduce_density,
    run_ensemble,
    standard_errors,
)
from .exceptions import (
    ConfigError,
    DegenerateStateError,
    DivergenceError,
    GridMismatchError,
    KernelError,
    QSDError,
)
from .grid import TimeGrid
from .noise import (
    NoisePath,
    OUKernel,
    TabulatedKernel,
    empirical_covariance,
    ou_correlation,
    sample_cholesky_path,
    sample_ou_path,
    trajectory_rng,
)
from .oracles import lindblad_evolve, pseudomode_evolve
from .trajectory import (
    TrajectoryRecord,
    memory_integral_general,
    propagate_noise_integral,
    run_linear_trajectory,
    run_markov_trajectory,
    run_nonlinear_trajectory,
)

__version__ = "0.1.0"
