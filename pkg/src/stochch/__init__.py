"""Stochastic Cahn-Hilliard: spectral Galerkin in space, backward Euler in time,
and a Monte Carlo harness for measuring convergence rates."""

__version__ = "0.1.0"

from .spectral import Basis, eigenvalues, fractional_power, sobolev_norm
from .noise import (
    InadmissibleNoise,
    Increments,
    NoiseTable,
    QSpectrum,
    build_noise_batch,
    build_noise_table,
    coarsen,
    read_table,
    save_table,
)
from .nonlinearity import apply_F, apply_F_prime, jacobian_F
from .integrator import (
    ModelConfig,
    NonConvergence,
    SolverConfig,
    backward_euler_step,
    simulate_linear_exact,
    simulate_path,
    solve_implicit,
)
from .experiments import (
    ErrorReport,
    NoSignal,
    RateFit,
    TestFunctional,
    estimate_strong_error_spatial,
    estimate_strong_error_temporal,
    estimate_weak_error_spatial,
    estimate_weak_error_temporal,
    fit_rate,
    linear_oracle_study,
)

__all__ = [name for name in dir() if not name.startswith("_")]
