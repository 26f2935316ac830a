"""Monte Carlo solutions of 1/2 u_tt = L u through complex-time exit expectations.

u(t, x) = E[f(t + i sqrt(tau) Z, X^x(tau))], where X solves dX = b dt + sigma dB,
tau is its first exit time from a bounded domain and Z is an independent
standard normal.
"""
from .data_function import DataFunction, augment_velocity, cauchy_derivative, check_reflection_symmetry
from .domain import DomainSpec, GeometryError, boundary_crossing, bridge_exit_probability, contains
from .estimator import (Estimate, EstimatorConfig, conditional_kernel_exp, conditional_kernel_poly,
                        estimate_dt_u, estimate_u, estimate_u_rao_blackwell, grid_evaluate,
                        tail_diagnostics)
from .exits import ExitSample, ExitVia, TruncationError, sample_exit, sample_exit_batch
from .expr import differentiate_z, evaluate, parse_expr
from .reference import (WaveData, WaveFdConfig, fd_continuation_check, harmonic_check,
                        solve_mean_exit_ode, wave_fd_solve)
from .rng import RngStream, gaussian, gaussian_vector
from .sde import NumericalError, SdeSpec, StepConfig, apply_generator, euler_step

__version__ = "0.1.0"
