"""Numerical toolkit for the SPDE diffusion model of GI/GI/N queues in the Halfin-Whitt regime."""

from .coupling import (
    CoupledPair,
    build_coupled,
    decay_report,
    delta_r_bound_check,
    girsanov_batch,
    girsanov_weight,
    tilde_cms_check,
)
from .diffusion_model import (
    DiffusionPath,
    StationaryConfig,
    build_diffusion,
    canonical_state,
    cms_map,
    estimate_stationary,
    markov_shift_check,
    simulate_x_batch,
    spde_residual,
    transport_solution,
)
from .distributions import (
    Exponential,
    Gamma,
    LogNormal,
    Lomax,
    PhaseType,
    ServiceDistribution,
    check_assumptions,
    erlang,
    make_distribution,
)
from .function_grid import GridFunction, H1GridFunction, SimulationGrid, StatePoint, TimePath
from .kernels import convolve, gamma_op, renewal_density, solve_renewal, solve_volterra_plus
from .noise import BrownianPath, NoiseField, fubini_residual, integrate, stoch_conv
from .queue_sim import QueueConfig, run_queue, scale_state

__all__ = [
    "BrownianPath", "CoupledPair", "DiffusionPath", "Exponential", "Gamma", "GridFunction", "H1GridFunction",
    "LogNormal", "Lomax", "NoiseField", "PhaseType", "QueueConfig", "ServiceDistribution", "SimulationGrid",
    "StatePoint", "StationaryConfig", "TimePath", "build_coupled", "build_diffusion", "canonical_state",
    "check_assumptions", "cms_map", "convolve", "decay_report", "delta_r_bound_check", "erlang",
    "estimate_stationary", "fubini_residual", "gamma_op", "girsanov_batch", "girsanov_weight", "integrate",
    "make_distribution", "markov_shift_check", "renewal_density", "run_queue", "scale_state", "simulate_x_batch", "solve_renewal",
    "solve_volterra_plus", "spde_residual", "stoch_conv", "tilde_cms_check", "transport_solution",
]
