"""Glauber-Kawasaki reaction-diffusion lab: particles, PDE, rate functionals."""
from .config import ConfigError, ExperimentConfig, load_config
from .fields import GridError, Trajectory, measure_distance
from .functionals import (RateReport, eval_JG, rate_explicit_smooth, rate_homogeneous,
                          rate_variational)
from .particles import (Configuration, SimParams, exact_stationary_small, kmc_step,
                        sample_profile_configuration, simulate_trajectory)
from .pde import (PdeParams, solve_cauchy, solve_controlled, solve_mild_picard,
                  stationary_set_search)
from .rates import CylinderRate, RateModel, enumerate_reaction_polynomials, model_from_spec

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ExperimentConfig", "load_config", "GridError", "Trajectory",
    "measure_distance", "RateReport", "eval_JG", "rate_explicit_smooth", "rate_homogeneous",
    "rate_variational", "Configuration", "SimParams", "exact_stationary_small", "kmc_step",
    "sample_profile_configuration", "simulate_trajectory", "PdeParams", "solve_cauchy",
    "solve_controlled", "solve_mild_picard", "stationary_set_search", "CylinderRate",
    "RateModel", "enumerate_reaction_polynomials", "model_from_spec",
]
