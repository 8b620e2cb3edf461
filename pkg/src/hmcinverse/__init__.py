"""Hamiltonian Monte Carlo for Bayesian inverse problems.

Condition-number estimates for Gaussian posteriors, a staged sampler that decides
when covariance preconditioning pays off, and replica exchange with tempered
replicas for multimodal posteriors.
"""

from .diagnostics import RunReport, effective_sample_size, split_rhat
from .hmc import ChainBatch, WorkPool, adapt_step_size, hmc_transition, leapfrog, run_hmc
from .nuts import nuts_transition
from .planner import (
    PlannerConfig,
    estimate_kappa_from_acceptance,
    plan_speedup,
    run_algorithm1,
    run_plain_hmc,
)
from .remc import RemcConfig, TemperatureLadder, run_remc, select_tmax
from .spectral import (
    SpectralFactor,
    inverse_wishart_kappa_asymptote,
    kappa,
    kappa_from_covariance,
    sample_kappa_after_preconditioning,
)
from .targets import GaussianTarget, SplitTarget, TemperedTarget, finite_difference_check

__version__ = "0.1.0"

__all__ = [
    "RunReport",
    "effective_sample_size",
    "split_rhat",
    "ChainBatch",
    "WorkPool",
    "adapt_step_size",
    "hmc_transition",
    "leapfrog",
    "run_hmc",
    "nuts_transition",
    "PlannerConfig",
    "estimate_kappa_from_acceptance",
    "plan_speedup",
    "run_algorithm1",
    "run_plain_hmc",
    "RemcConfig",
    "TemperatureLadder",
    "run_remc",
    "select_tmax",
    "SpectralFactor",
    "inverse_wishart_kappa_asymptote",
    "kappa",
    "kappa_from_covariance",
    "sample_kappa_after_preconditioning",
    "GaussianTarget",
    "SplitTarget",
    "TemperedTarget",
    "finite_difference_check",
]
