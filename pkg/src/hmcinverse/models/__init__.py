"""Benchmark posteriors: linear Gaussian tomography, a bimodal mixture, Doppler spectroscopy."""

from .bimodal import BimodalMixtureProblem
from .gaussian import GaussianLinearProblem, gaussian_posterior, isotropic_likelihood_problem, toy_problem
from .spectroscopy import SpectroscopyProblem, two_peak_observation

__all__ = [
    "BimodalMixtureProblem",
    "GaussianLinearProblem",
    "gaussian_posterior",
    "isotropic_likelihood_problem",
    "toy_problem",
    "SpectroscopyProblem",
    "two_peak_observation",
]
