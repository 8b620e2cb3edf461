"""Gaussian prior with a two-component mixture likelihood on the first M coordinates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidInputError
from ..targets import SplitTarget

__all__ = ["BimodalMixtureProblem", "bimodal_log_density", "escape_bound"]


@dataclass
class BimodalMixtureProblem(SplitTarget):
    """``x_n ~ N(0, s_n^2)`` a priori; each of the first M coordinates sees ``+-1`` with noise sigma.

    ``prior_scales`` defaults to all ones (the isotropic prior).
    """

    dimension: int
    constrained_count: int
    noise_sigma: float
    prior_scales: np.ndarray | None = None

    def __post_init__(self):
        if not 0 <= self.constrained_count <= self.dimension:
            raise InvalidInputError("need 0 <= M <= N")
        if not self.noise_sigma > 0:
            raise InvalidInputError("noise_sigma must be positive")
        s = np.ones(self.dimension) if self.prior_scales is None else np.asarray(self.prior_scales, float)
        if s.shape != (self.dimension,) or np.any(s <= 0):
            raise InvalidInputError("prior_scales must be N positive numbers")
        self.prior_scales = s

    def evaluate_split(self, x):
        m = self.constrained_count
        s2 = self.noise_sigma**2
        inv_var = 1.0 / self.prior_scales**2
        lp = -0.5 * np.sum(x * x * inv_var, axis=1)
        gp = -x * inv_var
        xm = x[:, :m]
        # log[e^{-(x-1)^2/2s2} + e^{-(x+1)^2/2s2}] = -(x^2+1)/2s2 + log(2 cosh(x/s2))
        u = xm / s2
        terms = -(xm * xm + 1) / (2 * s2) + np.logaddexp(u, -u)
        ll = np.sum(terms, axis=1)
        gl = np.zeros_like(x)
        gl[:, :m] = -(xm - np.tanh(u)) / s2
        return lp, ll, gp, gl

    def sample_prior(self, rng, n):
        return rng.standard_normal((n, self.dimension)) * self.prior_scales

    def mode_location(self) -> float:
        """Positive component mean of a constrained coordinate under a unit prior."""
        return 1.0 / (1.0 + self.noise_sigma**2)

    def mode_scale(self) -> float:
        """Component standard deviation of a constrained coordinate under a unit prior."""
        s2 = self.noise_sigma**2
        return float(np.sqrt(s2 / (1.0 + s2)))

    def tempered_largest_scale(self, temperature: float, mode: str = "likelihood") -> float:
        """Largest posterior scale of the single-mode Gaussian approximation at temperature T."""
        s2 = self.noise_sigma**2
        t = float(temperature)
        inv_prior = 1.0 / self.prior_scales**2
        lik = np.zeros(self.dimension)
        lik[: self.constrained_count] = 1.0 / s2
        if mode == "posterior":
            var = t / (inv_prior + lik)
        else:
            var = 1.0 / (inv_prior + (0.0 if np.isinf(t) else lik / t))
        return float(np.sqrt(var.max()))


def bimodal_log_density(problem: BimodalMixtureProblem, x):
    """Unnormalized log posterior and its gradient at a single point."""
    lp, g, _ = problem.evaluate(np.atleast_2d(np.asarray(x, dtype=float)))
    return float(lp[0]), g[0]


def escape_bound(sigma: float) -> float:
    """Leading-order upper bound ``exp{-(1 + sigma^2) / sigma^2}`` on a single-step mode escape."""
    return float(np.exp(-(1 + sigma**2) / sigma**2))
