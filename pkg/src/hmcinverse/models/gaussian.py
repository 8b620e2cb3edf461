"""Linear-Gaussian inverse problem with a smoothing prior."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConditioningError, InvalidInputError
from ..spectral import SpectralFactor, cholesky_factor
from ..targets import SplitTarget, tempering_exponents

__all__ = [
    "prior_correlation",
    "radial_chord_matrix",
    "GaussianLinearProblem",
    "gaussian_posterior",
    "reparameterize_by_prior",
    "toy_problem",
    "isotropic_likelihood_problem",
]


def prior_correlation(points, tau: float, delta: float) -> np.ndarray:
    """Squared-exponential correlation on ``points`` plus a ``delta`` nugget on the diagonal.

    The nugget is what keeps the smallest eigenvalue away from zero; adding
    ``delta`` to every entry would only shift one direction.
    """
    if not (tau > 0 and delta > 0):
        raise InvalidInputError("tau and delta must be positive")
    r = np.asarray(points, dtype=float)
    d = r[:, None] - r[None, :]
    return np.exp(-(d**2) / (2 * tau**2)) + delta * np.eye(r.size)


def radial_chord_matrix(n_state: int, n_chords: int, max_impact: float = 0.95, quad_points: int = 4001):
    """Line integrals of a piecewise-linear radial profile across the square ``[-1, 1]^2``.

    State ``n`` is the profile value at radius ``n * sqrt(2) / (n_state - 1)``. Chord
    ``m`` is the horizontal line at height ``linspace(-max_impact, max_impact)[m]``
    running from ``x = -1`` to ``x = 1``. Chords at mirrored heights see the same
    radii, so the matrix has rank at most ``ceil(n_chords / 2)``.
    """
    knots = np.linspace(0.0, np.sqrt(2.0), n_state)
    heights = np.linspace(-max_impact, max_impact, n_chords)
    s = np.linspace(-1.0, 1.0, quad_points)
    eye = np.eye(n_state)
    out = np.empty((n_chords, n_state))
    for m, b in enumerate(heights):
        r = np.sqrt(b * b + s * s)
        # hat-function weight of every knot along the chord
        w = np.stack([np.interp(r, knots, eye[n]) for n in range(n_state)])
        out[m] = np.trapezoid(w, s, axis=1)
    return out


@dataclass
class GaussianLinearProblem(SplitTarget):
    """Prior ``N(0, L_pr L_pr^T)`` and likelihood ``N(y; A x, sigma^2 I)``."""

    forward_matrix: np.ndarray
    noise_sigma: float
    prior_factor: SpectralFactor
    observation: np.ndarray
    _prior_prec: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.forward_matrix = np.atleast_2d(np.asarray(self.forward_matrix, dtype=float))
        if not isinstance(self.prior_factor, SpectralFactor):
            self.prior_factor = SpectralFactor(self.prior_factor)
        self.observation = np.asarray(self.observation, dtype=float)
        if not self.noise_sigma > 0:
            raise InvalidInputError("noise_sigma must be positive")
        m, n = self.forward_matrix.shape
        if self.prior_factor.dimension != n or self.observation.shape != (m,):
            raise InvalidInputError("inconsistent shapes between A, prior factor and y")
        self.dimension = n
        self._prior_prec = np.linalg.inv(self.prior_factor.covariance)

    @property
    def prior_covariance(self) -> np.ndarray:
        return self.prior_factor.covariance

    def evaluate_split(self, x):
        a = self.forward_matrix
        w = self.prior_factor.solve(x)
        lp = -0.5 * np.sum(w * w, axis=1)
        gp = -x @ self._prior_prec
        r = x @ a.T - self.observation
        s2 = self.noise_sigma**2
        ll = -0.5 * np.sum(r * r, axis=1) / s2
        gl = -(r @ a) / s2
        return lp, ll, gp, gl

    def sample_prior(self, rng, n):
        return self.prior_factor.apply(rng.standard_normal((n, self.dimension)))

    def precision(self, likelihood_weight: float = 1.0) -> np.ndarray:
        a = self.forward_matrix
        return self._prior_prec + likelihood_weight * (a.T @ a) / self.noise_sigma**2

    def tempered_moments(self, temperature: float = 1.0, mode: str = "likelihood"):
        """Mean and covariance of the tempered posterior in closed form."""
        alpha, beta = tempering_exponents(temperature, mode)
        a = self.forward_matrix
        prec = alpha * self._prior_prec + beta * (a.T @ a) / self.noise_sigma**2
        cond = np.linalg.cond(prec)
        if not cond < 1 / np.finfo(float).eps:
            raise ConditioningError(f"normal-equation matrix has condition number {cond:.3e}")
        cov = np.linalg.inv(prec)
        cov = 0.5 * (cov + cov.T)
        mean = cov @ (beta * a.T @ self.observation / self.noise_sigma**2)
        return mean, cov

    def sample_tempered(self, rng, n, temperature=1.0, mode="likelihood"):
        """Exact draws from the tempered posterior."""
        mean, cov = self.tempered_moments(temperature, mode)
        f = cholesky_factor(cov)
        return mean + f.apply(rng.standard_normal((n, self.dimension)))


def gaussian_posterior(problem: GaussianLinearProblem):
    """Posterior mean and covariance factor ``[C_pr^{-1} + A^T A / sigma^2]^{-1}``."""
    mean, cov = problem.tempered_moments(1.0, "likelihood")
    return mean, cholesky_factor(cov)


def reparameterize_by_prior(problem: GaussianLinearProblem) -> GaussianLinearProblem:
    """Same posterior written in whitened prior coordinates ``x = L_pr z``."""
    n = problem.dimension
    return GaussianLinearProblem(
        problem.forward_matrix @ problem.prior_factor.matrix,
        problem.noise_sigma,
        SpectralFactor(np.eye(n)),
        problem.observation,
    )


def toy_problem(
    n_state: int = 40,
    n_chords: int = 20,
    sigma: float = 0.01,
    tau: float = 0.3,
    delta: float = 1e-3,
    seed: int = 0,
) -> GaussianLinearProblem:
    """Radial-profile tomography toy with data simulated from a prior draw."""
    a = radial_chord_matrix(n_state, n_chords)
    c = prior_correlation(np.linspace(0.0, np.sqrt(2.0), n_state), tau, delta)
    lpr = cholesky_factor(c)
    rng = np.random.default_rng(seed)
    x_true = lpr.apply(rng.standard_normal(n_state))
    y = a @ x_true + sigma * rng.standard_normal(n_chords)
    return GaussianLinearProblem(a, sigma, lpr, y)


def isotropic_likelihood_problem(mean, noise_scales) -> GaussianLinearProblem:
    """Prior ``N(0, I)`` with a diagonal Gaussian likelihood centred at ``mean``."""
    mean = np.asarray(mean, dtype=float)
    s = np.broadcast_to(np.asarray(noise_scales, dtype=float), mean.shape)
    a = np.diag(1.0 / s)
    return GaussianLinearProblem(a, 1.0, SpectralFactor(np.eye(mean.size)), mean / s)
