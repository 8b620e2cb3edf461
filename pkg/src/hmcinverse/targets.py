"""Target densities, bijectors, pushforwards and tempering.

All targets are batched: ``evaluate`` takes a ``(B, N)`` array and returns the
log-density ``(B,)``, its gradient ``(B, N)`` and a dict of auxiliary per-row
arrays. Rows where the density is undefined get ``-inf`` and a zero gradient so
samplers can reject them instead of raising.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

from .errors import InvalidInputError, SingularTransformError
from .spectral import SpectralFactor, _kappa_from_scales

__all__ = [
    "TargetDensity",
    "FunctionTarget",
    "GaussianTarget",
    "SplitTarget",
    "TemperedTarget",
    "tempering_exponents",
    "tempered_density",
    "Bijector",
    "IdentityBijector",
    "LinearBijector",
    "SoftplusBijector",
    "PushforwardTarget",
    "pushforward_density",
    "finite_difference_check",
]


def _rows(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[None, :] if x.ndim == 1 else x


class TargetDensity:
    """Base class for batched log-densities with gradients."""

    dimension: int

    def evaluate(self, x):
        raise NotImplementedError

    def log_density(self, x):
        x = np.asarray(x, dtype=float)
        lp = self.evaluate(_rows(x))[0]
        return float(lp[0]) if x.ndim == 1 else lp

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        g = self.evaluate(_rows(x))[1]
        return g[0] if x.ndim == 1 else g

    def subset(self, rows):
        """Target restricted to a subset of batch rows (matters only for per-row targets)."""
        return self

    def initial_points(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Starting points for ``n`` chains; standard normal unless overridden."""
        return rng.standard_normal((n, self.dimension))


class FunctionTarget(TargetDensity):
    """Wrap batched callables ``logp(x) -> (B,)`` and ``grad(x) -> (B, N)``."""

    def __init__(self, dimension: int, logp, grad):
        self.dimension = int(dimension)
        self._logp = logp
        self._grad = grad

    def evaluate(self, x):
        x = _rows(x)
        return np.asarray(self._logp(x), dtype=float), np.asarray(self._grad(x), dtype=float), {}


class GaussianTarget(TargetDensity):
    """``N(mean, L L^T)`` for a given factor ``L``."""

    def __init__(self, mean=None, factor=None, dimension=None):
        if factor is None:
            if dimension is None:
                raise InvalidInputError("give a factor or a dimension")
            factor = np.eye(dimension)
        self.factor = factor if isinstance(factor, SpectralFactor) else SpectralFactor(factor)
        self.dimension = self.factor.dimension
        self.mean = np.zeros(self.dimension) if mean is None else np.asarray(mean, dtype=float)
        self._prec = np.linalg.inv(self.factor.covariance)

    @property
    def covariance(self):
        return self.factor.covariance

    def evaluate(self, x):
        d = _rows(x) - self.mean
        w = self.factor.solve(d)
        return -0.5 * np.sum(w * w, axis=1), -d @ self._prec, {}

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.mean + self.factor.apply(rng.standard_normal((n, self.dimension)))


class SplitTarget(TargetDensity):
    """A posterior ``log p(x) + log p(y|x)`` whose two terms are available separately.

    Subclasses implement ``evaluate_split`` returning ``(log_prior, log_lik,
    grad_prior, grad_lik)`` and ``sample_prior``.
    """

    def evaluate_split(self, x):
        raise NotImplementedError

    def sample_prior(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def evaluate(self, x):
        lp, ll, gp, gl = self.evaluate_split(_rows(x))
        aux = {"log_prior": lp, "log_lik": ll, "grad_prior": gp, "grad_lik": gl}
        return lp + ll, gp + gl, aux

    def log_prior(self, x):
        return self.evaluate_split(_rows(x))[0]

    def log_likelihood(self, x):
        return self.evaluate_split(_rows(x))[1]

    def initial_points(self, rng, n):
        return self.sample_prior(rng, n)


def tempering_exponents(temperature: float, mode: str):
    """Exponents ``(alpha, beta)`` on (log prior, log likelihood) for one temperature."""
    t = float(temperature)
    if not t >= 1:
        raise InvalidInputError(f"temperature must be >= 1, got {temperature}")
    if mode == "posterior":
        if np.isinf(t):
            raise InvalidInputError("posterior tempering requires a finite temperature")
        return 1.0 / t, 1.0 / t
    if mode == "likelihood":
        return 1.0, 0.0 if np.isinf(t) else 1.0 / t
    raise InvalidInputError(f"unknown tempering mode {mode!r}")


class TemperedTarget(TargetDensity):
    """``alpha * log p(x) + beta * log p(y|x)`` with scalar or per-row exponents."""

    def __init__(self, base: SplitTarget, alpha, beta):
        self.base = base
        self.dimension = base.dimension
        self.alpha = np.asarray(alpha, dtype=float)
        self.beta = np.asarray(beta, dtype=float)

    def combine(self, aux):
        """Tempered log-density and gradient from cached split terms; no model evaluation."""
        a = self.alpha if self.alpha.ndim == 0 else self.alpha[:, None]
        b = self.beta if self.beta.ndim == 0 else self.beta[:, None]
        ll = aux["log_lik"]
        # beta = 0 must ignore the likelihood even where it is -inf
        llt = np.where(self.beta == 0, 0.0, self.beta * ll)
        logp = self.alpha * aux["log_prior"] + llt
        grad = a * aux["grad_prior"] + b * aux["grad_lik"]
        return logp, grad

    def evaluate(self, x):
        _, _, aux = self.base.evaluate(_rows(x))
        logp, grad = self.combine(aux)
        return logp, grad, aux

    def subset(self, rows):
        if self.alpha.ndim == 0:
            return self
        return TemperedTarget(self.base, self.alpha[rows], self.beta[rows])

    def initial_points(self, rng, n):
        return self.base.sample_prior(rng, n)


def tempered_density(target: SplitTarget, temperature: float, mode: str = "likelihood") -> TemperedTarget:
    """Tempered version of a split target; ``T = inf`` in likelihood mode gives the prior."""
    if not isinstance(target, SplitTarget):
        raise InvalidInputError("tempering needs a target with separate prior and likelihood")
    alpha, beta = tempering_exponents(temperature, mode)
    return TemperedTarget(target, alpha, beta)


class Bijector:
    """Smooth invertible map ``x = F(z)`` acting row-wise."""

    def forward(self, z):
        raise NotImplementedError

    def inverse(self, x):
        raise NotImplementedError

    def log_det_jacobian(self, z):
        raise NotImplementedError

    def grad_log_det(self, z):
        raise NotImplementedError

    def vjp(self, z, g):
        """``DF(z)^T g`` row-wise."""
        raise NotImplementedError


class IdentityBijector(Bijector):
    def forward(self, z):
        return np.asarray(z, dtype=float)

    inverse = forward

    def log_det_jacobian(self, z):
        return np.zeros(_rows(z).shape[0])

    def grad_log_det(self, z):
        return np.zeros_like(_rows(z))

    def vjp(self, z, g):
        return g


class LinearBijector(Bijector):
    """``x = shift + L z`` for an invertible factor ``L``."""

    def __init__(self, factor, shift=None):
        f = factor if isinstance(factor, SpectralFactor) else SpectralFactor(factor)
        try:
            _kappa_from_scales(f.singular_values)
        except ValueError as exc:
            raise SingularTransformError(f"linear map is not invertible: {exc}") from None
        self.factor = f
        n = f.dimension
        self.shift = np.zeros(n) if shift is None else np.asarray(shift, dtype=float)
        self._logdet = float(np.sum(np.log(f.singular_values)))

    def forward(self, z):
        return self.shift + self.factor.apply(z)

    def inverse(self, x):
        return self.factor.solve(np.asarray(x, dtype=float) - self.shift)

    def log_det_jacobian(self, z):
        return np.full(_rows(z).shape[0], self._logdet)

    def grad_log_det(self, z):
        return np.zeros_like(_rows(z))

    def vjp(self, z, g):
        return g @ self.factor.matrix


class SoftplusBijector(Bijector):
    """Coordinatewise ``x = log(1 + e^z)``, mapping the real line onto ``(0, inf)``."""

    def forward(self, z):
        return np.logaddexp(0.0, z)

    def inverse(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x <= 0):
            raise InvalidInputError("softplus inverse needs positive input")
        # log(expm1(x)) written to stay finite for large x
        return x + np.log(-np.expm1(-x))

    def log_det_jacobian(self, z):
        return np.sum(log_expit(_rows(z)), axis=1)

    def grad_log_det(self, z):
        return expit(-_rows(z))

    def vjp(self, z, g):
        return g * expit(_rows(z))


class PushforwardTarget(TargetDensity):
    """Density of ``Z = F^{-1}(X)``: ``log g(z) = log p(F(z)) + log|det DF(z)|``.

    Scalar aux entries of the base target (for example ``log_lik``) are passed
    through unchanged; they refer to the base density at ``F(z)``.
    """

    def __init__(self, base: TargetDensity, bijector: Bijector):
        self.base = base
        self.bijector = bijector
        self.dimension = base.dimension

    def evaluate(self, z):
        z = _rows(z)
        x = self.bijector.forward(z)
        lp, g, aux = self.base.evaluate(x)
        ld = self.bijector.log_det_jacobian(z)
        if np.any(~np.isfinite(ld)):
            raise SingularTransformError("Jacobian is singular at the evaluation point")
        logp = lp + ld
        grad = self.bijector.vjp(z, g) + self.bijector.grad_log_det(z)
        out = {k: v for k, v in aux.items() if np.ndim(v) == 1}
        return logp, grad, out

    def subset(self, rows):
        sub = self.base.subset(rows)
        return self if sub is self.base else PushforwardTarget(sub, self.bijector)

    def initial_points(self, rng, n):
        return self.bijector.inverse(self.base.initial_points(rng, n))


def pushforward_density(base: TargetDensity, bijector: Bijector) -> TargetDensity:
    if isinstance(bijector, IdentityBijector):
        return base
    return PushforwardTarget(base, bijector)


@dataclass
class GradientCheck:
    max_relative_error: float
    points: int

    @property
    def passed(self) -> bool:
        return self.max_relative_error < 1e-5


def finite_difference_check(target: TargetDensity, points: np.ndarray, step: float = 1e-5) -> GradientCheck:
    """Compare analytic gradients with centered differences at each row of ``points``.

    The step is scaled per coordinate by ``max(1, |x_n|)``; the error of each point
    is the norm of the difference relative to the norm of the gradient.
    """
    points = _rows(points)
    worst = 0.0
    n = target.dimension
    _, grads, _ = target.evaluate(points)
    for x, g in zip(points, grads):
        hs = step * np.maximum(1.0, np.abs(x))
        shifts = np.eye(n) * hs[:, None]
        up = target.evaluate(x + shifts)[0]
        dn = target.evaluate(x - shifts)[0]
        fd = (up - dn) / (2 * hs)
        err = np.linalg.norm(fd - g) / max(np.linalg.norm(g), 1e-8)
        worst = max(worst, float(err))
    return GradientCheck(worst, points.shape[0])
