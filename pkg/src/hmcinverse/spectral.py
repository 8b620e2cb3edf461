"""Dense spectral utilities for covariance factors.

Everything here works on small dense matrices (N up to a few hundred). Singular
values are taken from the symmetric eigenproblem of ``A.T @ A`` since only their
magnitudes are needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg as sla

from .errors import (
    DegenerateDimensionError,
    InvalidInputError,
    InvalidOversamplingError,
    NotPositiveDefiniteError,
    RankDeficiencyError,
    SingularMatrixError,
)

__all__ = [
    "SpectralFactor",
    "SampleMatrix",
    "singular_values",
    "schatten_norm",
    "kappa",
    "kappa_from_covariance",
    "cholesky_factor",
    "sample_covariance",
    "sample_covariance_factor",
    "diagonal_stddev_factor",
    "largest_scale",
    "inverse_wishart_kappa_asymptote",
    "sample_kappa_after_preconditioning",
]


def _as_finite_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise InvalidInputError(f"expected a matrix, got array of shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("matrix contains non-finite entries")
    return a


def singular_values(a) -> np.ndarray:
    """Singular values of ``a`` in descending order."""
    a = _as_finite_matrix(a)
    gram = a.T @ a if a.shape[0] >= a.shape[1] else a @ a.T
    sq = np.linalg.eigvalsh(gram)[::-1]
    return np.sqrt(np.clip(sq, 0.0, None))


@dataclass
class SpectralFactor:
    """A square covariance factor ``L`` (``C = L @ L.T``) with lazily cached singular values."""

    matrix: np.ndarray
    jitter: float = 0.0

    def __post_init__(self):
        self.matrix = _as_finite_matrix(self.matrix)
        if self.matrix.shape[0] != self.matrix.shape[1]:
            raise InvalidInputError(f"factor must be square, got {self.matrix.shape}")

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def singular_values(self) -> np.ndarray:
        return singular_values(self.matrix)

    @property
    def covariance(self) -> np.ndarray:
        return self.matrix @ self.matrix.T

    def is_diagonal(self) -> bool:
        m = self.matrix
        return bool(np.all(m == np.diag(np.diag(m))))

    def solve(self, x: np.ndarray) -> np.ndarray:
        """Apply ``L^{-1}`` to the rows of ``x`` (shape ``(..., N)``)."""
        x = np.asarray(x, dtype=float)
        if self.is_diagonal():
            return x / np.diag(self.matrix)
        flat = x.reshape(-1, self.dimension).T
        lower = np.allclose(self.matrix, np.tril(self.matrix))
        if lower:
            out = sla.solve_triangular(self.matrix, flat, lower=True)
        else:
            out = np.linalg.solve(self.matrix, flat)
        return out.T.reshape(x.shape)

    def apply(self, z: np.ndarray) -> np.ndarray:
        """Apply ``L`` to the rows of ``z``."""
        return np.asarray(z, dtype=float) @ self.matrix.T

    def inverse(self) -> "SpectralFactor":
        return SpectralFactor(self.solve(np.eye(self.dimension)).T)


@dataclass
class SampleMatrix:
    """``S x N`` block of draws with per-dimension summary statistics."""

    samples: np.ndarray
    mean: np.ndarray = field(init=False)
    std: np.ndarray = field(init=False)

    def __post_init__(self):
        s = _as_finite_matrix(self.samples)
        self.samples = s
        self.mean = s.mean(axis=0)
        self.std = s.std(axis=0, ddof=1) if s.shape[0] >= 2 else np.full(s.shape[1], np.nan)

    @property
    def count(self) -> int:
        return self.samples.shape[0]

    @property
    def dimension(self) -> int:
        return self.samples.shape[1]


def _as_samples(samples) -> SampleMatrix:
    return samples if isinstance(samples, SampleMatrix) else SampleMatrix(samples)


def schatten_norm(a, k: int) -> float:
    """The k-th Schatten norm, ``(sum_n s_n**k)**(1/k)`` over singular values ``s_n``."""
    if k < 1:
        raise InvalidInputError(f"Schatten order must be >= 1, got {k}")
    s = singular_values(a)
    top = s[0] if s.size and s[0] > 0 else 1.0
    # scaled to avoid overflow of s**k
    return float(top * np.sum((s / top) ** k) ** (1.0 / k))


def _kappa_from_scales(scales: np.ndarray) -> float:
    scales = np.sort(np.asarray(scales, dtype=float))[::-1]
    n = scales.size
    if scales[-1] <= 0 or scales[-1] ** 2 <= n * np.finfo(float).eps * scales[0] ** 2:
        raise SingularMatrixError(
            f"factor is singular: smallest scale {scales[-1]:.3e} vs largest {scales[0]:.3e}"
        )
    return float(np.sum((scales[0] / scales) ** 4) ** 0.25)


def kappa(factor) -> float:
    """Condition number ``||L||_2 * ||L^{-1}||_{S^4}``.

    Equivalently ``(sum_n (s_1 / s_n)**4)**(1/4)`` over the singular values of ``L``;
    it is invariant to rescaling ``L`` and bounded below by ``N**(1/4)``. The
    second factor is taken from the singular values of ``L^{-1}``, whose largest
    values dominate the sum and are resolved to full relative precision.
    """
    f = factor if isinstance(factor, SpectralFactor) else SpectralFactor(factor)
    s = f.singular_values
    _kappa_from_scales(s)  # singularity guard
    return float(s[0] * schatten_norm(f.inverse().matrix, 4))


def kappa_from_covariance(cov) -> float:
    """``kappa`` of any factor of ``cov``; avoids forming the factor."""
    cov = _as_finite_matrix(cov)
    ev = np.linalg.eigvalsh(0.5 * (cov + cov.T))
    if ev[0] <= 0:
        raise SingularMatrixError(f"covariance is not positive definite (min eigenvalue {ev[0]:.3e})")
    return _kappa_from_scales(np.sqrt(ev))


def cholesky_factor(
    cov,
    initial_jitter: float = 1e-12,
    growth: float = 10.0,
    max_escalations: int = 8,
    symmetry_tol: float = 1e-8,
) -> SpectralFactor:
    """Lower Cholesky factor of a symmetric matrix with a bounded jitter fallback.

    Jitter is only added when the plain factorization fails. It starts at
    ``initial_jitter * trace(C) / N`` and is multiplied by ``growth`` on each of at
    most ``max_escalations`` retries.
    """
    c = _as_finite_matrix(cov)
    if c.shape[0] != c.shape[1]:
        raise InvalidInputError(f"covariance must be square, got {c.shape}")
    scale = max(np.max(np.abs(c)), np.finfo(float).tiny)
    if np.max(np.abs(c - c.T)) > symmetry_tol * scale:
        raise InvalidInputError("covariance is not symmetric")
    c = 0.5 * (c + c.T)
    n = c.shape[0]
    try:
        return SpectralFactor(np.linalg.cholesky(c))
    except np.linalg.LinAlgError:
        pass
    base = initial_jitter * max(np.trace(c) / n, np.finfo(float).tiny)
    eye = np.eye(n)
    jitter = base
    for _ in range(max_escalations):
        try:
            return SpectralFactor(np.linalg.cholesky(c + jitter * eye), jitter=jitter)
        except np.linalg.LinAlgError:
            jitter *= growth
    min_ev = float(np.linalg.eigvalsh(c)[0])
    raise NotPositiveDefiniteError(
        f"matrix is not positive definite within the jitter budget "
        f"(most negative eigenvalue {min_ev:.6g})",
        min_eigenvalue=min_ev,
    )


def sample_covariance(samples) -> np.ndarray:
    """Centered sample covariance with divisor ``S - 1``."""
    sm = _as_samples(samples)
    if sm.count < 2:
        raise RankDeficiencyError("at least two samples are needed for a covariance")
    centered = sm.samples - sm.mean
    return centered.T @ centered / (sm.count - 1)


def sample_covariance_factor(samples) -> SpectralFactor:
    """Cholesky factor of the sample covariance; requires more samples than dimensions."""
    sm = _as_samples(samples)
    if sm.count <= sm.dimension:
        raise RankDeficiencyError(
            f"{sm.count} samples in dimension {sm.dimension}: the sample covariance is "
            f"singular; collect more than {sm.dimension} samples"
        )
    return cholesky_factor(sample_covariance(sm))


def diagonal_stddev_factor(samples) -> SpectralFactor:
    """Diagonal factor of per-dimension sample standard deviations."""
    sm = _as_samples(samples)
    if sm.count < 2:
        raise RankDeficiencyError("at least two samples are needed for standard deviations")
    bad = np.flatnonzero(~(sm.std > 0))
    if bad.size:
        raise DegenerateDimensionError(
            f"dimension {int(bad[0])} has zero sample variance", dimension=int(bad[0])
        )
    return SpectralFactor(np.diag(sm.std))


def largest_scale(cov, tol: float = 1e-6, max_iter: int = 500, rng=None) -> float:
    """Square root of the top eigenvalue of a covariance, by power iteration."""
    c = _as_finite_matrix(cov)
    n = c.shape[0]
    rng = np.random.default_rng(0) if rng is None else rng
    v = np.ones(n) / np.sqrt(n) + 1e-3 * rng.standard_normal(n)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = c @ v
        new = float(v @ w)
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        v = w / nrm
        if abs(new - est) <= tol * max(abs(new), np.finfo(float).tiny):
            est = new
            break
        est = new
    return float(np.sqrt(max(est, 0.0)))


def inverse_wishart_kappa_asymptote(n: int, omega: float) -> float:
    """Large-N limit of ``kappa`` after preconditioning with ``S = omega * N`` samples."""
    if not omega > 1:
        raise InvalidOversamplingError(f"oversampling ratio must exceed 1, got {omega}")
    if np.isinf(omega):
        return float(n**0.25)
    return float(n**0.25 * (1 + 1 / omega) ** 0.25 / (1 - omega**-0.5))


def sample_kappa_after_preconditioning(
    n: int, s: int, trials: int, rng: np.random.Generator, true_factor=None
) -> np.ndarray:
    """Monte Carlo draws of ``kappa(L_hat^{-1} L)`` for ``S`` i.i.d. Gaussian samples.

    ``true_factor`` defaults to the identity; the resulting law does not depend on it.
    """
    if s <= n + 1:
        raise InvalidInputError(f"need S > N + 1 samples, got S={s}, N={n}")
    if trials < 1:
        raise InvalidInputError("trials must be >= 1")
    true = np.eye(n) if true_factor is None else _as_finite_matrix(
        true_factor.matrix if isinstance(true_factor, SpectralFactor) else true_factor
    )
    out = np.empty(trials)
    for t in range(trials):
        x = rng.standard_normal((s, n)) @ true.T
        l_hat = sample_covariance_factor(x)
        out[t] = kappa(l_hat.solve(true.T).T)
    return out
