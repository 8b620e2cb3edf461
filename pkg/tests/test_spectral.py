import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmcinverse.errors import (
    InvalidInputError,
    InvalidOversamplingError,
    NotPositiveDefiniteError,
    RankDeficiencyError,
    DegenerateDimensionError,
    SingularMatrixError,
)
from hmcinverse.spectral import (
    SpectralFactor,
    cholesky_factor,
    diagonal_stddev_factor,
    inverse_wishart_kappa_asymptote,
    kappa,
    kappa_from_covariance,
    largest_scale,
    sample_covariance,
    sample_covariance_factor,
    sample_kappa_after_preconditioning,
    schatten_norm,
    singular_values,
)


def _factor(n, seed, spread=1.0):
    rng = np.random.default_rng(seed)
    d = np.exp(spread * rng.standard_normal(n))
    return np.tril(rng.standard_normal((n, n)) * 0.3, -1) * d[None, :] + np.diag(d)


@pytest.mark.parametrize("n", [1, 2, 7, 40])
def test_identity_kappa_is_quartic_root(n):
    assert kappa(np.eye(n)) == pytest.approx(n**0.25, rel=1e-12)


def test_kappa_matches_scale_formula():
    l = _factor(6, 1)
    s = np.linalg.svd(l, compute_uv=False)
    expected = np.sum((s[0] / s) ** 4) ** 0.25
    assert kappa(l) == pytest.approx(expected, rel=1e-10)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 12), seed=st.integers(0, 10_000), c=st.floats(1e-6, 1e6))
def test_kappa_scale_invariant_and_bounded(n, seed, c):
    l = _factor(n, seed)
    k = kappa(l)
    assert k >= n**0.25 * (1 - 1e-12)
    assert kappa(c * l) == pytest.approx(k, rel=1e-10)


def test_kappa_from_covariance_agrees():
    l = _factor(5, 3)
    assert kappa_from_covariance(l @ l.T) == pytest.approx(kappa(l), rel=1e-8)


def test_singular_factor_rejected():
    l = np.diag([1.0, 1.0, 0.0])
    with pytest.raises(SingularMatrixError):
        kappa(l)
    with pytest.raises(SingularMatrixError):
        kappa_from_covariance(np.diag([1.0, -1.0]))


def test_nonfinite_rejected():
    with pytest.raises(InvalidInputError):
        singular_values(np.array([[1.0, np.nan], [0.0, 1.0]]))
    with pytest.raises(InvalidInputError):
        SpectralFactor(np.ones((2, 3)))


def test_singular_values_descending():
    s = singular_values(_factor(8, 5))
    assert np.all(np.diff(s) <= 0)
    np.testing.assert_allclose(s, np.linalg.svd(_factor(8, 5), compute_uv=False), rtol=1e-8)


@pytest.mark.parametrize("k", [1, 2, 4])
def test_schatten_norm(k):
    a = _factor(5, 9)
    s = np.linalg.svd(a, compute_uv=False)
    assert schatten_norm(a, k) == pytest.approx(np.sum(s**k) ** (1 / k), rel=1e-9)
    with pytest.raises(InvalidInputError):
        schatten_norm(a, 0)


def test_factor_solve_apply_roundtrip():
    f = SpectralFactor(_factor(6, 2))
    x = np.random.default_rng(0).standard_normal((4, 6))
    np.testing.assert_allclose(f.apply(f.solve(x)), x, atol=1e-10)
    np.testing.assert_allclose(f.inverse().matrix @ f.matrix, np.eye(6), atol=1e-10)


def test_cholesky_plain_and_jitter():
    l = _factor(4, 4)
    f = cholesky_factor(l @ l.T)
    assert f.jitter == 0
    np.testing.assert_allclose(f.covariance, l @ l.T, atol=1e-12)
    v = np.ones((3, 1))
    semidef = v @ v.T
    g = cholesky_factor(semidef)
    assert g.jitter > 0


def test_cholesky_errors():
    with pytest.raises(InvalidInputError):
        cholesky_factor(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(NotPositiveDefiniteError) as info:
        cholesky_factor(np.diag([1.0, -1.0]))
    assert info.value.min_eigenvalue == pytest.approx(-1.0)


def test_sample_covariance_and_factors():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((500, 3)) * np.array([1.0, 2.0, 3.0])
    np.testing.assert_allclose(sample_covariance(x), np.cov(x.T), atol=1e-12)
    np.testing.assert_allclose(np.diag(diagonal_stddev_factor(x).matrix), x.std(axis=0, ddof=1))
    f = sample_covariance_factor(x)
    np.testing.assert_allclose(f.covariance, np.cov(x.T), atol=1e-10)


def test_sample_factor_errors():
    with pytest.raises(RankDeficiencyError):
        sample_covariance_factor(np.ones((3, 3)))
    x = np.random.default_rng(0).standard_normal((10, 2))
    x[:, 1] = 4.0
    with pytest.raises(DegenerateDimensionError) as info:
        diagonal_stddev_factor(x)
    assert info.value.dimension == 1


def test_largest_scale_power_iteration():
    c = np.diag([9.0, 4.0, 1.0])
    assert largest_scale(c) == pytest.approx(3.0, rel=1e-5)


def test_asymptote_limits():
    assert inverse_wishart_kappa_asymptote(16, np.inf) == pytest.approx(2.0)
    assert inverse_wishart_kappa_asymptote(16, 4) > inverse_wishart_kappa_asymptote(16, 40)
    with pytest.raises(InvalidOversamplingError):
        inverse_wishart_kappa_asymptote(16, 1.0)


def test_preconditioned_kappa_independent_of_true_factor():
    rng1, rng2 = np.random.default_rng(7), np.random.default_rng(7)
    a = sample_kappa_after_preconditioning(8, 40, 20, rng1)
    b = sample_kappa_after_preconditioning(8, 40, 20, rng2, true_factor=_factor(8, 3, spread=2.0))
    np.testing.assert_allclose(a, b, rtol=1e-6)
    with pytest.raises(InvalidInputError):
        sample_kappa_after_preconditioning(8, 9, 5, rng1)
