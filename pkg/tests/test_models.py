import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmcinverse.errors import InvalidInputError, UnphysicalVelocityError
from hmcinverse.models.bimodal import BimodalMixtureProblem, bimodal_log_density, escape_bound
from hmcinverse.models.gaussian import (
    gaussian_posterior,
    isotropic_likelihood_problem,
    prior_correlation,
    reparameterize_by_prior,
    toy_problem,
)
from hmcinverse.models.spectroscopy import (
    SpectroscopyProblem,
    segment_lengths,
    spectroscopy_log_posterior,
    two_peak_observation,
)
from hmcinverse.spectral import kappa
from hmcinverse.targets import (
    GaussianTarget,
    LinearBijector,
    SoftplusBijector,
    finite_difference_check,
    pushforward_density,
    tempered_density,
    tempering_exponents,
)


@pytest.fixture(scope="module")
def toy():
    return toy_problem()


@pytest.fixture(scope="module")
def spectro():
    p = SpectroscopyProblem(parameterization="shell", grid=12, n_chords=6, n_frequencies=32, n_knots=6)
    return p.with_observation(two_peak_observation(p, np.random.default_rng(0)))


@pytest.mark.parametrize(
    "t,mode,expected",
    [(1, "likelihood", (1, 1)), (4, "likelihood", (1, 0.25)), (np.inf, "likelihood", (1, 0)),
     (4, "posterior", (0.25, 0.25))],
)
def test_tempering_exponents(t, mode, expected):
    assert tempering_exponents(t, mode) == pytest.approx(expected)


@pytest.mark.parametrize("t,mode", [(0.5, "likelihood"), (np.inf, "posterior"), (2, "other")])
def test_tempering_exponents_invalid(t, mode):
    with pytest.raises(InvalidInputError):
        tempering_exponents(t, mode)


def test_gaussian_target_gradients():
    rng = np.random.default_rng(0)
    l = np.tril(rng.standard_normal((4, 4))) + 3 * np.eye(4)
    t = GaussianTarget(np.arange(4.0), l)
    assert finite_difference_check(t, rng.standard_normal((5, 4))).passed


def test_toy_problem_conditioning(toy):
    mean, f = gaussian_posterior(toy)
    assert toy.dimension == 40
    assert 50 < kappa(f) < 500
    np.testing.assert_allclose(toy.prior_covariance, toy.prior_covariance.T)


def test_toy_gradients_and_tempered_moments(toy):
    rng = np.random.default_rng(1)
    pts = toy.sample_prior(rng, 5)
    assert finite_difference_check(toy, pts).passed
    m_inf, c_inf = toy.tempered_moments(np.inf, "likelihood")
    np.testing.assert_allclose(m_inf, 0, atol=1e-12)
    np.testing.assert_allclose(c_inf, toy.prior_covariance, rtol=1e-6, atol=1e-10)


def test_prior_correlation_nugget():
    c = prior_correlation(np.linspace(0, 1, 5), 0.3, 1e-3)
    np.testing.assert_allclose(np.diag(c), 1 + 1e-3)
    assert np.linalg.eigvalsh(c)[0] >= 1e-3 - 1e-12


def test_reparameterized_posterior_matches(toy):
    w = reparameterize_by_prior(toy)
    m1, f1 = gaussian_posterior(toy)
    m2, f2 = gaussian_posterior(w)
    l = toy.prior_factor.matrix
    np.testing.assert_allclose(l @ m2, m1, rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(l @ f2.covariance @ l.T, f1.covariance, rtol=1e-5, atol=1e-10)


def test_isotropic_likelihood_problem_moments():
    p = isotropic_likelihood_problem([1.0, -2.0], [0.5, 2.0])
    mean, cov = p.tempered_moments(1.0)
    prec = 1 + 1 / np.array([0.25, 4.0])
    np.testing.assert_allclose(np.diag(cov), 1 / prec)
    np.testing.assert_allclose(mean, np.array([1.0 / 0.25, -2.0 / 4.0]) / prec)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 8), seed=st.integers(0, 1000), sigma=st.floats(0.05, 1.0))
def test_bimodal_gradients(n, seed, sigma):
    p = BimodalMixtureProblem(n, min(n, 2), sigma)
    x = np.random.default_rng(seed).standard_normal((3, n))
    assert finite_difference_check(p, x).passed


def test_bimodal_symmetry_and_helpers():
    p = BimodalMixtureProblem(4, 2, 0.1)
    x = np.array([0.9, -0.4, 0.2, 1.0])
    lp1, _ = bimodal_log_density(p, x)
    lp2, _ = bimodal_log_density(p, x * np.array([-1, -1, 1, 1]))
    assert lp1 == pytest.approx(lp2)
    assert p.mode_location() == pytest.approx(1 / 1.01)
    assert escape_bound(0.1) == pytest.approx(np.exp(-101))
    assert p.tempered_largest_scale(np.inf) == pytest.approx(1.0)


def test_bimodal_rejects_bad_input():
    with pytest.raises(InvalidInputError):
        BimodalMixtureProblem(2, 3, 0.1)
    with pytest.raises(InvalidInputError):
        BimodalMixtureProblem(2, 1, 0.1, prior_scales=[1.0, -1.0])


def test_segment_lengths_diagonal_and_horizontal():
    grid = 4
    lh = segment_lengths(np.array([-1.0, 0.1]), np.array([1.0, 0.1]), grid)
    assert lh.sum() == pytest.approx(2.0)
    ld = segment_lengths(np.array([-1.0, -1.0]), np.array([1.0, 1.0]), grid)
    assert ld.sum() == pytest.approx(2 * np.sqrt(2))


@pytest.mark.parametrize("param", ["shell", "slab"])
def test_spectroscopy_gradients(param):
    p = SpectroscopyProblem(parameterization=param, grid=10, n_chords=5, n_frequencies=24, n_knots=5)
    p = p.with_observation(two_peak_observation(p, np.random.default_rng(2)))
    x = 0.5 * p.sample_prior(np.random.default_rng(3), 4)
    assert finite_difference_check(p, x).max_relative_error < 1e-5


def test_spectroscopy_forward_and_signs(spectro):
    x = np.zeros((1, spectro.dimension))
    mu = spectro.forward(x)
    assert mu.shape == (1, spectro.n_frequencies, spectro.n_chords)
    assert np.all(mu >= 0)
    k = spectro.n_knots
    xv = x.copy()
    xv[0, 2 * k:3 * k] = 1.0
    assert spectro.velocity_sign(xv)[0] == 1
    assert spectro.velocity_sign(-xv)[0] == -1


def test_spectroscopy_doppler_pole(spectro):
    k = spectro.n_knots
    x = np.zeros((1, spectro.dimension))
    x[0, 2 * k:3 * k] = 100.0
    with pytest.raises(UnphysicalVelocityError):
        spectro.forward(x)
    with pytest.raises(UnphysicalVelocityError):
        spectroscopy_log_posterior(spectro, x[0])


def test_spectroscopy_requires_observation():
    p = SpectroscopyProblem(grid=8, n_chords=4, n_frequencies=16, n_knots=4)
    with pytest.raises(InvalidInputError):
        p.evaluate_split(np.zeros((1, p.dimension)))
    with pytest.raises(InvalidInputError):
        p.with_observation(np.zeros((3, 3)))


def test_tempered_and_pushforward_gradients(toy):
    rng = np.random.default_rng(5)
    pts = toy.sample_prior(rng, 3)
    for t in (2.0, np.inf):
        assert finite_difference_check(tempered_density(toy, t), pts).passed
    f = LinearBijector(np.diag(np.linspace(0.5, 2, toy.dimension)), np.ones(toy.dimension))
    pf = pushforward_density(toy, f)
    assert finite_difference_check(pf, f.inverse(pts)).passed


def test_softplus_bijector_roundtrip():
    b = SoftplusBijector()
    z = np.linspace(-5, 5, 11)[None, :]
    np.testing.assert_allclose(b.inverse(b.forward(z)), z, atol=1e-10)


def test_spectroscopy_velocity_modes(spectro):
    k = spectro.n_knots
    unit = np.zeros((1, spectro.dimension))
    unit[0, 2 * k:3 * k] = 1.0
    # mean velocity is linear in the velocity block at fixed amplitudes
    per_unit = spectro.mean_velocity(unit)[0]
    w = spectro.linewidth_velocity() / per_unit
    x = np.vstack([2.5 * w * unit, -2.5 * w * unit, 0.3 * w * unit])
    np.testing.assert_allclose(spectro.mean_velocity(x), [2.5, -2.5, 0.3] * np.array(spectro.linewidth_velocity()))
    assert spectro.velocity_mode(x).tolist() == [1, -1, 0]
