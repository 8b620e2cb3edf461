"""Randomized property suites: factor bounds, gradients, swap identities and ESS.

Each check returns a :class:`PropertyResult` with the measured statistic so the
CLI can print machine-readable summaries and the tests can assert on them.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .diagnostics import effective_sample_size, split_rhat
from .remc import swap_log_ratio
from .spectral import (
    SpectralFactor,
    cholesky_factor,
    diagonal_stddev_factor,
    kappa,
    schatten_norm,
)
from .targets import finite_difference_check, tempering_exponents

__all__ = [
    "PropertyResult",
    "SUITES",
    "run_suite",
    "check_kappa_lower_bound",
    "check_scale_invariance",
    "check_schatten_monotonicity",
    "check_equilibrated_norm",
    "check_jacobi_near_optimal",
    "check_diagonal_dominance",
    "check_sample_stddev_preconditioner",
    "check_chi_square_tail",
    "check_gradients",
    "swap_identity",
    "check_swap_identity",
    "specific_heat",
    "check_specific_heat",
    "check_ess_suite",
]


@dataclass
class PropertyResult:
    name: str
    passed: bool
    instances: int
    statistic: float
    detail: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        d["passed"] = bool(d["passed"])
        d["statistic"] = float(d["statistic"])
        return d


def _random_factor(rng, n, spread=1.5):
    """Lower-triangular factor with log-uniform diagonal and Gaussian off-diagonal.

    Scales stay within a few orders of magnitude: singular values come from the
    Gram matrix, which cannot resolve condition numbers beyond about 1e7.
    """
    lo = np.tril(rng.standard_normal((n, n)), -1)
    d = np.exp(rng.uniform(-spread, spread, n))
    return lo * rng.uniform(0, 1) * d[None, :] + np.diag(d)


def _sizes(rng, count, max_n):
    return rng.integers(1, max_n + 1, size=count)


def _jacobi(factor: np.ndarray) -> np.ndarray:
    """``D^-1 L`` with ``D`` the square root of the diagonal of ``L L^T``."""
    d = np.sqrt(np.sum(factor * factor, axis=1))
    return factor / d[:, None]


def check_kappa_lower_bound(rng, instances=1000, max_n=16) -> PropertyResult:
    worst = np.inf
    for n in _sizes(rng, instances, max_n):
        ratio = kappa(SpectralFactor(_random_factor(rng, n))) / n**0.25
        worst = min(worst, ratio)
    return PropertyResult("kappa_lower_bound", worst >= 1 - 1e-12, instances, worst)


def check_scale_invariance(rng, instances=1000, max_n=32) -> PropertyResult:
    worst = 0.0
    for n in _sizes(rng, instances, max_n):
        f = _random_factor(rng, n, spread=1.5)
        c = np.exp(rng.uniform(-5, 5))
        k1, k2 = kappa(SpectralFactor(f)), kappa(SpectralFactor(c * f))
        worst = max(worst, abs(k2 - k1) / k1)
    return PropertyResult("scale_invariance", worst <= 1e-12, instances, worst)


def check_schatten_monotonicity(rng, instances=1000, max_n=16) -> PropertyResult:
    """``||A G||_S4 >= ||A||_S4 min G`` for nonnegative diagonal ``G``."""
    worst = np.inf
    for n in _sizes(rng, instances, max_n):
        a = rng.standard_normal((n, n))
        g = rng.uniform(0, 3, n)
        lhs = schatten_norm(a * g, 4)
        rhs = schatten_norm(a, 4) * g.min()
        worst = min(worst, lhs - rhs * (1 - 1e-12))
    return PropertyResult("schatten_monotonicity", worst >= 0, instances, worst)


def check_equilibrated_norm(rng, instances=1000, max_n=16) -> PropertyResult:
    """Unit-row banded ``A`` with ``K`` nonzeros per row of ``A A^T`` has ``||A||_2 <= sqrt(K)``."""
    worst = -np.inf
    for n in _sizes(rng, instances, max_n):
        band = int(rng.integers(0, n))
        a = np.tril(np.triu(rng.standard_normal((n, n)), -band), 0)
        a /= np.linalg.norm(a, axis=1, keepdims=True)
        gram = a @ a.T
        k = int(np.max(np.sum(np.abs(gram) > 0, axis=1)))
        worst = max(worst, np.linalg.norm(a, 2) / np.sqrt(k))
    return PropertyResult("equilibrated_norm", worst <= 1 + 1e-12, instances, worst)


def check_jacobi_near_optimal(rng, instances=1000, max_n=16) -> PropertyResult:
    """``kappa(D^-1 L) <= sqrt(N) kappa(G^-1 L)`` for random diagonal ``G``."""
    worst = 0.0
    for n in _sizes(rng, instances, max_n):
        f = _random_factor(rng, n)
        g = np.exp(rng.uniform(-3, 3, n))
        lhs = kappa(SpectralFactor(_jacobi(f)))
        rhs = np.sqrt(n) * kappa(SpectralFactor(f / g[:, None]))
        worst = max(worst, lhs / rhs)
    return PropertyResult("jacobi_near_optimal", worst <= 1 + 1e-10, instances, worst)


def _dominant_covariance(rng, n, delta):
    e = rng.standard_normal((n, n))
    e = np.triu(e, 1)
    e = e + e.T
    rows = np.abs(e).sum(axis=1).max()
    if rows > 0:
        e *= delta * rng.uniform(0.2, 1.0) / rows
    d = np.exp(rng.uniform(-3, 3, n))
    return d[:, None] * (np.eye(n) + e) * d[None, :]


def check_diagonal_dominance(rng, instances=1000, max_n=16, deltas=(0.1, 0.5, 0.9)) -> PropertyResult:
    """``kappa(D^-1 L) <= N^(1/4) sqrt((1+delta)/(1-delta))`` for dominant ``C``."""
    worst = 0.0
    per_delta = {}
    for delta in deltas:
        w = 0.0
        for n in _sizes(rng, instances, max_n):
            c = _dominant_covariance(rng, n, delta)
            l = cholesky_factor(c).matrix
            bound = n**0.25 * np.sqrt((1 + delta) / (1 - delta))
            w = max(w, kappa(SpectralFactor(_jacobi(l))) / bound)
        per_delta[str(delta)] = w
        worst = max(worst, w)
    return PropertyResult("diagonal_dominance", worst <= 1 + 1e-10, instances * len(deltas), worst,
                          {"worst_ratio_by_delta": per_delta})


def check_sample_stddev_preconditioner(rng, instances=1000, n=8, eps=0.5, p=0.05) -> PropertyResult:
    """Sample standard deviations lose at most ``sqrt((1+eps)/(1-eps))`` with frequency ``>= 1-p``."""
    s = int(np.ceil(25 / eps**2 * np.log(3 * n / p)))
    factor = 1.0 / np.sqrt((1 - eps) / (1 + eps))
    hits = 0
    for _ in range(instances):
        l = _random_factor(rng, n)
        x = rng.standard_normal((s, n)) @ l.T
        d_hat = diagonal_stddev_factor(x).matrix.diagonal()
        k_hat = kappa(SpectralFactor(l / d_hat[:, None]))
        k_opt = kappa(SpectralFactor(_jacobi(l)))
        hits += k_hat <= k_opt * factor * (1 + 1e-12)
    freq = hits / instances
    return PropertyResult("sample_stddev_preconditioner", freq >= 1 - p, instances, freq,
                          {"samples": s, "epsilon": eps, "p": p})


def check_chi_square_tail(rng, instances=1000, sizes=(50, 100, 200, 400), eps=0.5) -> PropertyResult:
    """Frequency of ``|mean(Z^2) - 1 - mean(Z)^2| >= eps`` against ``3 exp(-S eps^2 / 25)``."""
    worst = -np.inf
    detail = {}
    for s in sizes:
        z = rng.standard_normal((instances, s))
        dev = np.abs(np.mean(z * z, axis=1) - 1 - np.mean(z, axis=1) ** 2)
        freq = float(np.mean(dev >= eps))
        bound = 3 * np.exp(-s * eps**2 / 25)
        detail[str(s)] = {"frequency": freq, "bound": float(bound)}
        worst = max(worst, freq - bound)
    return PropertyResult("chi_square_tail", worst <= 0, instances * len(sizes), worst, detail)


def check_gradients(targets: dict, rng, points=100, tol=1e-5) -> list:
    """Finite-difference gradient checks at ``points`` prior draws per named target."""
    out = []
    for name, t in targets.items():
        x = t.initial_points(rng, points)
        res = finite_difference_check(t, x)
        out.append(PropertyResult(f"gradient_{name}", res.max_relative_error < tol, points,
                                  res.max_relative_error))
    return out


def swap_identity(problem, t_cold, t_hot, mode, n, rng):
    """Mean swap probability minus twice the ordering frequency, with its standard error.

    Replicas are exact draws from the two tempered Gaussians. The per-pair
    difference ``min(1, a) - 2 [a > 1]`` has mean zero.
    """
    xc = problem.sample_tempered(rng, n, t_cold, mode)
    xh = problem.sample_tempered(rng, n, t_hot, mode)
    lp_c, ll_c, _, _ = problem.evaluate_split(xc)
    lp_h, ll_h, _, _ = problem.evaluate_split(xh)
    ab = np.array([tempering_exponents(t, mode) for t in (t_cold, t_hot)])
    log_a = swap_log_ratio(ab[:, 0], ab[:, 1], np.stack([lp_c, lp_h]), np.stack([ll_c, ll_h]), 0)
    prob = np.exp(np.minimum(log_a, 0.0))
    order = (log_a > 0).astype(float)
    d = prob - 2 * order
    return float(prob.mean()), float(2 * order.mean()), float(d.mean()), float(d.std(ddof=1) / np.sqrt(n))


def check_swap_identity(problem, rng, pairs=((1.0, 2.0), (2.0, 5.0)), n=20000) -> list:
    out = []
    for mode in ("likelihood", "posterior"):
        for tc, th in pairs:
            mean_p, twice, diff, se = swap_identity(problem, tc, th, mode, n, rng)
            out.append(PropertyResult(
                f"swap_identity_{mode}_{tc:g}_{th:g}", abs(diff) <= 3 * se, n, diff / se,
                {"mean_swap": mean_p, "twice_ordering": twice, "se": se},
            ))
    return out


def specific_heat(problem, temperature, mode, n, rng, rel_step=0.02):
    """``(Var[U], -T^2 dE[U]/dT)`` with ``U`` the tempered log term, by exact sampling.

    ``U`` is the log likelihood for likelihood tempering and the log posterior for
    posterior tempering. The derivative uses centered differences with common
    random numbers, one-sided at ``T = 1``.
    """
    def draws(t, z):
        mean, cov = problem.tempered_moments(t, mode)
        return mean + z @ np.linalg.cholesky(cov).T

    def energy(x):
        lp, ll, _, _ = problem.evaluate_split(x)
        return ll if mode == "likelihood" else lp + ll

    z = rng.standard_normal((n, problem.dimension))
    var = float(np.var(energy(draws(temperature, z)), ddof=1))
    dt = rel_step * temperature
    e_hi = energy(draws(temperature + dt, z)).mean()
    if temperature - dt >= 1:
        e_lo = energy(draws(temperature - dt, z)).mean()
        slope = (e_hi - e_lo) / (2 * dt)
    else:
        # one-sided second-order difference; tempered laws are undefined below T = 1
        e_0 = energy(draws(temperature, z)).mean()
        e_2 = energy(draws(temperature + 2 * dt, z)).mean()
        slope = (-3 * e_0 + 4 * e_hi - e_2) / (2 * dt)
    return var, float(-temperature**2 * slope)


def check_specific_heat(problem, rng, temperatures=(1.0, 4.0, 16.0), n=200_000, tol=0.02) -> list:
    out = []
    for mode in ("likelihood", "posterior"):
        for t in temperatures:
            var, rhs = specific_heat(problem, t, mode, n, rng)
            rel = abs(var - rhs) / abs(rhs)
            out.append(PropertyResult(f"specific_heat_{mode}_{t:g}", rel <= tol, n, rel,
                                      {"variance": var, "derivative_form": rhs}))
    return out


def check_ess_suite(rng) -> list:
    out = []
    iid = rng.standard_normal((4, 1000, 3))
    r = effective_sample_size(iid).values / 4000
    out.append(PropertyResult("ess_iid", bool(np.all((r >= 0.8) & (r <= 1.2))), 4000, float(r.min())))
    phi = 0.9
    x = np.empty((4, 20000))
    x[:, 0] = rng.standard_normal(4) / np.sqrt(1 - phi**2)
    e = rng.standard_normal((4, 20000))
    for t in range(1, 20000):
        x[:, t] = phi * x[:, t - 1] + e[:, t]
    ratio = effective_sample_size(x).values[0] / x.size
    expect = (1 - phi) / (1 + phi)
    out.append(PropertyResult("ess_ar1", abs(ratio / expect - 1) <= 0.3, x.size, ratio / expect))
    stuck = np.stack([rng.standard_normal(1000) - 3, rng.standard_normal(1000) + 3])
    ess = effective_sample_size(stuck).values[0]
    out.append(PropertyResult("ess_stuck_chains", ess < 20, stuck.size, ess,
                              {"rhat": split_rhat(stuck).max}))
    return out


def _lemma_suite(rng, instances=1000):
    return [
        check_kappa_lower_bound(rng, instances),
        check_scale_invariance(rng, instances),
        check_schatten_monotonicity(rng, instances),
        check_equilibrated_norm(rng, instances),
        check_jacobi_near_optimal(rng, instances),
        check_diagonal_dominance(rng, instances),
        check_sample_stddev_preconditioner(rng, instances),
        check_chi_square_tail(rng, instances),
    ]


def _gradient_suite(rng, points=100):
    from .models.bimodal import BimodalMixtureProblem
    from .models.gaussian import toy_problem
    from .models.spectroscopy import SpectroscopyProblem, two_peak_observation

    targets = {"gaussian_toy": toy_problem(), "bimodal": BimodalMixtureProblem(10, 5, 0.1)}
    for kind in ("shell", "slab"):
        p = SpectroscopyProblem(parameterization=kind, grid=16, n_chords=10, n_frequencies=64, n_knots=8)
        targets[f"spectroscopy_{kind}"] = p.with_observation(two_peak_observation(p, rng))
    return check_gradients(targets, rng, points)


def _swap_suite(rng):
    from .models.gaussian import isotropic_likelihood_problem

    problem = isotropic_likelihood_problem(np.full(6, 0.5), np.linspace(0.3, 1.0, 6))
    return check_swap_identity(problem, rng)


SUITES = {
    "lemmas": _lemma_suite,
    "gradients": _gradient_suite,
    "swaps": _swap_suite,
    "ess": check_ess_suite,
}


def run_suite(name: str, seed: int = 0) -> list:
    """Run one named suite; raises ``KeyError`` for unknown names."""
    fn = SUITES[name]
    return fn(np.random.default_rng(seed))
