"""Figure recipes: each writes one tidy CSV per panel and a JSON manifest.

Budgets (trial counts, rounds, draws) are divided by ``scale``; ``scale=1`` is
the desk-scale default. Plotting is left to external tools.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .hmc import WorkPool
from .io import SCHEMAS, write_csv, write_json
from .models.bimodal import BimodalMixtureProblem
from .models.gaussian import gaussian_posterior, toy_problem
from .models.spectroscopy import SpectroscopyProblem, two_peak_observation
from .planner import PlannerConfig, plan_speedup, run_algorithm1, run_plain_hmc
from .remc import RemcConfig, run_remc, select_tmax
from .rng import AUX, stream
from .spectral import (
    inverse_wishart_kappa_asymptote,
    kappa,
    sample_kappa_after_preconditioning,
    singular_values,
)

__all__ = ["Panel", "RECIPES", "run_recipe", "recipe_names"]


@dataclass
class Panel:
    name: str
    columns: tuple
    rows: list
    axes: dict = field(default_factory=dict)


def _budget(n, scale, floor=1):
    return max(floor, int(round(n / scale)))


def wishart_kappa(seed, scale, pool):
    """Mean preconditioned condition number against the large-N asymptote."""
    n = 64
    trials = _budget(200, scale, 5)
    rows = []
    for i, omega in enumerate((1.5, 2, 4, 10, 20, 50)):
        rng = stream(seed, AUX, i)
        ks = sample_kappa_after_preconditioning(n, int(round(omega * n)), trials, rng)
        rows.append((n, float(omega), trials, float(np.mean(ks)),
                     float(np.std(ks, ddof=1) / np.sqrt(trials)),
                     inverse_wishart_kappa_asymptote(n, omega)))
    return [Panel("kappa", ("N", "omega", "trials", "kappa_mean", "kappa_se", "asymptote"), rows,
                  {"x": "omega", "y": ["kappa_mean", "asymptote"], "error": "kappa_se"})]


def gaussian_spectra(seed, scale, pool):
    """Singular values of the prior, likelihood and posterior covariance factors."""
    p = toy_problem(n_state=40, n_chords=20, delta=1e-3, seed=seed)
    _, post_factor = gaussian_posterior(p)
    prior = np.linalg.eigvalsh(p.prior_covariance)[::-1]
    lik = np.linalg.eigvalsh(p.precision(1.0) - p.precision(0.0))[::-1]
    post = singular_values(post_factor.matrix) ** 2
    rows = []
    for panel, vals in (("prior", prior), ("likelihood", lik), ("posterior", post)):
        rows += [(panel, i, float(v)) for i, v in enumerate(vals)]
    meta = [("kappa_posterior", kappa(post_factor))]
    return [
        Panel("spectra", ("panel", "index", "eigenvalue"), rows,
              {"x": "index", "y": "eigenvalue", "facet": "panel", "log_y": True}),
        Panel("summary", ("metric", "value"), meta, {}),
    ]


def traces(seed, scale, pool):
    """Stage-by-stage traces of the staged sampler on the Gaussian toy."""
    p = toy_problem()
    res = run_algorithm1(p, _budget(1600, scale, 50), PlannerConfig(trace_dimensions=2),
                         seed=seed, pool=pool)
    rows = []
    for label, t, xs in res.traces:
        for c in range(xs.shape[0]):
            for d in range(xs.shape[1]):
                rows.append((label, t, c, d, float(xs[c, d])))
    stages = [(s.label, s.draws, s.step_size, s.leapfrog_steps, s.acceptance) for s in res.plan.stages]
    return [
        Panel("traces", SCHEMAS["traces"], rows,
              {"x": "transition_index", "y": "value", "facet": ["stage", "dimension"]}),
        Panel("stages", ("stage", "draws", "step_size", "leapfrog_steps", "acceptance"), stages, {}),
    ]


def preconditioner_comparison(seed, scale, pool):
    """Predicted speedup curves over the oversampling ratio for a few ESS targets."""
    p = toy_problem()
    _, f = gaussian_posterior(p)
    k0 = kappa(f)
    n = p.dimension
    rows = []
    for s_f in (400, 1600, 6400):
        est = plan_speedup(k0, n, s_f)
        for om, ks, sp in zip(est.omegas, est.kappa_s, est.speedups):
            rows.append((s_f, float(om), float(ks), float(sp), int(est.S_star)))
    return [Panel("speedup", ("s_f", "omega", "kappa_s", "speedup", "s_star"), rows,
                  {"x": "omega", "y": "speedup", "group": "s_f", "log_x": True})]


def tempering_scatter(seed, scale, pool):
    """Replica positions of a 2-D bimodal problem on a short tempered ladder."""
    p = BimodalMixtureProblem(2, 1, 0.1)
    rounds = _budget(400, scale, 20)
    rows = []
    for mode in ("likelihood", "posterior"):
        cfg = RemcConfig(n_chains=4, n_rungs=6, t_max=100.0, mode=mode, rounds=rounds,
                         schedule_sweeps=0, keep_hottest=True)
        r = run_remc(p, cfg, seed=seed, pool=pool)
        for name, d in (("T=1", r.samples), ("T=max", r.hottest_samples)):
            flat = d.reshape(-1, 2)
            rows += [(mode, name, i, float(a), float(b)) for i, (a, b) in enumerate(flat)]
    return [Panel("scatter", ("mode", "rung", "draw", "x0", "x1"), rows,
                  {"x": "x0", "y": "x1", "facet": ["mode", "rung"]})]


def lambda_scaling(seed, scale, pool):
    """Global communication barrier against dimension for both tempering modes."""
    rounds = _budget(1000, scale, 20)
    rows = []
    for mode in ("posterior", "likelihood"):
        for n in (4, 16, 64):
            p = BimodalMixtureProblem(n, 1, 0.1)
            cfg = RemcConfig(n_chains=20, n_rungs=32, t_max=100.0, mode=mode, rounds=rounds,
                             lambda_r1=1.0)
            r = run_remc(p, cfg, seed=seed, pool=pool)
            rows.append((mode, n, r.statistics.barrier, r.statistics.gamma, r.round_trip_rate))
    return [Panel("barrier", ("mode", "N", "barrier", "gamma", "round_trip_rate"), rows,
                  {"x": "N", "y": "barrier", "group": "mode", "log_x": True, "log_y": True})]


def _spectroscopy_problem(seed):
    p = SpectroscopyProblem(parameterization="shell", grid=12, n_chords=10, n_frequencies=48,
                            n_knots=8)
    return p.with_observation(two_peak_observation(p, stream(seed, AUX, 7)))


def potential_traces(seed, scale, pool):
    """Likelihood potential and velocity mode along plain HMC and REMC runs on spectroscopy."""
    p = _spectroscopy_problem(seed)
    rows = []
    cfg = RemcConfig(n_chains=8, n_rungs=10, t_max=1e3, rounds=_budget(800, scale, 20), schedule_sweeps=1,
                     schedule_rounds=100, adapt_iterations=200, leapfrog_steps=30)
    r = run_remc(p, cfg, seed=seed, pool=pool)
    rows += _potential_rows("remc", p, r.samples)
    plain = run_plain_hmc(p, 8, _budget(600, scale, 20), seed, adapt_iterations=200, pilot_draws=100,
                          pool=pool).samples
    rows += _potential_rows("plain-hmc", p, plain)
    return [Panel("potential", ("sampler", "transition_index", "chain", "potential", "velocity_mode"),
                  rows, {"x": "transition_index", "y": "potential", "color": "velocity_mode",
                         "facet": "sampler"})]


def _potential_rows(label, p, draws):
    k, s, n = draws.shape
    flat = draws.reshape(-1, n)
    _, ll, _, _ = p.evaluate_split(flat)
    u = (-ll).reshape(k, s)
    mode = p.velocity_mode(flat).reshape(k, s)
    return [(label, t, c, float(u[c, t]), int(mode[c, t])) for c in range(k) for t in range(s)]


def leapfrog_sweep(seed, scale, pool):
    """Leapfrog steps per min-ESS against the trajectory-length multiplier."""
    p = toy_problem()
    rounds = _budget(1000, scale, 20)
    rows = []
    for mult in (0.25, 0.5, 1, 2, 4):
        cfg = RemcConfig(n_chains=20, n_rungs=12, t_max=1e4, rounds=rounds, leapfrog_multiplier=mult)
        r = run_remc(p, cfg, seed=seed, pool=pool)
        rows.append((float(mult), r.leapfrog_steps, r.report.min_ess, r.report.leapfrog_total,
                     r.report.leapfrog_per_min_ess))
    return [Panel("sweep", ("multiplier", "leapfrog_steps", "min_ess", "leapfrog_total",
                            "leapfrog_per_min_ess"), rows,
                  {"x": "multiplier", "y": "leapfrog_per_min_ess", "log_x": True})]


def tmax_comparison(seed, scale, pool):
    """Per-rung split R-hat of a swap-free geometric burn-in on the bimodal toy."""
    p = BimodalMixtureProblem(10, 5, 0.025)
    burn = _budget(500, scale, 20)
    t_max, rh, temps = select_tmax(p, n_rungs=16, ratio=2.0, burn_in=burn, seed=seed, pool=pool)
    rows = [(i, float(t), float(r), bool(t == t_max)) for i, (t, r) in enumerate(zip(temps, rh))]
    return [Panel("rhat", ("rung", "T", "rhat", "selected"), rows,
                  {"x": "T", "y": "rhat", "log_x": True, "threshold": 1.1})]


RECIPES = {
    "wishart-kappa": wishart_kappa,
    "gaussian-spectra": gaussian_spectra,
    "traces": traces,
    "preconditioner-comparison": preconditioner_comparison,
    "tempering-scatter": tempering_scatter,
    "lambda-scaling": lambda_scaling,
    "potential-traces": potential_traces,
    "leapfrog-sweep": leapfrog_sweep,
    "tmax-comparison": tmax_comparison,
}


def recipe_names():
    return sorted(RECIPES)


def run_recipe(name: str, out_dir, seed: int = 0, scale: float = 1.0, pool=None) -> dict:
    """Run one recipe, write its panels and manifest; returns the manifest."""
    if name not in RECIPES:
        raise KeyError(name)
    if scale <= 0:
        raise ValueError("scale must be positive; use 0 only for a dry run")
    out = Path(out_dir)
    pool = pool or WorkPool(1)
    t0 = time.perf_counter()
    panels = RECIPES[name](seed, scale, pool)
    files = []
    for panel in panels:
        fname = f"{name}_{panel.name}.csv"
        write_csv(out / fname, panel.columns, panel.rows)
        files.append({"file": fname, "columns": list(panel.columns), "axes": panel.axes,
                      "rows": len(panel.rows)})
    manifest = {"recipe": name, "seed": seed, "scale": scale, "panels": files,
                "description": (RECIPES[name].__doc__ or "").strip()}
    write_json(out / f"{name}_manifest.json", manifest)
    manifest["elapsed_seconds"] = time.perf_counter() - t0
    return manifest
