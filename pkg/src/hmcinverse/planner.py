"""Staged burn-in with a data-driven decision on covariance preconditioning.

The controller runs: step-size adaptation at five leapfrog steps, two HMC stages
that estimate the largest posterior scale and the condition number, an optional
no-U-turn stage whose draws form the preconditioner, re-adaptation, and the
final stage that runs until the smallest per-dimension ESS reaches its target.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .diagnostics import RunReport, StageRecord, compile_report, effective_sample_size, split_rhat
from .errors import (
    AdaptationWarning,
    InvalidInputError,
    PreconditionerFallbackWarning,
    RankDeficiencyError,
)
from .hmc import ChainBatch, adapt_step_size, hmc_transition, integration_steps
from .nuts import nuts_transition
from .rng import INIT, stream
from .spectral import (
    SpectralFactor,
    diagonal_stddev_factor,
    inverse_wishart_kappa_asymptote,
    largest_scale,
    sample_covariance_factor,
)
from .targets import LinearBijector

__all__ = [
    "KappaEstimate",
    "estimate_kappa_from_acceptance",
    "SpeedupEstimate",
    "speedup",
    "plan_speedup",
    "pooled_largest_scale",
    "install_preconditioner",
    "PlannerConfig",
    "StagePlan",
    "Algorithm1Result",
    "run_algorithm1",
    "PlainHmcResult",
    "run_plain_hmc",
]

STAGE_ORDER = ("adapt0", "stage1", "stage2", "nuts", "adapt1", "final")
SATURATION = 1 - 1e-6


@dataclass
class KappaEstimate:
    value: float
    saturated: bool


def estimate_kappa_from_acceptance(lambda1: float, h: float, accept_rate: float) -> KappaEstimate:
    """Condition number implied by the acceptance rate at step size ``h``.

    ``kappa ~ (lambda1 / h) * 2^(7/4) * sqrt(Phi^-1(1 - a/2))``. Rates at or
    above ``1 - 1e-6`` are floored there and flagged as saturated.
    """
    if not (lambda1 > 0 and h > 0):
        raise InvalidInputError("lambda1 and h must be positive")
    if not accept_rate > 0:
        raise InvalidInputError("accept_rate must be positive")
    saturated = accept_rate >= SATURATION
    a = min(float(accept_rate), SATURATION)
    value = (lambda1 / h) * 2**1.75 * np.sqrt(norm.ppf(1 - a / 2))
    return KappaEstimate(float(value), bool(saturated))


def speedup(kappa0, kappa_s, s, s_f, nuts_cost_multiplier: float = 4.0):
    """Predicted speedup ``S_f k0 / (m S k0 + S_f k_S)`` of preconditioning with ``S`` samples."""
    return s_f * kappa0 / (nuts_cost_multiplier * s * kappa0 + s_f * kappa_s)


@dataclass
class SpeedupEstimate:
    kappa0: float
    omegas: np.ndarray
    kappa_s: np.ndarray
    speedups: np.ndarray
    omega_star: float
    S_star: int
    kappa_s_star: float
    predicted_speedup: float

    @property
    def precondition(self) -> bool:
        return self.predicted_speedup > 1


def plan_speedup(kappa0: float, n: int, s_f: float, nuts_cost_multiplier: float = 4.0,
                 omega_grid=None) -> SpeedupEstimate:
    """Choose the preconditioning sample count ``S = omega N`` maximizing predicted speedup.

    ``kappa_S`` follows the large-N inverse-Wishart limit; ``omega`` ranges over a
    64-point geometric grid on ``[1.05, 200]`` unless given.
    """
    if not (kappa0 > 0 and s_f >= 1):
        raise InvalidInputError("need kappa0 > 0 and S_f >= 1")
    omegas = np.geomspace(1.05, 200.0, 64) if omega_grid is None else np.asarray(omega_grid, float)
    ks = np.array([inverse_wishart_kappa_asymptote(n, w) for w in omegas])
    sp = speedup(kappa0, ks, omegas * n, s_f, nuts_cost_multiplier)
    i = int(np.argmax(sp))
    return SpeedupEstimate(
        float(kappa0), omegas, ks, sp, float(omegas[i]), int(np.ceil(omegas[i] * n)),
        float(ks[i]), float(sp[i]),
    )


def pooled_largest_scale(draws: np.ndarray) -> float:
    """Largest scale from draws ``(K, S, N)`` with each chain's own mean removed."""
    centered = draws - draws.mean(axis=1, keepdims=True)
    flat = centered.reshape(-1, draws.shape[2])
    cov = flat.T @ flat / max(flat.shape[0] - draws.shape[0], 1)
    return largest_scale(cov)


def install_preconditioner(batch: ChainBatch, target, factor=None, mode: str = "full",
                           shift=None) -> ChainBatch:
    """New batch, at the same points and streams, sampling ``z`` with ``x = shift + F z``.

    ``mode='none'`` drops any preconditioner. Statistics start from zero.
    """
    x = batch.states
    if mode == "none":
        pre = None
    elif mode in ("full", "diag"):
        if factor is None:
            raise InvalidInputError(f"mode {mode!r} needs a factor")
        f = factor if isinstance(factor, SpectralFactor) else SpectralFactor(factor)
        if mode == "diag" and not f.is_diagonal():
            f = SpectralFactor(np.diag(np.sqrt(np.diag(f.covariance))))
        pre = LinearBijector(f, shift)
    else:
        raise InvalidInputError(f"unknown preconditioning mode {mode!r}")
    z = x if pre is None else pre.inverse(x)
    nb = ChainBatch(z, batch.step_size.copy(), batch.leapfrog_steps, batch.rngs, pre,
                    jitter=batch.jitter)
    nb.refresh(target)
    return nb


@dataclass
class PlannerConfig:
    n_chains: int = 20
    initial_step_size: float = 1e-3
    target_accept: float = 0.9
    adapt_leapfrog: int = 5
    adapt_iterations: int = 500
    stage1_draws: int = 500
    stage2_draws: int = 500
    nuts_cost_multiplier: float = 4.0
    max_doublings: int = 8
    nuts_recheck: int = 10
    final_recheck: int = 250
    max_nuts_draws: int = 5000
    max_final_draws: int = 200_000
    rhat_stage2: float = 1.2
    rhat_final: float = 1.05
    preconditioning: str = "auto"  # auto | full | diag | none
    s_star: int | None = None
    trace_dimensions: int = 3
    step_size_ceiling: float = 1e3
    preconditioner_draws: str = "s_star"  # s_star | all


@dataclass
class StagePlan:
    stages: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    @property
    def labels(self):
        return [s.label for s in self.stages]

    def is_ordered(self) -> bool:
        idx = [STAGE_ORDER.index(lbl) for lbl in self.labels]
        return idx == sorted(idx)


@dataclass
class Algorithm1Result:
    status: str  # ok | restart_remc | adaptation_failed
    samples: np.ndarray | None
    report: RunReport | None
    plan: StagePlan
    speedup: SpeedupEstimate | None = None
    preconditioner: LinearBijector | None = None
    traces: list = field(default_factory=list)
    final_leapfrog: int = 0
    message: str = ""


class _Abort(Exception):
    def __init__(self, status, message):
        super().__init__(message)
        self.status = status


def run_algorithm1(target, s_f: float, config: PlannerConfig | None = None, seed: int = 0,
                   pool=None) -> Algorithm1Result:
    """Run the staged sampler on ``target`` until the final min-ESS reaches ``s_f``."""
    cfg = config or PlannerConfig()
    plan = StagePlan()
    traces = []
    kappas = {}
    accepts = {}
    n = target.dimension
    x0 = target.initial_points(stream(seed, INIT), cfg.n_chains)
    batch = ChainBatch.start(target, x0, seed, cfg.initial_step_size, cfg.adapt_leapfrog)
    state = {"batch": batch, "estimate": None}
    tdims = min(cfg.trace_dimensions, n)

    def record_trace(label, t, b):
        xs = b.states[:, :tdims]
        traces.append((label, t, xs.copy()))

    def adapt(label):
        b = state["batch"]
        t0 = time.perf_counter()
        b.reset_statistics()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", AdaptationWarning)
            res = adapt_step_size(target, b, cfg.target_accept, cfg.adapt_iterations,
                                  ceiling=cfg.step_size_ceiling, pool=pool)
        plan.timings[label] = time.perf_counter() - t0
        plan.stages.append(StageRecord(label, len(res.trace), float(b.step_size[0]),
                                       b.leapfrog_steps, float(res.final_accept.mean()),
                                       int(b.leapfrog_total.sum())))
        if not res.converged:
            raise _Abort("adaptation_failed",
                         f"{label}: acceptance {res.final_accept.mean():.3f} did not reach "
                         f"{cfg.target_accept} +- 0.05")
        return res

    def hmc_stage(label, draws):
        b = state["batch"]
        b.reset_statistics()
        t0 = time.perf_counter()
        out = np.empty((b.n_chains, draws, n))
        for s in range(draws):
            hmc_transition(target, b, pool)
            out[:, s] = b.states
            record_trace(label, s, b)
        plan.timings[label] = time.perf_counter() - t0
        acc = float(b.accept_prob_sum.sum() / b.proposed.sum())
        accepts[label] = acc
        rec = StageRecord(label, draws, float(b.step_size[0]), b.leapfrog_steps, acc,
                          int(b.leapfrog_total.sum()))
        plan.stages.append(rec)
        return out, rec

    try:
        adapt("adapt0")
        b = state["batch"]
        b.leapfrog_steps = integration_steps(1.0, b.step_size)
        draws1, _ = hmc_stage("stage1", cfg.stage1_draws)
        lam1 = pooled_largest_scale(draws1)
        b.leapfrog_steps = integration_steps(lam1, b.step_size)
        draws2, rec2 = hmc_stage("stage2", cfg.stage2_draws)
        lam1 = pooled_largest_scale(draws2)
        k0 = estimate_kappa_from_acceptance(lam1, float(b.step_size[0]), max(rec2.acceptance, 1e-12))
        kappas["stage2"] = k0.value
        rec2.kappa = k0.value
        rh2 = split_rhat(draws2).max
        rec2.max_rhat = rh2
        if not rh2 < cfg.rhat_stage2:
            raise _Abort("restart_remc", f"split R-hat {rh2:.3f} >= {cfg.rhat_stage2} after stage 2")
        est = plan_speedup(k0.value, n, s_f, cfg.nuts_cost_multiplier)
        state["estimate"] = est
        mode = cfg.preconditioning
        if mode == "auto":
            mode = "full" if est.precondition else "none"
        s_star = cfg.s_star if cfg.s_star is not None else est.S_star
        if mode != "none":
            factor, shift, mode = _preconditioning_stage(target, state, cfg, plan, mode, s_star, n,
                                                         pool, record_trace)
            state["batch"] = install_preconditioner(state["batch"], target, factor, mode, shift)
            state["batch"].step_size[:] = cfg.initial_step_size
            state["batch"].leapfrog_steps = cfg.adapt_leapfrog
            adapt("adapt1")
            b = state["batch"]
            b.leapfrog_steps = integration_steps(1.0, b.step_size)
        final, final_lf = _final_stage(target, state["batch"], s_f, cfg, plan, pool, record_trace)
        rhf = split_rhat(final).max
        if not rhf < cfg.rhat_final:
            raise _Abort("restart_remc", f"split R-hat {rhf:.3f} >= {cfg.rhat_final} in the final stage")
    except _Abort as exc:
        return Algorithm1Result(exc.status, None, None, plan, state["estimate"],
                                state["batch"].preconditioner, traces, 0, str(exc))
    accepts["final"] = plan.stages[-1].acceptance
    report = compile_report(final, final_lf, plan.stages, accepts, kappas)
    return Algorithm1Result("ok", final, report, plan, state["estimate"],
                            state["batch"].preconditioner, traces, final_lf)


def _preconditioning_stage(target, state, cfg, plan, mode, s_star, n, pool, record_trace):
    b = state["batch"]
    if mode == "full" and s_star <= n:
        warnings.warn(
            PreconditionerFallbackWarning(
                f"S* = {s_star} <= N = {n}: using a diagonal preconditioner instead"
            ),
            stacklevel=3,
        )
        mode = "diag"
    t0 = time.perf_counter()
    b.reset_statistics()
    chunks = []
    drawn = 0
    while True:
        for _ in range(cfg.nuts_recheck):
            nuts_transition(target, b, cfg.max_doublings, pool)
            chunks.append(b.states.copy())
            record_trace("nuts", drawn, b)
            drawn += 1
        stacked = np.stack(chunks, axis=1)
        if stacked.shape[1] >= 8:
            mean_ess = float(np.mean(effective_sample_size(stacked, warn=False).values))
            if mean_ess >= s_star or drawn >= cfg.max_nuts_draws:
                break
    plan.timings["nuts"] = time.perf_counter() - t0
    rec = StageRecord("nuts", drawn, float(b.step_size[0]), 0,
                      float(b.accepted.sum() / max(b.proposed.sum(), 1)),
                      int(b.leapfrog_total.sum()), mean_ess=mean_ess)
    plan.stages.append(rec)
    if cfg.preconditioner_draws == "s_star":
        flat = _latest_draws(stacked, max(s_star, 2))
    else:
        flat = stacked.reshape(-1, n)
    shift = flat.mean(axis=0)
    if mode == "full":
        try:
            factor = sample_covariance_factor(flat)
        except RankDeficiencyError as exc:
            warnings.warn(PreconditionerFallbackWarning(f"{exc}; using a diagonal preconditioner"),
                          stacklevel=3)
            mode = "diag"
    if mode == "diag":
        factor = diagonal_stddev_factor(flat)
    return factor, shift, mode


def _latest_draws(draws, count):
    """The ``count`` most recent draws of ``(K, S, N)``, newest transitions first, chain order within."""
    newest_first = draws[:, ::-1].transpose(1, 0, 2).reshape(-1, draws.shape[2])
    return newest_first[:count]


def _final_stage(target, b, s_f, cfg, plan, pool, record_trace):
    t0 = time.perf_counter()
    b.reset_statistics()
    chunks = []
    drawn = 0
    while True:
        for _ in range(cfg.final_recheck):
            hmc_transition(target, b, pool)
            chunks.append(b.states.copy())
            record_trace("final", drawn, b)
            drawn += 1
        final = np.stack(chunks, axis=1)
        ess = effective_sample_size(final, warn=False)
        if ess.min >= s_f or drawn >= cfg.max_final_draws:
            break
    plan.timings["final"] = time.perf_counter() - t0
    acc = float(b.accept_prob_sum.sum() / b.proposed.sum())
    lf = int(b.leapfrog_total.sum())
    plan.stages.append(StageRecord("final", drawn, float(b.step_size[0]), b.leapfrog_steps, acc, lf,
                                   max_rhat=split_rhat(final).max, mean_ess=float(ess.values.mean())))
    return final, lf


@dataclass
class PlainHmcResult:
    samples: np.ndarray
    report: RunReport
    traces: list
    converged: bool


def run_plain_hmc(target, n_chains: int = 20, draws: int = 1000, seed: int = 0,
                  target_accept: float = 0.9, adapt_iterations: int = 500,
                  leapfrog_steps: int | None = None, rhat_threshold: float = 1.05,
                  pilot_draws: int = 200, trace_dimensions: int = 3, pool=None) -> PlainHmcResult:
    """Fixed-length HMC without preconditioning or tempering.

    Without ``leapfrog_steps``, a pilot of ``pilot_draws`` transitions at unit
    integration scale estimates the largest posterior scale, and the trajectory
    then covers a quarter period of it. A final split R-hat at or above
    ``rhat_threshold`` is flagged in the report; the run still completes.
    """
    x0 = target.initial_points(stream(seed, INIT), n_chains)
    b = ChainBatch.start(target, x0, seed, 1e-3, 5)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AdaptationWarning)
        res = adapt_step_size(target, b, target_accept, adapt_iterations, pool=pool)
    stages = [StageRecord("adapt0", len(res.trace), float(b.step_size[0]), b.leapfrog_steps,
                          float(res.final_accept.mean()), int(b.leapfrog_total.sum()))]
    tdims = min(trace_dimensions, target.dimension)
    traces = []
    if leapfrog_steps is None:
        b.leapfrog_steps = integration_steps(1.0, b.step_size)
        pilot = np.empty((n_chains, pilot_draws, target.dimension))
        for s in range(pilot_draws):
            hmc_transition(target, b, pool)
            pilot[:, s] = b.states
            traces.append(("pilot", s, b.states[:, :tdims].copy()))
        leapfrog_steps = integration_steps(pooled_largest_scale(pilot), b.step_size)
    b.leapfrog_steps = int(leapfrog_steps)
    b.reset_statistics()
    out = np.empty((n_chains, draws, target.dimension))
    for s in range(draws):
        hmc_transition(target, b, pool)
        out[:, s] = b.states
        traces.append(("final", s, b.states[:, :tdims].copy()))
    acc = float(b.accept_prob_sum.sum() / b.proposed.sum())
    lf = int(b.leapfrog_total.sum())
    stages.append(StageRecord("final", draws, float(b.step_size[0]), b.leapfrog_steps, acc, lf))
    rh = split_rhat(out).max
    flags = [] if rh < rhat_threshold else [f"rhat_above_threshold:{rhat_threshold}"]
    report = compile_report(out, lf, stages, {"final": acc}, {}, flags=flags)
    return PlainHmcResult(out, report, traces, res.converged)
