"""Batched HMC: leapfrog integration, Metropolis correction and step-size adaptation.

Chains advance in lockstep with a shared leapfrog count and per-chain step sizes.
Each chain owns a counter-based random stream, and the batch is cut into work
units of fixed size, so results do not depend on the number of worker threads.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import AdaptationWarning, InvalidInputError
from .rng import MOMENTUM, chain_streams
from .targets import LinearBijector, TargetDensity, pushforward_density

__all__ = [
    "DIVERGENCE_THRESHOLD",
    "UNIT_SIZE",
    "STEP_JITTER",
    "HamiltonianState",
    "ChainBatch",
    "WorkPool",
    "leapfrog",
    "hmc_transition",
    "run_hmc",
    "AdaptationResult",
    "adapt_step_size",
    "integration_steps",
]

DIVERGENCE_THRESHOLD = 1000.0
UNIT_SIZE = 32
MAX_LEAPFROG = 10_000
STEP_JITTER = 0.1


@dataclass
class HamiltonianState:
    """One phase-space point with the log-density and gradient cached at ``position``."""

    position: np.ndarray
    momentum: np.ndarray
    log_density: float
    gradient: np.ndarray

    @classmethod
    def at(cls, target: TargetDensity, position, momentum):
        position = np.asarray(position, dtype=float)
        lp, g, _ = target.evaluate(position[None, :])
        return cls(position, np.asarray(momentum, dtype=float), float(lp[0]), g[0])

    @property
    def hamiltonian(self) -> float:
        return -self.log_density + 0.5 * float(self.momentum @ self.momentum)


def _integrate(target, x, p, grad, h, steps, aux=None):
    """Kick-drift-kick over ``steps`` for every row; rows that blow up are frozen.

    ``h`` is per row. Returns the final phase-space point, its log-density,
    gradient and aux entries, and a mask of rows whose trajectory became non-finite.
    """
    h = np.asarray(h, dtype=float).reshape(-1, 1)
    alive = np.ones(x.shape[0], dtype=bool)
    logp = None
    for _ in range(steps):
        p_half = p + 0.5 * h * grad
        x_new = x + h * p_half
        lp_new, g_new, aux_new = target.evaluate(x_new)
        ok = np.isfinite(lp_new) & np.all(np.isfinite(g_new), axis=1) & alive
        alive = ok
        x = np.where(ok[:, None], x_new, x)
        grad = np.where(ok[:, None], g_new, grad)
        p = np.where(ok[:, None], p_half + 0.5 * h * g_new, p)
        logp = lp_new if logp is None else np.where(ok, lp_new, logp)
        if aux is not None:
            aux = {k: np.where(ok.reshape((-1,) + (1,) * (np.ndim(v) - 1)), aux_new[k], aux[k])
                   for k, v in aux.items()}
        if not alive.any():
            break
    return x, p, logp, grad, aux, ~alive


def leapfrog(target: TargetDensity, state: HamiltonianState, h: float, steps: int):
    """Integrate one state for ``steps`` leapfrog steps; returns ``(final_state, delta_H)``.

    ``delta_H`` is ``inf`` if the trajectory left the region where the density is finite.
    """
    if not h > 0 or steps < 1:
        raise InvalidInputError("need h > 0 and at least one step")
    x, p, lp, g, _, div = _integrate(
        target, state.position[None, :], state.momentum[None, :], state.gradient[None, :],
        np.array([h]), int(steps),
    )
    if div[0]:
        return state, float("inf")
    final = HamiltonianState(x[0], p[0], float(lp[0]), g[0])
    return final, final.hamiltonian - state.hamiltonian


class WorkPool:
    """Thread pool that runs fixed work units; ``threads=1`` runs inline."""

    def __init__(self, threads: int = 1):
        self.threads = max(1, int(threads))
        self._ex = ThreadPoolExecutor(self.threads) if self.threads > 1 else None

    def map(self, fn, items):
        items = list(items)
        if self._ex is None or len(items) == 1:
            return [fn(i) for i in items]
        return list(self._ex.map(fn, items))

    def close(self):
        if self._ex is not None:
            self._ex.shutdown()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


_INLINE = WorkPool(1)


def _units(n: int):
    return [np.arange(s, min(s + UNIT_SIZE, n)) for s in range(0, n, UNIT_SIZE)]


@dataclass
class ChainBatch:
    """K chains stored in sampling coordinates.

    With a preconditioner ``x = shift + L z`` attached, ``positions`` holds ``z`` and
    ``states`` maps back to the original coordinates. Each transition scales a
    chain's step size by a uniform factor in ``[1 - jitter, 1 + jitter]``; with a
    fixed trajectory length, a Gaussian direction whose period divides the
    integration time would otherwise never move.
    """

    positions: np.ndarray
    step_size: np.ndarray
    leapfrog_steps: int
    rngs: list
    preconditioner: LinearBijector | None = None
    logp: np.ndarray | None = None
    grad: np.ndarray | None = None
    aux: dict = field(default_factory=dict)
    accepted: np.ndarray | None = None
    proposed: np.ndarray | None = None
    accept_prob_sum: np.ndarray | None = None
    divergences: np.ndarray | None = None
    leapfrog_total: np.ndarray | None = None
    last_accept_prob: np.ndarray | None = None
    jitter: float = STEP_JITTER

    def __post_init__(self):
        self.positions = np.atleast_2d(np.array(self.positions, dtype=float))
        k = self.positions.shape[0]
        self.step_size = np.broadcast_to(np.asarray(self.step_size, dtype=float), (k,)).copy()
        if np.any(self.step_size <= 0):
            raise InvalidInputError("step sizes must be positive")
        if len(self.rngs) != k:
            raise InvalidInputError("need one random stream per chain")
        self.leapfrog_steps = int(self.leapfrog_steps)
        if self.leapfrog_steps < 1:
            raise InvalidInputError("leapfrog_steps must be >= 1")
        if not 0 <= self.jitter < 1:
            raise InvalidInputError("jitter must lie in [0, 1)")
        for name in ("accepted", "proposed", "divergences", "leapfrog_total"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(k, dtype=np.int64))
        if self.accept_prob_sum is None:
            self.accept_prob_sum = np.zeros(k)

    @classmethod
    def start(cls, target, x0, seed, step_size=0.1, leapfrog_steps=1, stream_ids=(),
              preconditioner=None, jitter=STEP_JITTER):
        """Batch at original-coordinate points ``x0`` with one stream per chain."""
        x0 = np.atleast_2d(np.asarray(x0, dtype=float))
        rngs = chain_streams(seed, MOMENTUM, x0.shape[0], *stream_ids)
        z0 = x0 if preconditioner is None else preconditioner.inverse(x0)
        b = cls(z0, step_size, leapfrog_steps, rngs, preconditioner, jitter=jitter)
        b.refresh(target)
        return b

    @property
    def n_chains(self) -> int:
        return self.positions.shape[0]

    @property
    def dimension(self) -> int:
        return self.positions.shape[1]

    @property
    def states(self) -> np.ndarray:
        """Chain positions in original coordinates."""
        if self.preconditioner is None:
            return self.positions.copy()
        return self.preconditioner.forward(self.positions)

    def sampling_target(self, target: TargetDensity) -> TargetDensity:
        if self.preconditioner is None:
            return target
        return pushforward_density(target, self.preconditioner)

    def refresh(self, target: TargetDensity):
        """Recompute cached log-density, gradient and aux at the stored positions."""
        lp, g, aux = self.sampling_target(target).evaluate(self.positions)
        self.logp, self.grad, self.aux = lp, g, aux

    def reset_statistics(self):
        for name in ("accepted", "proposed", "divergences", "leapfrog_total"):
            getattr(self, name)[:] = 0
        self.accept_prob_sum[:] = 0.0

    @property
    def acceptance_rate(self) -> float:
        tot = self.proposed.sum()
        return float(self.accepted.sum() / tot) if tot else float("nan")


def _transition_unit(target, batch: ChainBatch, rows, steps):
    x0 = batch.positions[rows]
    n = x0.shape[1]
    rngs = [batch.rngs[i] for i in rows]
    p0 = np.empty_like(x0)
    u = np.empty((len(rows), 2))
    for j, r in enumerate(rngs):
        p0[j] = r.standard_normal(n)
        u[j] = r.random(2)
    h = batch.step_size[rows] * (1.0 + batch.jitter * (2.0 * u[:, 1] - 1.0))
    u = u[:, 0]
    lp0 = batch.logp[rows]
    aux0 = {k: v[rows] for k, v in batch.aux.items()}
    x1, p1, lp1, g1, aux1, div = _integrate(target, x0, p0, batch.grad[rows], h, steps, aux0)
    h0 = -lp0 + 0.5 * np.sum(p0 * p0, axis=1)
    h1 = -lp1 + 0.5 * np.sum(p1 * p1, axis=1)
    with np.errstate(invalid="ignore", over="ignore"):
        dh = h1 - h0
    div = div | ~np.isfinite(dh) | (np.abs(dh) > DIVERGENCE_THRESHOLD)
    dh = np.where(div, np.inf, dh)
    with np.errstate(over="ignore"):
        prob = np.minimum(1.0, np.exp(-dh))
    acc = (np.log(u) < -dh) & ~div
    return rows, acc, prob, div, x1, lp1, g1, aux1


def hmc_transition(target: TargetDensity, batch: ChainBatch, pool: WorkPool | None = None,
                   steps: int | None = None) -> ChainBatch:
    """One Metropolis-adjusted HMC transition of every chain, updating ``batch`` in place."""
    pool = pool or _INLINE
    steps = batch.leapfrog_steps if steps is None else int(steps)
    tgt = batch.sampling_target(target)
    results = pool.map(lambda rows: _transition_unit(tgt.subset(rows), batch, rows, steps),
                       _units(batch.n_chains))
    for rows, acc, prob, div, x1, lp1, g1, aux1 in results:
        sel = rows[acc]
        batch.positions[sel] = x1[acc]
        batch.logp[sel] = lp1[acc]
        batch.grad[sel] = g1[acc]
        for k in batch.aux:
            batch.aux[k][sel] = aux1[k][acc]
        batch.accepted[rows] += acc
        batch.proposed[rows] += 1
        batch.accept_prob_sum[rows] += prob
        batch.divergences[rows] += div
        batch.leapfrog_total[rows] += steps
    batch.last_accept_prob = np.concatenate([r[2] for r in results])
    return batch


def run_hmc(target, batch: ChainBatch, n_draws: int, pool=None) -> np.ndarray:
    """Collect ``n_draws`` transitions; returns draws ``(K, S, N)`` in original coordinates."""
    out = np.empty((batch.n_chains, n_draws, batch.dimension))
    for s in range(n_draws):
        hmc_transition(target, batch, pool)
        out[:, s] = batch.states
    return out


def integration_steps(scale: float, h, multiplier: float = 1.0) -> int:
    """Leapfrog count for an integration time of a quarter period, ``scale * pi / 2``.

    Uses the largest per-chain step size and rounds up, clamped to ``[1, 10^4]``.
    """
    h = float(np.max(h))
    steps = int(np.ceil(multiplier * scale * (np.pi / 2) / h - 1e-9))
    return int(min(max(steps, 1), MAX_LEAPFROG))


@dataclass
class AdaptationResult:
    step_size: np.ndarray
    converged: bool
    final_accept: np.ndarray
    trace: list


def _group_means(values, groups, n_groups):
    s = np.bincount(groups, weights=values, minlength=n_groups)
    c = np.bincount(groups, minlength=n_groups)
    return s / np.maximum(c, 1)


def adapt_step_size(
    target: TargetDensity,
    batch: ChainBatch,
    target_accept: float = 0.9,
    iterations: int = 500,
    groups=None,
    ceiling: float = 1e3,
    tolerance: float = 0.05,
    pool=None,
    warn: bool = True,
) -> AdaptationResult:
    """Tune step sizes so the mean Metropolis acceptance probability hits ``target_accept``.

    First the step size is doubled while acceptance is saturated (and halved
    while it is nil). One rescale from the Gaussian acceptance law then lands
    near the target, and a Robbins-Monro recursion on ``log h`` with gain
    ``t^-0.6`` finishes the job. The rescale and the gain clock are repeated at
    a quarter and at half of the budget, using the mean acceptance of the last
    ten iterations, which recovers from a bad early jump. ``groups`` (one integer per chain) adapts a
    separate step size per group, such as one per temperature rung. The band check
    uses the mean acceptance over the final quarter of the iterations.
    """
    if not 0 < target_accept < 1:
        raise InvalidInputError("target_accept must lie in (0, 1)")
    k = batch.n_chains
    groups = np.zeros(k, dtype=int) if groups is None else np.asarray(groups, dtype=int)
    ng = int(groups.max()) + 1
    log_h = np.log(_group_means(batch.step_size, groups, ng))
    log_ceiling = np.log(ceiling)
    trace = []

    def step(lh):
        batch.step_size[:] = np.exp(lh)[groups]
        hmc_transition(target, batch, pool)
        a = _group_means(batch.last_accept_prob, groups, ng)
        trace.append((np.exp(lh).copy(), a.copy()))
        return a

    # coarse search
    active = np.ones(ng, dtype=bool)
    for _ in range(60):
        a = step(log_h)
        up = active & (a > 0.99) & (log_h < log_ceiling)
        down = active & (a < 0.01)
        if not (up.any() or down.any()):
            break
        active = up | down
        log_h = np.where(up, np.minimum(log_h + np.log(2.0), log_ceiling), log_h)
        log_h = np.where(down, log_h - np.log(2.0), log_h)
    z_target = norm.ppf(1 - target_accept / 2)

    def rescale(lh, a):
        # one jump using the Gaussian acceptance law, doubling/halving at the extremes
        ac = np.clip(a, 0.01, 0.99)
        jump = 0.5 * np.log(z_target / norm.ppf(1 - ac / 2))
        jump = np.where(a > 0.99, np.log(2.0), np.where(a < 0.01, -np.log(2.0), jump))
        return np.minimum(lh + jump, log_ceiling)

    # the Robbins-Monro clock restarts at 0, 1/4 and 1/2 of the budget so that
    # the transient while chains find the typical set does not freeze a bad h
    restarts = {0, iterations // 4, iterations // 2}
    window = max(1, iterations // 4)
    tail_accept = np.zeros(ng)
    tail_logh = np.zeros(ng)
    recent = [a]
    t = 0
    for it in range(iterations):
        if it in restarts:
            log_h = rescale(log_h, np.mean(recent[-10:], axis=0))
            t = 0
        t += 1
        a = step(log_h)
        recent.append(a)
        if it >= iterations - window:
            tail_accept += a
            tail_logh += log_h
        log_h = np.minimum(log_h + t**-0.6 * (a - target_accept), log_ceiling)
    tail_accept /= window
    final = np.minimum(tail_logh / window, log_ceiling)
    batch.step_size[:] = np.exp(final)[groups]
    at_ceiling = np.isclose(final, log_ceiling)
    converged = bool(np.all((np.abs(tail_accept - target_accept) <= tolerance) | at_ceiling))
    if warn and not converged:
        warnings.warn(
            AdaptationWarning(
                f"acceptance {np.round(tail_accept, 3)} outside {target_accept} +- {tolerance}",
                trace,
            ),
            stacklevel=2,
        )
    return AdaptationResult(np.exp(final), converged, tail_accept, trace)
