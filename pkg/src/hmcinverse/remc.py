"""Replica exchange over a ladder of tempered posteriors.

All replicas of all chains live in one fused batch, rung-major: row ``r K + k`` is
rung ``r`` of chain ``k``. Swaps exchange positions and cached split terms between
rows, so a swap never costs a model evaluation. Rung 0 reuses the plain HMC
momentum streams, which makes a single-rung ladder reproduce plain HMC exactly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import StageRecord, compile_report, split_rhat
from .errors import InvalidInputError, NoMixingRungError, ScheduleTooSparseError
from .hmc import ChainBatch, adapt_step_size, hmc_transition
from .rng import AUX, INIT, MOMENTUM, SWAP, stream
from .spectral import largest_scale
from .targets import SplitTarget, TemperedTarget, tempering_exponents

__all__ = [
    "TemperatureLadder",
    "geometric_temperatures",
    "SwapStatistics",
    "IndexProcess",
    "swap_log_ratio",
    "ReplicaState",
    "propose_swaps",
    "round_trip_rate",
    "adapt_schedule",
    "replica_step_sizes",
    "leapfrog_heuristic",
    "select_tmax",
    "RemcConfig",
    "RemcResult",
    "run_remc",
]

MIN_SWAP_PROB = 0.02


def geometric_temperatures(n_rungs: int, t_max: float = None, ratio: float = None) -> np.ndarray:
    """``T_r = rho^(r-1)``, with ``rho`` given or chosen so that ``T_R = t_max``.

    ``t_max = inf`` makes the last rung infinite and spaces the rest geometrically
    with ``ratio`` (default 2).
    """
    if n_rungs < 1:
        raise InvalidInputError("need at least one rung")
    if n_rungs == 1:
        return np.ones(1)
    if t_max is not None and np.isinf(t_max):
        finite = geometric_temperatures(n_rungs - 1, ratio=ratio or 2.0)
        return np.append(finite, np.inf)
    if ratio is None:
        if t_max is None or not t_max > 1:
            raise InvalidInputError("need t_max > 1 or a ratio")
        ratio = t_max ** (1.0 / (n_rungs - 1))
    return ratio ** np.arange(n_rungs, dtype=float)


@dataclass
class TemperatureLadder:
    """Temperatures ``1 = T_1 < ... < T_R`` with per-rung step sizes and swap counters."""

    temperatures: np.ndarray
    mode: str = "likelihood"
    step_sizes: np.ndarray | None = None
    attempts: np.ndarray | None = None
    accepts: np.ndarray | None = None
    accept_prob_sum: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.temperatures, dtype=float).ravel()
        if t.size < 1 or t[0] != 1.0:
            raise InvalidInputError("the coldest temperature must be exactly 1")
        if np.any(np.diff(t) <= 0):
            raise InvalidInputError("temperatures must be strictly increasing")
        if self.mode not in ("likelihood", "posterior"):
            raise InvalidInputError(f"unknown tempering mode {self.mode!r}")
        if self.mode == "posterior" and np.isinf(t[-1]):
            raise InvalidInputError("posterior tempering requires a finite hottest temperature")
        self.temperatures = t
        r = t.size
        if self.step_sizes is None:
            self.step_sizes = np.full(r, 0.1)
        self.step_sizes = np.broadcast_to(np.asarray(self.step_sizes, float), (r,)).copy()
        for name, dtype in (("attempts", np.int64), ("accepts", np.int64), ("accept_prob_sum", float)):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(max(r - 1, 0), dtype=dtype))

    @property
    def n_rungs(self) -> int:
        return self.temperatures.size

    @property
    def exponents(self):
        """Arrays ``(alpha, beta)`` of tempering exponents per rung."""
        ab = np.array([tempering_exponents(t, self.mode) for t in self.temperatures])
        return ab[:, 0], ab[:, 1]

    @property
    def has_infinite_rung(self) -> bool:
        return bool(np.isinf(self.temperatures[-1]))

    def reset_counters(self):
        self.attempts[:] = 0
        self.accepts[:] = 0
        self.accept_prob_sum[:] = 0.0

    def statistics(self) -> "SwapStatistics":
        return SwapStatistics.from_counts(self.attempts, self.accepts, self.accept_prob_sum)


@dataclass
class SwapStatistics:
    """Per-edge swap probabilities and the summaries derived from them.

    ``p_hat`` is the mean Metropolis swap probability per edge, which has lower
    variance than the raw accept frequency and the same expectation.
    """

    attempts: np.ndarray
    accepts: np.ndarray
    p_hat: np.ndarray
    gamma: float
    barrier: float

    @classmethod
    def from_counts(cls, attempts, accepts, prob_sum):
        attempts = np.asarray(attempts)
        with np.errstate(invalid="ignore", divide="ignore"):
            p = np.where(attempts > 0, np.asarray(prob_sum) / np.maximum(attempts, 1), np.nan)
        return cls(attempts.copy(), np.asarray(accepts).copy(), p, schedule_inefficiency(p),
                   communication_barrier(p))

    def predicted_rate(self, scheme: str = "DEO", n_rungs: int | None = None) -> float:
        """Round trips per swap round: ``1/(2+2 gamma)`` for DEO, ``1/(2R+2 gamma)`` for SEO."""
        r = self.p_hat.size + 1 if n_rungs is None else n_rungs
        if scheme == "DEO":
            return 1.0 / (2.0 + 2.0 * self.gamma)
        if scheme == "SEO":
            return 1.0 / (2.0 * r + 2.0 * self.gamma)
        raise InvalidInputError(f"unknown swap scheme {scheme!r}")


def schedule_inefficiency(p_hat) -> float:
    p = np.asarray(p_hat, dtype=float)
    with np.errstate(divide="ignore"):
        return float(np.sum((1.0 - p) / p))


def communication_barrier(p_hat) -> float:
    return float(np.sum(1.0 - np.asarray(p_hat, dtype=float)))


class IndexProcess:
    """Which walker sits on which rung, with up/down tags for round-trip counting.

    A walker is tagged ``up`` after visiting rung 0 and ``down`` after visiting the
    hottest rung. Arriving at rung 0 while tagged ``down`` completes a round trip.
    """

    NONE, UP, DOWN = 0, 1, 2

    def __init__(self, n_chains: int, n_rungs: int):
        self.walker_at = np.tile(np.arange(n_rungs), (n_chains, 1))
        self.tags = np.zeros((n_chains, n_rungs), dtype=np.int8)
        self.round_trips = np.zeros(n_chains, dtype=np.int64)
        self.rounds = 0
        self._update_tags()

    @property
    def n_rungs(self) -> int:
        return self.walker_at.shape[1]

    def swap(self, chains, edge):
        w = self.walker_at
        w[chains, edge], w[chains, edge + 1] = w[chains, edge + 1].copy(), w[chains, edge].copy()

    def _update_tags(self):
        k = np.arange(self.walker_at.shape[0])
        bottom = self.walker_at[:, 0]
        self.round_trips += (self.tags[k, bottom] == self.DOWN) & (self.n_rungs > 1)
        self.tags[k, bottom] = self.UP
        if self.n_rungs > 1:
            top = self.walker_at[:, -1]
            hit = self.tags[k, top] == self.UP
            self.tags[k[hit], top[hit]] = self.DOWN

    def end_round(self):
        self.rounds += 1
        self._update_tags()

    def rung_of_walkers(self) -> np.ndarray:
        """``(K, R)`` array: rung currently holding each walker."""
        return np.argsort(self.walker_at, axis=1)

    def reset_counts(self):
        self.round_trips[:] = 0
        self.rounds = 0


def round_trip_rate(index: IndexProcess):
    """``(count, rate)``: round trips summed over chains and per round per chain.

    Returns zero rate when no round has been recorded.
    """
    count = int(index.round_trips.sum())
    if index.rounds == 0:
        return count, 0.0
    return count, count / (index.rounds * index.walker_at.shape[0])


def swap_log_ratio(alpha, beta, log_prior, log_lik, lower: int):
    """Log Metropolis ratio for exchanging the states of rungs ``lower`` and ``lower+1``.

    ``log_prior`` and ``log_lik`` are the cached split terms of the two current
    states, each of shape ``(2, ...)``. A likelihood exponent of zero ignores a
    ``-inf`` likelihood.
    """
    da = alpha[lower] - alpha[lower + 1]
    db = beta[lower] - beta[lower + 1]
    dlp = log_prior[1] - log_prior[0]
    with np.errstate(invalid="ignore"):
        dll = log_lik[1] - log_lik[0]
        out = da * dlp + np.where(db == 0, 0.0, db * dll)
    return np.where(np.isnan(out), -np.inf, out)


@dataclass
class ReplicaState:
    """Fused batch of ``K x R`` replicas plus the bookkeeping that swaps need."""

    problem: SplitTarget
    ladder: TemperatureLadder
    batch: ChainBatch
    index: IndexProcess
    swap_rngs: list
    prior_rngs: list
    n_chains: int
    target: TemperedTarget = None
    log: list | None = None
    exploration: str = "hmc"
    _exact: list | None = None

    def __post_init__(self):
        if self.exploration not in ("hmc", "exact"):
            raise InvalidInputError(f"unknown exploration {self.exploration!r}")
        if self.exploration == "exact" and not hasattr(self.problem, "tempered_moments"):
            raise InvalidInputError("exact exploration needs a problem with tempered_moments")
        self.rebuild_target()

    def rebuild_target(self):
        a, b = self.ladder.exponents
        k = self.n_chains
        self.target = TemperedTarget(self.problem, np.repeat(a, k), np.repeat(b, k))
        self.batch.step_size[:] = np.repeat(self.ladder.step_sizes, k)
        self.recombine()
        if self.exploration == "exact":
            self._exact = []
            for t in self.ladder.temperatures:
                mean, cov = self.problem.tempered_moments(t, self.ladder.mode)
                self._exact.append((mean, np.linalg.cholesky(cov)))

    def recombine(self):
        self.batch.logp, self.batch.grad = self.target.combine(self.batch.aux)

    def rows(self, rung: int) -> np.ndarray:
        return np.arange(rung * self.n_chains, (rung + 1) * self.n_chains)

    def rung_positions(self, rung: int) -> np.ndarray:
        return self.batch.positions[self.rows(rung)].copy()

    @classmethod
    def start(cls, problem: SplitTarget, ladder: TemperatureLadder, n_chains: int, seed: int,
              leapfrog_steps: int = 1, x0=None, record=False, exploration="hmc"):
        r = ladder.n_rungs
        if x0 is None:
            x0 = np.concatenate([
                problem.initial_points(stream(seed, INIT, *([] if j == 0 else [j])), n_chains)
                for j in range(r)
            ])
        rngs = []
        for j in range(r):
            ids = () if j == 0 else (j,)
            rngs += [stream(seed, MOMENTUM, k, *ids) for k in range(n_chains)]
        a, b = ladder.exponents
        tgt = TemperedTarget(problem, np.repeat(a, n_chains), np.repeat(b, n_chains))
        batch = ChainBatch(x0, np.repeat(ladder.step_sizes, n_chains), leapfrog_steps, rngs)
        batch.refresh(tgt)
        return cls(problem, ladder, batch, IndexProcess(n_chains, r),
                   [stream(seed, SWAP, k) for k in range(n_chains)],
                   [stream(seed, AUX, k) for k in range(n_chains)], n_chains,
                   log=[] if record else None, exploration=exploration)

    def explore(self, pool=None):
        """One HMC transition for every replica; an infinite rung is redrawn from the prior.

        With ``exploration='exact'`` every replica is instead replaced by an
        independent draw from its tempered Gaussian.
        """
        if self.exploration == "exact":
            self._explore_exact()
            return
        hmc_transition(self.target, self.batch, pool)
        if self.ladder.has_infinite_rung:
            rows = self.rows(self.ladder.n_rungs - 1)
            x = np.concatenate([self.problem.sample_prior(r, 1) for r in self.prior_rngs])
            _, _, aux = self.problem.evaluate(x)
            self.batch.positions[rows] = x
            for key in self.batch.aux:
                self.batch.aux[key][rows] = aux[key]
            lp, g = self.target.subset(rows).combine(aux)
            self.batch.logp[rows], self.batch.grad[rows] = lp, g


    def _explore_exact(self):
        k, r, n = self.n_chains, self.ladder.n_rungs, self.batch.dimension
        z = np.stack([g.standard_normal((r, n)) for g in self.prior_rngs], axis=1)
        x = np.concatenate([m + z[j] @ c.T for j, (m, c) in enumerate(self._exact)])
        _, _, aux = self.problem.evaluate(x)
        self.batch.positions[:] = x
        self.batch.aux = aux
        self.recombine()


def propose_swaps(state: ReplicaState, round_index: int, scheme: str = "DEO"):
    """One communication round; returns the boolean accept array ``(K, R-1)``.

    Every chain draws ``R`` uniforms from its swap stream per round (a parity coin
    for SEO plus one per edge), whether or not they are used.
    """
    lad = state.ladder
    r, k = lad.n_rungs, state.n_chains
    accepted = np.zeros((k, max(r - 1, 0)), dtype=bool)
    if r < 2 or scheme == "none":
        state.index.end_round()
        return accepted
    u = np.stack([g.random(r) for g in state.swap_rngs])
    if scheme == "DEO":
        parity = np.full(k, round_index % 2)
    elif scheme == "SEO":
        parity = (u[:, 0] < 0.5).astype(int)
    else:
        raise InvalidInputError(f"unknown swap scheme {scheme!r}")
    alpha, beta = lad.exponents
    b = state.batch
    lp, ll = b.aux["log_prior"], b.aux["log_lik"]
    chains = np.arange(k)
    proposed_edge = np.full((k, r), -1)
    for e in range(r - 1):
        on = chains[parity == e % 2]
        if on.size == 0:
            continue
        lo, hi = e * k + on, (e + 1) * k + on
        log_a = swap_log_ratio(alpha, beta, np.stack([lp[lo], lp[hi]]), np.stack([ll[lo], ll[hi]]), e)
        prob = np.exp(np.minimum(log_a, 0.0))
        acc = np.log(u[on, e + 1]) < log_a
        lad.attempts[e] += on.size
        lad.accepts[e] += acc.sum()
        lad.accept_prob_sum[e] += prob.sum()
        accepted[on, e] = acc
        proposed_edge[on, e] = e
        proposed_edge[on, e + 1] = e
        sw = on[acc]
        if sw.size:
            lo, hi = e * k + sw, (e + 1) * k + sw
            b.positions[lo], b.positions[hi] = b.positions[hi].copy(), b.positions[lo].copy()
            for key, v in b.aux.items():
                v[lo], v[hi] = v[hi].copy(), v[lo].copy()
            state.index.swap(sw, e)
    state.recombine()
    if state.log is not None:
        _log_round(state, round_index, proposed_edge, accepted)
    state.index.end_round()
    return accepted


def _log_round(state, round_index, proposed_edge, accepted):
    k, r = state.n_chains, state.ladder.n_rungs
    b = state.batch
    walker = state.index.walker_at
    for c in range(k):
        for rung in range(r):
            e = proposed_edge[c, rung]
            row = rung * k + c
            state.log.append((round_index, c, int(walker[c, rung]), rung,
                              float(b.aux["log_prior"][row]), float(b.aux["log_lik"][row]),
                              int(e), int(bool(accepted[c, e])) if e >= 0 else 0))


def _schedule_coordinate(temperatures):
    """Interpolation variable: ``log T``, or ``1/T`` when the hottest rung is infinite."""
    t = np.asarray(temperatures, dtype=float)
    if np.isinf(t[-1]):
        return -1.0 / t, lambda s: -1.0 / s
    return np.log(t), np.exp


def adapt_schedule(temperatures, p_hat, min_prob: float = MIN_SWAP_PROB) -> np.ndarray:
    """Re-space interior temperatures at equal increments of the estimated barrier.

    The cumulative rejection ``sum (1 - p_r)`` is a piecewise-linear function of
    ``log T`` through the current rungs; inverting it at equal steps gives the new
    rungs. The end temperatures are kept.
    """
    t = np.asarray(temperatures, dtype=float)
    p = np.asarray(p_hat, dtype=float)
    if p.size != t.size - 1:
        raise InvalidInputError("need one swap probability per edge")
    if np.any(~(p >= min_prob)):
        bad = np.flatnonzero(~(p >= min_prob)).tolist()
        raise ScheduleTooSparseError(
            f"swap probability below {min_prob} on edges {bad}; add more replicas"
        )
    if t.size < 3:
        return t.copy()
    s, back = _schedule_coordinate(t)
    cum = np.concatenate([[0.0], np.cumsum(np.maximum(1.0 - p, 1e-12))])
    goal = np.linspace(0.0, cum[-1], t.size)
    new = t.copy()
    new[1:-1] = back(np.interp(goal[1:-1], cum, s))
    return new


def replica_step_sizes(temperatures, anchors) -> np.ndarray:
    """Step sizes piecewise linear in ``sqrt(T)`` through ``(T, h)`` anchors.

    Outside the anchors ``h`` scales as ``sqrt(T)`` from the nearest anchor. An
    infinite temperature gets the value at the hottest finite one.
    """
    anchors = sorted((float(a), float(h)) for a, h in anchors)
    if not anchors:
        raise InvalidInputError("need at least one (T, h) anchor")
    at = np.sqrt([a for a, _ in anchors])
    ah = np.array([h for _, h in anchors])
    t = np.asarray(temperatures, dtype=float)
    finite = np.isfinite(t)
    q = np.sqrt(t[finite])
    h = np.interp(q, at, ah)
    h = np.where(q < at[0], ah[0] * q / at[0], h)
    h = np.where(q > at[-1], ah[-1] * q / at[-1], h)
    out = np.empty_like(t)
    out[finite] = h
    out[~finite] = h[-1] if h.size else ah[-1]
    return out


def leapfrog_heuristic(lambda_r1: float, h_r: float, gamma: float) -> int:
    """Shared leapfrog count ``lambda_R1 (pi/2) / (h_R sqrt(1 + gamma))``, rounded half up, >= 1."""
    if not (lambda_r1 > 0 and h_r > 0 and gamma >= 0):
        raise InvalidInputError("need lambda_r1 > 0, h_r > 0 and gamma >= 0")
    value = lambda_r1 * (np.pi / 2) / (h_r * np.sqrt(1.0 + gamma))
    return max(1, int(np.floor(value + 0.5)))


@dataclass
class RemcConfig:
    n_chains: int = 20
    temperatures: list | None = None
    n_rungs: int = 8
    t_max: float = 100.0
    mode: str = "likelihood"
    scheme: str = "DEO"
    step_sizes: list | None = None
    initial_step_size: float = 1e-3
    adapt_step_size: bool = True
    adapt_iterations: int = 300
    adapt_leapfrog: int = 5
    target_accept: float = 0.9
    leapfrog_steps: int | None = None
    leapfrog_multiplier: float = 1.0
    lambda_r1: float | None = None
    schedule_sweeps: int = 3
    schedule_rounds: int = 200
    burn_in: int = 0
    rounds: int = 1000
    record_rounds: bool = False
    keep_hottest: bool = False
    exploration: str = "hmc"

    def ladder(self) -> TemperatureLadder:
        t = self.temperatures
        if t is None:
            t = geometric_temperatures(self.n_rungs, self.t_max)
        h = self.step_sizes
        if h is None:
            h = replica_step_sizes(t, [(1.0, self.initial_step_size)])
        return TemperatureLadder(np.asarray(t, float), self.mode, np.asarray(h, float))


@dataclass
class RemcResult:
    samples: np.ndarray
    report: object
    ladder: TemperatureLadder
    statistics: SwapStatistics
    round_trips: int
    round_trip_rate: float
    leapfrog_steps: int
    rung_rhat: np.ndarray
    hottest_samples: np.ndarray | None = None
    log: list | None = None
    schedule_history: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    rung_samples: np.ndarray | None = None


def _adapt_rungs(state: ReplicaState, cfg: RemcConfig, pool):
    b = state.batch
    b.leapfrog_steps = cfg.adapt_leapfrog
    groups = np.repeat(np.arange(state.ladder.n_rungs), state.n_chains)
    res = adapt_step_size(state.target, b, cfg.target_accept, cfg.adapt_iterations, groups=groups,
                          pool=pool, warn=True)
    state.ladder.step_sizes[:] = res.step_size
    if state.ladder.has_infinite_rung and state.ladder.n_rungs > 1:
        state.ladder.step_sizes[-1] = state.ladder.step_sizes[-2]
    b.step_size[:] = np.repeat(state.ladder.step_sizes, state.n_chains)
    return res


def _hottest_finite(ladder: TemperatureLadder) -> int:
    return ladder.n_rungs - 2 if ladder.has_infinite_rung and ladder.n_rungs > 1 else ladder.n_rungs - 1


def _run_rounds(state, n, scheme, pool, start_round=0, collect=None):
    for i in range(n):
        state.explore(pool)
        propose_swaps(state, start_round + i, scheme)
        if collect is not None:
            collect(i)


def run_remc(problem: SplitTarget, config: RemcConfig | None = None, seed: int = 0,
             pool=None) -> RemcResult:
    """Adapt step sizes and schedule, then alternate exploration and swap rounds.

    Only rung-0 draws are returned as samples. The leapfrog total in the report
    counts every replica.
    """
    cfg = config or RemcConfig()
    ladder = cfg.ladder()
    timings = {}
    history = [ladder.temperatures.copy()]
    state = ReplicaState.start(problem, ladder, cfg.n_chains, seed, cfg.adapt_leapfrog,
                               record=cfg.record_rounds, exploration=cfg.exploration)
    exact = cfg.exploration == "exact"
    t0 = time.perf_counter()
    if cfg.adapt_step_size and not exact:
        _adapt_rungs(state, cfg, pool)
    timings["adapt"] = time.perf_counter() - t0

    top = _hottest_finite(ladder)
    lam = cfg.lambda_r1

    def set_leapfrog(gamma):
        if cfg.leapfrog_steps is not None:
            state.batch.leapfrog_steps = int(cfg.leapfrog_steps)
            return
        base = leapfrog_heuristic(lam or 1.0, ladder.step_sizes[top], gamma)
        state.batch.leapfrog_steps = max(1, int(np.floor(cfg.leapfrog_multiplier * base + 0.5)))

    if lam is None and cfg.leapfrog_steps is None and not exact:
        # rough hottest-rung scale from a short run at the single-replica rule
        set_leapfrog(0.0)
        draws = []
        _run_rounds(state, max(cfg.schedule_rounds // 2, 50), "none", pool,
                    collect=lambda i: draws.append(state.rung_positions(top)))
        d = np.stack(draws, axis=1)
        d = d - d.mean(axis=1, keepdims=True)
        flat = d.reshape(-1, d.shape[2])
        lam = largest_scale(flat.T @ flat / max(flat.shape[0] - d.shape[0], 1))
    gamma = float(ladder.n_rungs - 1)
    set_leapfrog(0.0 if ladder.n_rungs == 1 else gamma)

    t0 = time.perf_counter()
    round_no = 0
    for _ in range(cfg.schedule_sweeps if ladder.n_rungs > 2 else 0):
        ladder.reset_counters()
        _run_rounds(state, cfg.schedule_rounds, cfg.scheme, pool, round_no)
        round_no += cfg.schedule_rounds
        stats = ladder.statistics()
        new_t = adapt_schedule(ladder.temperatures, stats.p_hat)
        anchors = [(t, h) for t, h in zip(ladder.temperatures, ladder.step_sizes) if np.isfinite(t)]
        ladder.step_sizes[:] = replica_step_sizes(new_t, anchors)
        ladder.temperatures = new_t
        history.append(new_t.copy())
        state.rebuild_target()
        set_leapfrog(stats.gamma)
    if cfg.schedule_sweeps and ladder.n_rungs > 2 and cfg.adapt_step_size and not exact:
        keep = state.batch.leapfrog_steps
        _adapt_rungs(state, cfg, pool)
        state.batch.leapfrog_steps = keep
    timings["schedule"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    if cfg.burn_in:
        _run_rounds(state, cfg.burn_in, cfg.scheme, pool, round_no)
        round_no += cfg.burn_in
    ladder.reset_counters()
    state.index.reset_counts()
    state.batch.reset_statistics()
    if state.log is not None:
        state.log.clear()
    k, n = cfg.n_chains, problem.dimension
    samples = np.empty((k, cfg.rounds, n))
    hottest = np.empty((k, cfg.rounds, n)) if cfg.keep_hottest else None

    def collect(i):
        samples[:, i] = state.rung_positions(0)
        if hottest is not None:
            hottest[:, i] = state.rung_positions(ladder.n_rungs - 1)

    rung_draws = np.empty((ladder.n_rungs, k, cfg.rounds, n)) if cfg.rounds >= 4 else None

    def collect_all(i):
        collect(i)
        if rung_draws is not None:
            for j in range(ladder.n_rungs):
                rung_draws[j, :, i] = state.rung_positions(j)

    _run_rounds(state, cfg.rounds, cfg.scheme, pool, round_no, collect_all)
    timings["sample"] = time.perf_counter() - t0

    stats = ladder.statistics()
    count, rate = round_trip_rate(state.index)
    rung_rhat = (np.array([split_rhat(rung_draws[j]).max for j in range(ladder.n_rungs)])
                 if rung_draws is not None else np.full(ladder.n_rungs, np.nan))
    b = state.batch
    rows0 = state.rows(0)
    acc0 = float(b.accept_prob_sum[rows0].sum() / max(b.proposed[rows0].sum(), 1))
    remc_summary = {
        "temperatures": ladder.temperatures.tolist(),
        "step_sizes": ladder.step_sizes.tolist(),
        "p_swap": stats.p_hat.tolist(),
        "gamma": stats.gamma,
        "barrier": stats.barrier,
        "round_trips": count,
        "round_trip_rate": rate,
        "predicted_rate": stats.predicted_rate(cfg.scheme, ladder.n_rungs) if ladder.n_rungs > 1 else 0.0,
        "rung_rhat": rung_rhat.tolist(),
        "leapfrog_steps": int(b.leapfrog_steps),
    }
    stage = StageRecord("remc", cfg.rounds, float(ladder.step_sizes[0]), int(b.leapfrog_steps), acc0,
                        int(b.leapfrog_total.sum()))
    report = compile_report(samples, int(b.leapfrog_total.sum()), [stage], {"remc": acc0}, {},
                            remc_summary) if cfg.rounds >= 8 else None
    return RemcResult(samples, report, ladder, stats, count, rate, int(b.leapfrog_steps), rung_rhat,
                      hottest, state.log, history, timings, rung_draws)


def select_tmax(problem: SplitTarget, n_rungs: int = 12, ratio: float = 2.0, mode: str = "likelihood",
                n_chains: int = 20, burn_in: int = 500, threshold: float = 1.1, seed: int = 0,
                step_sizes=None, leapfrog_steps: int = 10, adapt_iterations: int = 200, pool=None):
    """Coldest temperature of a swap-free geometric burn-in whose split R-hat is below ``threshold``.

    Returns ``(T_max, rhat_per_rung, temperatures)``.
    """
    temps = geometric_temperatures(n_rungs, ratio=ratio)
    ladder = TemperatureLadder(temps, mode, step_sizes if step_sizes is not None else
                               replica_step_sizes(temps, [(1.0, 1e-3)]))
    state = ReplicaState.start(problem, ladder, n_chains, seed, 5)
    if step_sizes is None:
        cfg = RemcConfig(adapt_iterations=adapt_iterations)
        _adapt_rungs(state, cfg, pool)
    state.batch.leapfrog_steps = leapfrog_steps
    draws = np.empty((n_rungs, n_chains, burn_in, problem.dimension))
    for i in range(burn_in):
        state.explore(pool)
        for j in range(n_rungs):
            draws[j, :, i] = state.rung_positions(j)
    rh = np.array([split_rhat(draws[j]).max for j in range(n_rungs)])
    ok = np.flatnonzero(rh < threshold)
    if ok.size == 0:
        raise NoMixingRungError(
            f"no rung mixed (min R-hat {rh.min():.3f}); use a larger ratio or more rungs"
        )
    return float(temps[ok[0]]), rh, temps
