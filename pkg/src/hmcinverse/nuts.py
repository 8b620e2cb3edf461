"""Batched no-U-turn sampler with multinomial state selection.

Every chain builds its own trajectory but all chains double in lockstep; rows
that have stopped are simply masked. Each draw consumes a fixed block of random
numbers per chain, so the stream position never depends on trajectory length.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import StepSizeTooLargeWarning
from .hmc import DIVERGENCE_THRESHOLD, ChainBatch, WorkPool, _INLINE, _units

__all__ = ["NutsStats", "nuts_transition", "self_terminating_sample"]


@dataclass
class NutsStats:
    depth: np.ndarray
    leapfrog: np.ndarray
    divergent: np.ndarray


def _uturn(rho, p_left, p_right):
    return (np.sum(rho * p_left, axis=1) <= 0) | (np.sum(rho * p_right, axis=1) <= 0)


def _nuts_unit(target, batch: ChainBatch, rows, max_doublings):
    b = len(rows)
    n = batch.dimension
    n_unif = 2 * max_doublings + 2**max_doublings
    p0 = np.empty((b, n))
    unif = np.empty((b, n_unif))
    for j, i in enumerate(rows):
        r = batch.rngs[i]
        p0[j] = r.standard_normal(n)
        unif[j] = r.random(n_unif)
    dirs = np.where(unif[:, :max_doublings] < 0.5, -1.0, 1.0)
    merge_u = unif[:, max_doublings:2 * max_doublings]
    step_u = unif[:, 2 * max_doublings:]
    h = batch.step_size[rows][:, None]

    x0 = batch.positions[rows]
    g0 = batch.grad[rows]
    lp0 = batch.logp[rows]
    h0 = -lp0 + 0.5 * np.sum(p0 * p0, axis=1)

    # trajectory ends
    xl, pl, gl = x0.copy(), p0.copy(), g0.copy()
    xr, pr, gr = x0.copy(), p0.copy(), g0.copy()
    rho = p0.copy()
    log_w = -h0 + 0.0  # log of total weight, relative to exp(-H)
    sample_x, sample_lp, sample_g = x0.copy(), lp0.copy(), g0.copy()
    running = np.ones(b, dtype=bool)
    depth = np.zeros(b, dtype=int)
    n_steps = np.zeros(b, dtype=int)
    divergent = np.zeros(b, dtype=bool)

    for j in range(max_doublings):
        if not running.any():
            break
        size = 2**j
        d = dirs[:, j][:, None]
        fwd = d[:, 0] > 0
        x = np.where(fwd[:, None], xr, xl)
        p = np.where(fwd[:, None], pr, pl)
        g = np.where(fwd[:, None], gr, gl)
        sub_ok = running.copy()
        sub_log_w = np.full(b, -np.inf)
        sub_x, sub_lp, sub_g = x.copy(), np.zeros(b), g.copy()
        moms = np.empty((size, b, n))
        prefix = np.empty((size, b, n))
        for i in range(size):
            hh = d * h
            p_half = p + 0.5 * hh * g
            x_new = x + hh * p_half
            lp_new, g_new, _ = target.evaluate(x_new)
            with np.errstate(invalid="ignore", over="ignore"):
                p_new = p_half + 0.5 * hh * g_new
                ham = -lp_new + 0.5 * np.sum(p_new * p_new, axis=1)
            bad = ~np.isfinite(ham) | (ham - h0 > DIVERGENCE_THRESHOLD)
            live = sub_ok & ~bad
            divergent |= sub_ok & bad
            n_steps += sub_ok
            sub_ok = live
            x = np.where(live[:, None], x_new, x)
            p = np.where(live[:, None], p_new, p)
            g = np.where(live[:, None], g_new, g)
            moms[i] = p
            prefix[i] = p if i == 0 else prefix[i - 1] + p
            # progressive multinomial choice inside the subtree
            lw = np.where(live, -ham, -np.inf)
            new_total = np.logaddexp(sub_log_w, lw)
            with np.errstate(invalid="ignore"):
                take = live & (np.log(step_u[:, i]) < lw - new_total)
            sub_log_w = np.where(live, new_total, sub_log_w)
            sub_x = np.where(take[:, None], x, sub_x)
            sub_lp = np.where(take, lp_new, sub_lp)
            sub_g = np.where(take[:, None], g, sub_g)
            # U-turns of every balanced sub-subtree ending at this step
            k = 1
            while (i + 1) % (2**k) == 0 and 2**k <= size:
                a = i + 1 - 2**k
                rho_sub = prefix[i] - (prefix[a - 1] if a > 0 else 0.0)
                sub_ok &= ~_uturn(rho_sub, moms[a], moms[i])
                k += 1
        # rows whose subtree finished cleanly get merged
        merge = running & sub_ok
        with np.errstate(invalid="ignore"):
            accept_sub = merge & (np.log(merge_u[:, j]) < sub_log_w - log_w)
        sample_x = np.where(accept_sub[:, None], sub_x, sample_x)
        sample_lp = np.where(accept_sub, sub_lp, sample_lp)
        sample_g = np.where(accept_sub[:, None], sub_g, sample_g)
        log_w = np.where(merge, np.logaddexp(log_w, sub_log_w), log_w)
        mf = (merge & fwd)[:, None]
        mb = (merge & ~fwd)[:, None]
        xr, pr, gr = np.where(mf, x, xr), np.where(mf, p, pr), np.where(mf, g, gr)
        xl, pl, gl = np.where(mb, x, xl), np.where(mb, p, pl), np.where(mb, g, gl)
        rho = np.where(merge[:, None], rho + prefix[size - 1], rho)
        depth = np.where(running, j + 1, depth)
        running = merge & ~_uturn(rho, pl, pr)
    return rows, sample_x, sample_lp, sample_g, depth, n_steps, divergent


def nuts_transition(target, batch: ChainBatch, max_doublings: int = 8,
                    pool: WorkPool | None = None) -> NutsStats:
    """One no-U-turn draw for every chain, updating ``batch`` in place."""
    pool = pool or _INLINE
    tgt = batch.sampling_target(target)
    res = pool.map(lambda rows: _nuts_unit(tgt.subset(rows), batch, rows, max_doublings),
                   _units(batch.n_chains))
    depth = np.empty(batch.n_chains, dtype=int)
    steps = np.empty(batch.n_chains, dtype=int)
    div = np.empty(batch.n_chains, dtype=bool)
    for rows, sx, slp, sg, dp, ns, dv in res:
        moved = np.any(sx != batch.positions[rows], axis=1)
        batch.positions[rows] = sx
        batch.logp[rows] = slp
        batch.grad[rows] = sg
        batch.accepted[rows] += moved
        batch.proposed[rows] += 1
        batch.divergences[rows] += dv
        batch.leapfrog_total[rows] += ns
        depth[rows], steps[rows], div[rows] = dp, ns, dv
    if batch.aux:
        batch.refresh(target)
    return NutsStats(depth, steps, div)


def self_terminating_sample(target, batch: ChainBatch, n_draws: int, max_doublings: int = 8,
                            pool=None, warn: bool = True):
    """Draw ``n_draws`` no-U-turn transitions; returns ``(draws (K, S, N), stats list)``.

    Warns when more than half of all draws stopped after the first doubling.
    """
    out = np.empty((batch.n_chains, n_draws, batch.dimension))
    stats = []
    for s in range(n_draws):
        stats.append(nuts_transition(target, batch, max_doublings, pool))
        out[:, s] = batch.states
    if warn and n_draws:
        shallow = np.mean([np.mean(st.depth <= 1) for st in stats])
        if shallow > 0.5:
            warnings.warn(
                StepSizeTooLargeWarning(
                    f"{shallow:.0%} of trajectories stopped at the first doubling; reduce the step size"
                ),
                stacklevel=2,
            )
    return out, stats
