"""Effective sample size, split R-hat and run reports.

Both estimators follow the multi-chain variance decomposition of Vehtari et al.
(2021) on raw draws; rank normalization is available behind a flag but is off
by default.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import norm, rankdata

from .errors import DegenerateChainsWarning, InvalidInputError

__all__ = [
    "ESS_CAP",
    "ESSResult",
    "RhatResult",
    "effective_sample_size",
    "split_rhat",
    "StageRecord",
    "RunReport",
    "compile_report",
]

ESS_CAP = 1.5


def _as_chains(chains) -> np.ndarray:
    c = np.asarray(chains, dtype=float)
    if c.ndim == 2:
        c = c[:, :, None]
    if c.ndim != 3:
        raise InvalidInputError(f"expected (chains, draws[, dims]), got shape {c.shape}")
    return c


def _split(c: np.ndarray) -> np.ndarray:
    half = c.shape[1] // 2
    return np.concatenate([c[:, :half], c[:, c.shape[1] - half:]], axis=0)


def _rank_normalize(c: np.ndarray) -> np.ndarray:
    k, s, n = c.shape
    flat = c.reshape(k * s, n)
    r = np.apply_along_axis(rankdata, 0, flat)
    return norm.ppf((r - 0.375) / (k * s + 0.25)).reshape(c.shape)


def _autocov(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance along axis 1 of ``(chains, draws, dims)`` via FFT."""
    s = x.shape[1]
    d = x - x.mean(axis=1, keepdims=True)
    nfft = 1 << int(np.ceil(np.log2(2 * s)))
    f = np.fft.rfft(d, n=nfft, axis=1)
    ac = np.fft.irfft(f * np.conj(f), n=nfft, axis=1)[:, :s]
    return ac / s


@dataclass
class ESSResult:
    values: np.ndarray
    degenerate: np.ndarray
    total: int

    @property
    def min(self) -> float:
        return float(np.min(self.values))

    @property
    def argmin(self) -> int:
        return int(np.argmin(self.values))


@dataclass
class RhatResult:
    values: np.ndarray
    degenerate: np.ndarray

    @property
    def max(self) -> float:
        v = self.values[np.isfinite(self.values)]
        return float(v.max()) if v.size else float("inf")


def effective_sample_size(chains, rank_normalize: bool = False, warn: bool = True) -> ESSResult:
    """Multi-chain ESS per dimension from draws of shape ``(K, S[, N])``.

    Chains are split in half. Between-chain disagreement lowers the estimate, and
    the autocorrelation sum is truncated by Geyer's initial monotone positive-pair
    rule. Results are capped at ``1.5 x`` the total number of draws. Dimensions
    whose draws are all constant get ESS 0 and a degenerate flag.
    """
    c = _as_chains(chains)
    k, s, n = c.shape
    if k < 2 or s < 8:
        raise InvalidInputError("need at least 2 chains and 8 draws")
    if rank_normalize:
        c = _rank_normalize(c)
    x = _split(c)
    m, sh, _ = x.shape
    total = k * s
    acov = _autocov(x)
    chain_var = acov[:, 0] * sh / (sh - 1)
    mean_var = chain_var.mean(axis=0)
    var_plus = mean_var * (sh - 1) / sh + x.mean(axis=1).var(axis=0, ddof=1)
    degenerate = ~(var_plus > 0)
    ess = np.zeros(n)
    mean_acov = acov.mean(axis=0)
    for d in np.flatnonzero(~degenerate):
        rho = 1.0 - (mean_var[d] - mean_acov[:, d]) / var_plus[d]
        rho[0] = 1.0
        # Geyer: sum positive pairs, then enforce monotonicity
        pairs = rho[: sh - sh % 2].reshape(-1, 2).sum(axis=1)
        stop = np.flatnonzero(pairs <= 0)
        pairs = pairs[: stop[0]] if stop.size else pairs
        pairs = np.minimum.accumulate(pairs)
        tau = -1.0 + 2.0 * pairs.sum()
        ess[d] = min(total / tau if tau > 0 else np.inf, ESS_CAP * total)
    if warn and degenerate.any():
        warnings.warn(
            DegenerateChainsWarning(f"constant draws in dimensions {np.flatnonzero(degenerate).tolist()}"),
            stacklevel=2,
        )
    return ESSResult(ess, degenerate, total)


def split_rhat(chains, rank_normalize: bool = False) -> RhatResult:
    """Split R-hat per dimension from draws of shape ``(K, S[, N])``.

    ``degenerate`` marks dimensions where any split half has zero variance.
    """
    c = _as_chains(chains)
    k, s, n = c.shape
    if k < 2 or s < 4:
        raise InvalidInputError("need at least 2 chains and 4 draws")
    if rank_normalize:
        c = _rank_normalize(c)
    x = _split(c)
    sh = x.shape[1]
    half_var = x.var(axis=1, ddof=1)
    w = half_var.mean(axis=0)
    b = sh * x.mean(axis=1).var(axis=0, ddof=1)
    var_plus = (sh - 1) / sh * w + b / sh
    degenerate = np.any(half_var == 0, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(var_plus / w)
    r = np.where(w > 0, r, np.where(var_plus > 0, np.inf, 1.0))
    return RhatResult(r, degenerate)


@dataclass
class StageRecord:
    label: str
    draws: int
    step_size: float
    leapfrog_steps: int
    acceptance: float
    leapfrog_total: int = 0
    kappa: float | None = None
    max_rhat: float | None = None
    mean_ess: float | None = None


@dataclass
class RunReport:
    """Aggregated metrics of one sampling run; serializes deterministically."""

    ess: list
    min_ess: float
    min_ess_dimension: int
    rhat: list
    max_rhat: float
    leapfrog_total: int
    leapfrog_per_min_ess: float
    acceptance: dict = field(default_factory=dict)
    kappa: dict = field(default_factory=dict)
    stages: list = field(default_factory=list)
    remc: dict | None = None
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["remc"] is None:
            del d["remc"]
        return d

    def to_json(self) -> str:
        return json.dumps(_plain(self.to_dict()), sort_keys=True, indent=2)

    def rows(self):
        """Flat ``(metric, stage, dimension, value)`` records."""
        out = []
        for i, v in enumerate(self.ess):
            out.append(("ess", "final", i, v))
        for i, v in enumerate(self.rhat):
            out.append(("rhat", "final", i, v))
        out.append(("min_ess", "final", self.min_ess_dimension, self.min_ess))
        out.append(("leapfrog_per_min_ess", "final", -1, self.leapfrog_per_min_ess))
        for k, v in sorted(self.acceptance.items()):
            out.append(("acceptance", k, -1, v))
        for k, v in sorted(self.kappa.items()):
            out.append(("kappa", k, -1, v))
        if self.remc:
            for k, v in sorted(self.remc.items()):
                if np.ndim(v) == 0 and isinstance(v, (int, float)):
                    out.append((k, "remc", -1, v))
        return out


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if np.isfinite(f) else str(f)
    return obj


def compile_report(draws, leapfrog_total: int, stages=(), acceptance=None, kappa=None,
                   remc=None, flags=()) -> RunReport:
    """Build a report from final draws ``(K, S, N)`` and run bookkeeping.

    ``leapfrog_total`` counts every leapfrog step per chain, summed over chains.
    """
    ess = effective_sample_size(draws, warn=False)
    rh = split_rhat(draws)
    flags = list(flags)
    if ess.degenerate.any():
        flags.append("degenerate_dimensions")
    m = ess.min
    return RunReport(
        ess=ess.values.tolist(),
        min_ess=m,
        min_ess_dimension=ess.argmin,
        rhat=rh.values.tolist(),
        max_rhat=rh.max,
        leapfrog_total=int(leapfrog_total),
        leapfrog_per_min_ess=float(leapfrog_total / m) if m > 0 else float("inf"),
        acceptance=dict(acceptance or {}),
        kappa=dict(kappa or {}),
        stages=[asdict(s) if isinstance(s, StageRecord) else dict(s) for s in stages],
        remc=remc,
        flags=flags,
    )
