"""Experiment configuration: YAML in, validated dataclasses out, and back.

Every field has a default, unknown keys are rejected by their dotted path, and
``parse(emit(cfg)) == cfg`` holds for every valid config.
"""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import ConfigError
from .planner import PlannerConfig
from .remc import RemcConfig

__all__ = [
    "SCHEMA_VERSION",
    "MODELS",
    "SAMPLERS",
    "GaussianToyConfig",
    "StandardNormalConfig",
    "BimodalConfig",
    "SpectroscopyConfig",
    "ProblemConfig",
    "PlainHmcConfig",
    "SamplerConfig",
    "ExperimentConfig",
    "parse_config",
    "load_config",
    "emit_config",
    "config_from_dict",
    "build_problem",
]

SCHEMA_VERSION = 1
MODELS = ("gaussian-toy", "standard-normal", "bimodal", "spectroscopy")
SAMPLERS = ("algorithm1", "plain-hmc", "remc")

CHOICES = {
    "problem.model": MODELS,
    "sampler.kind": SAMPLERS,
    "sampler.planner.preconditioning": ("auto", "full", "diag", "none"),
    "sampler.remc.mode": ("likelihood", "posterior"),
    "sampler.remc.scheme": ("DEO", "SEO", "none"),
    "sampler.remc.exploration": ("hmc", "exact"),
    "problem.spectroscopy.parameterization": ("shell", "slab"),
}


@dataclass
class GaussianToyConfig:
    n_state: int = 40
    n_chords: int = 20
    sigma: float = 0.01
    tau: float = 0.3
    delta: float = 1e-3
    data_seed: int = 0


@dataclass
class StandardNormalConfig:
    dimension: int = 10


@dataclass
class BimodalConfig:
    dimension: int = 10
    constrained_count: int = 5
    sigma: float = 0.025


@dataclass
class SpectroscopyConfig:
    parameterization: str = "shell"
    grid: int = 16
    n_chords: int = 10
    n_frequencies: int = 64
    n_knots: int = 8
    sigma: float = 2.5
    data_seed: int = 0


@dataclass
class ProblemConfig:
    model: str = "gaussian-toy"
    gaussian_toy: GaussianToyConfig = field(default_factory=GaussianToyConfig)
    standard_normal: StandardNormalConfig = field(default_factory=StandardNormalConfig)
    bimodal: BimodalConfig = field(default_factory=BimodalConfig)
    spectroscopy: SpectroscopyConfig = field(default_factory=SpectroscopyConfig)


@dataclass
class PlainHmcConfig:
    n_chains: int = 20
    draws: int = 1000
    target_accept: float = 0.9
    adapt_iterations: int = 500
    leapfrog_steps: int | None = None
    rhat_threshold: float = 1.05


@dataclass
class SamplerConfig:
    kind: str = "algorithm1"
    s_f: float = 1600.0
    plain: PlainHmcConfig = field(default_factory=PlainHmcConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    remc: RemcConfig = field(default_factory=RemcConfig)


@dataclass
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    output: str = "out"
    threads: int = 1
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)


def _coerce(value, tp, path):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = typing.get_args(tp)
        if value is None and type(None) in args:
            return None
        for a in args:
            if a is type(None):
                continue
            try:
                return _coerce(value, a, path)
            except ConfigError:
                continue
        raise ConfigError(f"{path}: invalid value {value!r}", path)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a mapping", path)
        return _build(tp, value, path)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}", path)
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}", path)
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}", path)
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}", path)
        return value
    if tp is list or origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list", path)
        out = []
        for i, v in enumerate(value):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"{path}[{i}]: expected a number, got {v!r}", path)
            out.append(float(v))
        return out
    raise ConfigError(f"{path}: unsupported field type {tp!r}", path)


def _build(cls, data: dict, prefix: str = ""):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            path = f"{prefix}.{key}" if prefix else str(key)
            raise ConfigError(f"unknown key {path!r}", path)
    kwargs = {}
    for name in names:
        if name in data:
            path = f"{prefix}.{name}" if prefix else name
            value = _coerce(data[name], hints[name], path)
            if path in CHOICES and value not in CHOICES[path]:
                raise ConfigError(f"{path}: {value!r} is not one of {list(CHOICES[path])}", path)
            kwargs[name] = value
    return cls(**kwargs)


def _validate(cfg: ExperimentConfig):
    if cfg.schema_version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {cfg.schema_version}", "schema_version")
    if not 0 <= cfg.seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer", "seed")
    if cfg.threads < 1:
        raise ConfigError("threads must be >= 1", "threads")
    if cfg.sampler.s_f < 1:
        raise ConfigError("s_f must be >= 1", "sampler.s_f")
    if cfg.sampler.remc.n_rungs < 1:
        raise ConfigError("n_rungs must be >= 1", "sampler.remc.n_rungs")


def config_from_dict(data) -> ExperimentConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping", "")
    cfg = _build(ExperimentConfig, data)
    _validate(cfg)
    return cfg


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML: {exc}", "") from exc
    return config_from_dict(data)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def emit_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(dataclasses.asdict(cfg), sort_keys=False)


def build_problem(cfg: ProblemConfig):
    """Model instance for a problem config; synthetic data use ``data_seed``."""
    from .models.bimodal import BimodalMixtureProblem
    from .models.gaussian import toy_problem
    from .models.spectroscopy import SpectroscopyProblem, two_peak_observation
    from .targets import GaussianTarget

    if cfg.model == "gaussian-toy":
        g = cfg.gaussian_toy
        return toy_problem(g.n_state, g.n_chords, g.sigma, g.tau, g.delta, g.data_seed)
    if cfg.model == "standard-normal":
        n = cfg.standard_normal.dimension
        return GaussianTarget(np.zeros(n), np.eye(n))
    if cfg.model == "bimodal":
        b = cfg.bimodal
        return BimodalMixtureProblem(b.dimension, b.constrained_count, b.sigma)
    s = cfg.spectroscopy
    p = SpectroscopyProblem(parameterization=s.parameterization, grid=s.grid, n_chords=s.n_chords,
                            n_frequencies=s.n_frequencies, n_knots=s.n_knots, sigma=s.sigma)
    return p.with_observation(two_peak_observation(p, np.random.default_rng(s.data_seed)))
