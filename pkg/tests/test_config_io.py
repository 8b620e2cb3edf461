import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmcinverse.config import (
    ExperimentConfig,
    build_problem,
    config_from_dict,
    emit_config,
    parse_config,
)
from hmcinverse.errors import ConfigError
from hmcinverse.io import SCHEMAS, read_csv, read_samples, write_csv, write_samples


def test_defaults_roundtrip():
    cfg = ExperimentConfig()
    assert parse_config(emit_config(cfg)) == cfg


@settings(max_examples=30, deadline=None)
@given(
    seed=st.integers(0, 2**64 - 1),
    kind=st.sampled_from(["algorithm1", "plain-hmc", "remc"]),
    model=st.sampled_from(["gaussian-toy", "standard-normal", "bimodal", "spectroscopy"]),
    s_f=st.floats(1, 1e6, allow_nan=False),
    temps=st.none() | st.lists(st.floats(1, 1e4), min_size=1, max_size=5),
    lf=st.none() | st.integers(1, 100),
)
def test_roundtrip_is_identity(seed, kind, model, s_f, temps, lf):
    cfg = ExperimentConfig(seed=seed)
    cfg.sampler.kind = kind
    cfg.sampler.s_f = s_f
    cfg.problem.model = model
    cfg.sampler.remc.temperatures = temps
    cfg.sampler.remc.leapfrog_steps = lf
    text = emit_config(cfg)
    again = parse_config(text)
    assert again == cfg
    assert emit_config(again) == text


@pytest.mark.parametrize(
    "text,key",
    [
        ("foo: 1", "foo"),
        ("sampler: {planner: {bogus: 2}}", "sampler.planner.bogus"),
        ("problem: {bimodal: {dimension: 2.5}}", "problem.bimodal.dimension"),
        ("sampler: {kind: nuts}", "sampler.kind"),
        ("schema_version: 7", "schema_version"),
        ("threads: 0", "threads"),
        ("sampler: {remc: {adapt_step_size: 1}}", "sampler.remc.adapt_step_size"),
    ],
)
def test_invalid_configs_name_the_key(text, key):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.key == key
    assert key in str(info.value)


def test_malformed_yaml():
    with pytest.raises(ConfigError):
        parse_config("a: [1, 2")
    with pytest.raises(ConfigError):
        parse_config("- 1\n- 2")


def test_partial_config_fills_defaults():
    cfg = parse_config("seed: 5\nproblem: {model: bimodal}")
    assert cfg.seed == 5
    assert cfg.sampler == ExperimentConfig().sampler
    assert cfg.problem.bimodal.constrained_count == 5


@pytest.mark.parametrize("model,dim", [("gaussian-toy", 40), ("standard-normal", 10), ("bimodal", 10),
                                       ("spectroscopy", 26)])
def test_build_problem(model, dim):
    cfg = config_from_dict({"problem": {"model": model}})
    p = build_problem(cfg.problem)
    assert p.dimension == dim
    lp, g, _ = p.evaluate(np.zeros((1, dim)))
    assert np.isfinite(lp).all() and g.shape == (1, dim)


def test_csv_schema_header_roundtrip(tmp_path):
    path = write_csv(tmp_path / "x.csv", ("a", "b"), [(1, 0.1), (2, 1 / 3)])
    lines = path.read_text().splitlines()
    assert lines[0] == "# schema: a,b"
    cols, rows = read_csv(path)
    assert cols == ["a", "b"]
    assert float(rows[1][1]) == 1 / 3


def test_csv_rejects_missing_schema(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_csv(p)


def test_samples_roundtrip_exact(tmp_path):
    d = np.random.default_rng(0).standard_normal((3, 4, 2))
    write_samples(tmp_path / "s.csv", d)
    np.testing.assert_array_equal(read_samples(tmp_path / "s.csv"), d)
    assert read_csv(tmp_path / "s.csv")[0] == list(SCHEMAS["samples"])


def test_config_dataclasses_all_have_defaults():
    def walk(cls):
        for f in dataclasses.fields(cls):
            assert f.default is not dataclasses.MISSING or f.default_factory is not dataclasses.MISSING
            if dataclasses.is_dataclass(f.type) if not isinstance(f.type, str) else False:
                walk(f.type)

    walk(ExperimentConfig)
