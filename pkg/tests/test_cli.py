import io
import json

import pytest
import yaml

from hmcinverse.cli import (
    EXIT_CHECK_FAILED,
    EXIT_INVALID_CONFIG,
    EXIT_OK,
    cmd_check,
    main,
)
from hmcinverse.config import parse_config
from hmcinverse.io import read_csv, read_samples

SMALL_REMC = {
    "problem": {"model": "bimodal", "bimodal": {"dimension": 4, "constrained_count": 2, "sigma": 0.1}},
    "sampler": {"kind": "remc", "remc": {"n_chains": 4, "n_rungs": 5, "t_max": 100.0, "rounds": 40,
                                         "schedule_rounds": 30, "schedule_sweeps": 1,
                                         "adapt_iterations": 60}},
}
SMALL_A1 = {
    "problem": {"model": "standard-normal", "standard_normal": {"dimension": 3}},
    "sampler": {"kind": "algorithm1", "s_f": 100.0,
                "planner": {"n_chains": 8, "adapt_iterations": 120, "stage1_draws": 60,
                            "stage2_draws": 60, "final_recheck": 50}},
}
SMALL_PLAIN = {
    "problem": {"model": "bimodal", "bimodal": {"dimension": 4, "constrained_count": 2, "sigma": 0.05}},
    "sampler": {"kind": "plain-hmc", "plain": {"n_chains": 8, "draws": 120, "adapt_iterations": 150}},
}


def _cfg(tmp_path, doc, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(doc))
    return str(p)


def test_unknown_key_exits_2(tmp_path, capsys):
    path = _cfg(tmp_path, {"sampler": {"bogus": 1}})
    assert main(["sample", "--config", path]) == EXIT_INVALID_CONFIG
    assert "sampler.bogus" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["sample", "--config", str(tmp_path / "none.yaml")]) == EXIT_INVALID_CONFIG


def test_bad_threads_override():
    assert main(["sample", "--threads", "0", "--scale", "0"]) == EXIT_INVALID_CONFIG


def test_bad_subcommand():
    assert main(["frobnicate"]) == EXIT_INVALID_CONFIG


def test_dry_run_echoes_resolved_config(tmp_path, capsys):
    path = _cfg(tmp_path, SMALL_REMC)
    assert main(["sample", "--config", path, "--seed", "17", "--scale", "0"]) == EXIT_OK
    cfg = parse_config(capsys.readouterr().out)
    assert cfg.seed == 17
    assert cfg.sampler.kind == "remc"
    assert not (tmp_path / "out").exists()


def test_unknown_recipe_lists_valid(tmp_path, capsys):
    assert main(["figure", "nope", "--out", str(tmp_path)]) == EXIT_INVALID_CONFIG
    assert "wishart-kappa" in capsys.readouterr().err


def test_unknown_suite(capsys):
    assert main(["check", "nope"]) == EXIT_INVALID_CONFIG
    assert "lemmas" in capsys.readouterr().err


def test_figure_writes_manifest(tmp_path):
    assert main(["figure", "wishart-kappa", "--out", str(tmp_path), "--scale", "50"]) == EXIT_OK
    manifest = json.loads((tmp_path / "wishart-kappa_manifest.json").read_text())
    assert manifest["recipe"] == "wishart-kappa"
    for panel in manifest["panels"]:
        cols, rows = read_csv(tmp_path / panel["file"])
        assert cols == panel["columns"] and len(rows) == panel["rows"]


def test_check_json_and_exit_code(tmp_path):
    buf = io.StringIO()
    assert cmd_check("ess", seed=1, out_dir=tmp_path, stdout=buf) == EXIT_OK
    doc = json.loads(buf.getvalue())
    assert doc["passed"] and doc["suite"] == "ess"
    assert (tmp_path / "check_ess.json").exists()


def test_check_failure_exit(monkeypatch):
    from hmcinverse import checks

    monkeypatch.setitem(checks.SUITES, "ess",
                        lambda rng: [checks.PropertyResult("forced", False, 1, 0.0)])
    assert cmd_check("ess", stdout=io.StringIO()) == EXIT_CHECK_FAILED


@pytest.mark.parametrize("doc,files", [
    (SMALL_A1, {"samples.csv", "traces.csv", "report.json", "report.csv", "config.yaml"}),
    (SMALL_REMC, {"samples.csv", "traces.csv", "rounds.csv", "ladder.csv", "report.json", "config.yaml"}),
])
def test_sample_writes_artifacts_and_is_deterministic(tmp_path, doc, files):
    path = _cfg(tmp_path, doc)
    outs = []
    for threads in ("1", "3"):
        out = tmp_path / f"run{threads}"
        assert main(["sample", "--config", path, "--out", str(out), "--threads", threads]) == EXIT_OK
        assert files <= {p.name for p in out.iterdir()}
        outs.append((out / "samples.csv").read_bytes())
    assert outs[0] == outs[1]
    assert read_samples(tmp_path / "run1" / "samples.csv").ndim == 3


def test_plain_hmc_flags_but_exits_ok(tmp_path, capsys):
    path = _cfg(tmp_path, SMALL_PLAIN)
    assert main(["sample", "--config", path, "--out", str(tmp_path / "o")]) == EXIT_OK
    assert "rhat_above_threshold" in capsys.readouterr().out
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["status"] == "ok"
