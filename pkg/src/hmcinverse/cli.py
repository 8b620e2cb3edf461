"""Command-line entry point: ``hmcinverse sample | figure | check``.

Exit codes: 0 ok, 1 a check suite failed, 2 invalid config or usage,
3 step-size adaptation failed, 4 R-hat abort (rerun with replica exchange).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

from .config import ExperimentConfig, build_problem, config_from_dict, emit_config, load_config
from .errors import ConfigError
from .hmc import WorkPool
from .io import SCHEMAS, write_csv, write_json, write_samples
from .planner import run_algorithm1, run_plain_hmc
from .remc import run_remc

__all__ = ["main", "cmd_sample", "cmd_figure", "cmd_check", "EXIT_OK", "EXIT_CHECK_FAILED",
           "EXIT_INVALID_CONFIG", "EXIT_ADAPTATION_FAILED", "EXIT_RHAT_ABORT"]

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INVALID_CONFIG = 2
EXIT_ADAPTATION_FAILED = 3
EXIT_RHAT_ABORT = 4


def _trace_rows(traces):
    for label, t, xs in traces:
        for c in range(xs.shape[0]):
            for d in range(xs.shape[1]):
                yield label, t, c, d, xs[c, d]


def _write_report(out: Path, report, status: str, message: str = "", extra=None):
    doc = {"status": status, "message": message}
    if report is not None:
        doc["report"] = json.loads(report.to_json())
        write_csv(out / "report.csv", SCHEMAS["report"], report.rows())
    if extra:
        doc.update(extra)
    write_json(out / "report.json", doc)


def _ladder_rows(result):
    lad = result.ladder
    p = list(result.statistics.p_hat) + [float("nan")]
    for r in range(lad.n_rungs):
        yield r, float(lad.temperatures[r]), float(lad.step_sizes[r]), float(p[r]), float(result.rung_rhat[r])


def _resolve(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.output = args.out
    if args.threads is not None:
        cfg.threads = args.threads
    # re-validate the overridden values
    return config_from_dict(dataclasses.asdict(cfg))


def cmd_sample(cfg: ExperimentConfig, scale: float = 1.0, stdout=None) -> int:
    """Run the configured sampler and write its artifacts under ``cfg.output``."""
    stdout = stdout or sys.stdout
    if scale == 0:
        stdout.write(emit_config(cfg))
        return EXIT_OK
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(emit_config(cfg))
    problem = build_problem(cfg.problem)
    s = cfg.sampler
    with WorkPool(cfg.threads) as pool:
        if s.kind == "algorithm1":
            res = run_algorithm1(problem, max(1.0, s.s_f / scale), s.planner, seed=cfg.seed, pool=pool)
            write_csv(out / "traces.csv", SCHEMAS["traces"], _trace_rows(res.traces))
            extra = {"stages": [st.label for st in res.plan.stages]}
            if res.speedup is not None:
                extra["plan"] = {"kappa0": res.speedup.kappa0, "S_star": res.speedup.S_star,
                                 "predicted_speedup": res.speedup.predicted_speedup,
                                 "kappa_s_star": res.speedup.kappa_s_star}
            if res.status != "ok":
                _write_report(out, None, res.status, res.message, extra)
                stdout.write(f"{res.status}: {res.message}\n")
                return EXIT_ADAPTATION_FAILED if res.status == "adaptation_failed" else EXIT_RHAT_ABORT
            write_samples(out / "samples.csv", res.samples)
            _write_report(out, res.report, "ok", extra=extra)
            report = res.report
        elif s.kind == "plain-hmc":
            p = s.plain
            res = run_plain_hmc(problem, p.n_chains, max(10, int(p.draws / scale)), cfg.seed,
                                p.target_accept, p.adapt_iterations, p.leapfrog_steps,
                                p.rhat_threshold, pool=pool)
            write_samples(out / "samples.csv", res.samples)
            write_csv(out / "traces.csv", SCHEMAS["traces"], _trace_rows(res.traces))
            if not res.converged:
                _write_report(out, res.report, "adaptation_failed", "step size did not converge")
                return EXIT_ADAPTATION_FAILED
            _write_report(out, res.report, "ok")
            report = res.report
        else:
            rc = dataclasses.replace(s.remc, rounds=max(10, int(s.remc.rounds / scale)),
                                     record_rounds=True)
            res = run_remc(problem, rc, seed=cfg.seed, pool=pool)
            write_samples(out / "samples.csv", res.samples)
            tdims = min(3, problem.dimension)
            tr = [("remc", i, res.samples[:, i, :tdims]) for i in range(res.samples.shape[1])]
            write_csv(out / "traces.csv", SCHEMAS["traces"], _trace_rows(tr))
            write_csv(out / "rounds.csv", SCHEMAS["rounds"], res.log or [])
            write_csv(out / "ladder.csv", SCHEMAS["ladder"], _ladder_rows(res))
            _write_report(out, res.report, "ok")
            report = res.report
    flags = f" flags={','.join(report.flags)}" if report.flags else ""
    stdout.write(f"ok: min_ess={report.min_ess:.1f} max_rhat={report.max_rhat:.3f}{flags}\n")
    return EXIT_OK


def cmd_figure(recipe: str, out_dir, seed: int = 0, scale: float = 1.0, threads: int = 1,
               stdout=None, config_text: str = "") -> int:
    from .recipes import RECIPES, recipe_names, run_recipe

    stdout = stdout or sys.stdout
    if recipe not in RECIPES:
        sys.stderr.write(f"unknown recipe {recipe!r}; valid recipes: {', '.join(recipe_names())}\n")
        return EXIT_INVALID_CONFIG
    if scale == 0:
        stdout.write(f"# recipe: {recipe}\n" + config_text)
        return EXIT_OK
    with WorkPool(threads) as pool:
        m = run_recipe(recipe, out_dir, seed=seed, scale=scale, pool=pool)
    stdout.write(f"{recipe}: wrote {len(m['panels'])} panel(s) to {out_dir}\n")
    return EXIT_OK


def cmd_check(suite: str, seed: int = 0, out_dir=None, stdout=None) -> int:
    from .checks import SUITES, run_suite

    stdout = stdout or sys.stdout
    if suite not in SUITES:
        sys.stderr.write(f"unknown suite {suite!r}; valid suites: {', '.join(sorted(SUITES))}\n")
        return EXIT_INVALID_CONFIG
    results = run_suite(suite, seed=seed)
    doc = {"suite": suite, "seed": seed, "passed": all(r.passed for r in results),
           "properties": [r.to_dict() for r in results]}
    text = json.dumps(doc, sort_keys=True, indent=2, default=float)
    stdout.write(text + "\n")
    if out_dir is not None:
        write_json(Path(out_dir) / f"check_{suite}.json", json.loads(text))
    return EXIT_OK if doc["passed"] else EXIT_CHECK_FAILED


def _parser():
    ap = argparse.ArgumentParser(prog="hmcinverse", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config")
    common.add_argument("--seed", type=int, help="64-bit seed (overrides the config)")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--threads", type=int, help="worker threads (overrides the config)")
    common.add_argument("--scale", type=float, default=1.0,
                        help="divisor for run budgets; 0 echoes the config and exits")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("sample", parents=[common], help="run the configured sampler")
    fig = sub.add_parser("figure", parents=[common], help="emit data for one figure recipe")
    fig.add_argument("recipe")
    chk = sub.add_parser("check", parents=[common], help="run a property suite")
    chk.add_argument("suite")
    return ap


def main(argv=None) -> int:
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID_CONFIG if exc.code else EXIT_OK
    if args.scale < 0:
        sys.stderr.write("--scale must be >= 0\n")
        return EXIT_INVALID_CONFIG
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        cfg = _resolve(cfg, args)
    except ConfigError as exc:
        sys.stderr.write(f"invalid config: {exc}\n")
        return EXIT_INVALID_CONFIG
    except OSError as exc:
        sys.stderr.write(f"cannot read config: {exc}\n")
        return EXIT_INVALID_CONFIG
    t0 = time.perf_counter()
    if args.command == "sample":
        code = cmd_sample(cfg, args.scale)
    elif args.command == "figure":
        code = cmd_figure(args.recipe, cfg.output, cfg.seed, args.scale, cfg.threads,
                          config_text=emit_config(cfg))
    else:
        code = cmd_check(args.suite, cfg.seed, args.out)
    sys.stderr.write(f"elapsed {time.perf_counter() - t0:.1f}s\n")
    return code


if __name__ == "__main__":
    raise SystemExit(main())
