import numpy as np
import pytest

from hmcinverse.errors import InvalidInputError, PreconditionerFallbackWarning
from hmcinverse.hmc import ChainBatch
from hmcinverse.models.bimodal import BimodalMixtureProblem
from hmcinverse.planner import (
    SATURATION,
    PlannerConfig,
    StagePlan,
    _latest_draws,
    estimate_kappa_from_acceptance,
    install_preconditioner,
    plan_speedup,
    pooled_largest_scale,
    run_algorithm1,
    run_plain_hmc,
    speedup,
)
from hmcinverse.diagnostics import StageRecord
from hmcinverse.spectral import SpectralFactor
from hmcinverse.targets import GaussianTarget


def test_kappa_estimate_formula():
    est = estimate_kappa_from_acceptance(2.0, 0.1, 0.9)
    from scipy.stats import norm

    expected = (2.0 / 0.1) * 2 ** 1.75 * np.sqrt(norm.ppf(1 - 0.45))
    assert est.value == pytest.approx(expected)
    assert not est.saturated


def test_kappa_estimate_saturation_and_errors():
    est = estimate_kappa_from_acceptance(1.0, 0.1, 1.0)
    assert est.saturated
    assert est.value == pytest.approx(estimate_kappa_from_acceptance(1.0, 0.1, SATURATION).value)
    for bad in (0.0, -0.1):
        with pytest.raises(InvalidInputError):
            estimate_kappa_from_acceptance(1.0, 0.1, bad)
    with pytest.raises(InvalidInputError):
        estimate_kappa_from_acceptance(1.0, 0.0, 0.5)


def test_speedup_formula():
    assert speedup(100.0, 10.0, 200, 1600, 4.0) == pytest.approx(1600 * 100 / (4 * 200 * 100 + 1600 * 10))


def test_plan_already_ideal_does_not_precondition():
    n = 16
    est = plan_speedup(n**0.25, n, 1600)
    assert not est.precondition


def test_plan_ill_conditioned_prefers_moderate_omega():
    est = plan_speedup(100.0, 64, 1600)
    assert est.precondition
    assert 1 < est.omega_star < 40
    assert est.S_star == int(np.ceil(est.omega_star * 64))


def test_plan_larger_target_selects_larger_omega():
    omegas = [plan_speedup(100.0, 64, s).omega_star for s in (400, 1600, 6400, 25600)]
    assert omegas == sorted(omegas)


def test_plan_rejects_bad_input():
    with pytest.raises(InvalidInputError):
        plan_speedup(0.0, 4, 100)


def test_pooled_largest_scale_removes_chain_means():
    rng = np.random.default_rng(0)
    d = rng.standard_normal((4, 2000, 2)) * np.array([3.0, 1.0])
    d += np.array([0.0, 10.0, 20.0, 30.0])[:, None, None]
    assert pooled_largest_scale(d) == pytest.approx(3.0, rel=0.05)


def test_latest_draws_order():
    d = np.arange(2 * 3 * 1).reshape(2, 3, 1).astype(float)
    # newest transition first, chain order within a transition
    np.testing.assert_array_equal(_latest_draws(d, 3)[:, 0], [2.0, 5.0, 1.0])


def test_install_preconditioner_keeps_states():
    t = GaussianTarget(np.zeros(2), np.diag([1.0, 5.0]))
    x0 = np.random.default_rng(0).standard_normal((4, 2))
    b = ChainBatch.start(t, x0, 0, 0.2, 3)
    b2 = install_preconditioner(b, t, SpectralFactor(np.diag([1.0, 5.0])), "full", np.zeros(2))
    np.testing.assert_allclose(b2.states, x0)
    np.testing.assert_allclose(b2.positions, x0 / np.array([1.0, 5.0]))


def test_stage_plan_order():
    plan = StagePlan([StageRecord(lbl, 1, 0.1, 1, 0.9) for lbl in ("adapt0", "stage1", "stage2", "final")])
    assert plan.is_ordered()
    plan.stages.reverse()
    assert not plan.is_ordered()


def test_algorithm1_well_conditioned_skips_preconditioning():
    t = GaussianTarget(np.zeros(4), np.eye(4))
    cfg = PlannerConfig(n_chains=8, adapt_iterations=150, stage1_draws=60, stage2_draws=60,
                        final_recheck=50)
    res = run_algorithm1(t, 100, cfg, seed=1)
    assert res.status == "ok"
    assert res.plan.labels == ["adapt0", "stage1", "stage2", "final"]
    assert res.plan.is_ordered()
    assert res.report.min_ess >= 100
    assert res.preconditioner is None


def test_algorithm1_forced_diag_fallback_warns():
    t = GaussianTarget(np.zeros(4), np.diag([1.0, 2.0, 4.0, 8.0]))
    cfg = PlannerConfig(n_chains=8, adapt_iterations=120, stage1_draws=40, stage2_draws=40,
                        final_recheck=300, preconditioning="full", s_star=3)
    with pytest.warns(PreconditionerFallbackWarning):
        res = run_algorithm1(t, 400, cfg, seed=2)
    assert res.status == "ok"
    assert res.preconditioner is not None and res.preconditioner.factor.is_diagonal()
    assert "nuts" in res.plan.labels and "adapt1" in res.plan.labels


def test_algorithm1_bimodal_signals_restart():
    p = BimodalMixtureProblem(4, 2, 0.05)
    cfg = PlannerConfig(n_chains=8, adapt_iterations=150, stage1_draws=100, stage2_draws=100)
    res = run_algorithm1(p, 100, cfg, seed=0)
    assert res.status == "restart_remc"
    assert res.samples is None


def test_plain_hmc_flags_stuck_chains():
    p = BimodalMixtureProblem(4, 2, 0.05)
    res = run_plain_hmc(p, n_chains=8, draws=150, seed=0, adapt_iterations=150, pilot_draws=50)
    assert res.samples.shape == (8, 150, 4)
    assert any(f.startswith("rhat_above_threshold") for f in res.report.flags)
