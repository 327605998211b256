import numpy as np
import pytest

from platoon.core import desired_spacing, predict_hdv, safe_distance
from platoon.errors import NoConvergence
from platoon.harness import (
    SCHEMA_VERSION,
    VERIFIERS,
    ExperimentSettings,
    HorizonSettings,
    gen_scenario,
    mpc_settings,
    resolve_horizon,
    run_pool,
    upstream_trajectory,
    verify_lemma1,
    verify_lemma2,
    verify_lemma3,
    verify_lemma4,
    verify_theorem1,
)
from platoon.horizon import HorizonBounds
from platoon.mpc import receding_horizon_run
from utils import load_config


@pytest.mark.parametrize("kind", ["E1", "EE1", "EN"])
def test_gen_scenario_is_deterministic(small_cfg, kind):
    first = gen_scenario(kind, 17, small_cfg)
    second = gen_scenario(kind, 17, small_cfg)
    assert first.to_dict() == second.to_dict()
    assert gen_scenario(kind, 18, small_cfg).to_dict() != first.to_dict()


def test_e1_scenarios_sit_on_the_safe_distance(small_cfg):
    for seed in range(10):
        scenario = gen_scenario("E1", seed, small_cfg)
        sc = scenario.single()
        assert sc.admits_e1()
        low, high = small_cfg.experiment.v0_range
        assert low <= sc.v0 <= high
        assert sc.s1_0 == pytest.approx(safe_distance(sc.v1_0, sc.v0, sc.vp, sc.gp))


def test_en_scenarios_are_admissible(small_cfg):
    for seed in range(10):
        scenario = gen_scenario("EN", seed, small_cfg, n=4)
        platoon = scenario.platoon
        assert platoon.n_cavs == 4
        v0 = platoon.leader.v
        for i, (cav, vp) in enumerate(zip(platoon.cavs, scenario.vps), start=1):
            lead = platoon.predecessor(i)
            gap = lead.x - cav.x
            assert gap >= safe_distance(cav.v, lead.v, vp, scenario.gp) - 1e-9
            assert gap >= safe_distance(cav.v, v0, vp, scenario.gp) - 1e-9


def test_zero_surplus_puts_gaps_on_the_floor():
    cfg = load_config(overrides={"experiment.gap_surplus_factor": 0.0})
    scenario = gen_scenario("EE1", 3, cfg)
    sc = scenario.single()
    assert sc.s1_0 == pytest.approx(safe_distance(sc.v1_0, sc.v0, sc.vp, sc.gp))
    assert desired_spacing(sc.v0, sc.v0, sc.vp, sc.gp) == pytest.approx(sc.s0)


def test_nominal_scenarios_drop_uncertainty(small_cfg):
    scenario = gen_scenario("E1", 0, small_cfg, nominal=True)
    assert all(vp.eps == 0.0 and vp.eta == 0.0 for vp in scenario.vps)


def test_auto_delta1_follows_heterogeneous_vehicles():
    cfg = load_config(overrides={"experiment.heterogeneity": 0.3})
    scenario = gen_scenario("EN", 5, cfg)
    assert scenario.gp.delta1 == pytest.approx(
        max(cfg.gp_for((vp,)).delta1 for vp in scenario.vps)
    )


def test_unknown_scenario_kind(small_cfg):
    with pytest.raises(ValueError):
        gen_scenario("E7", 0, small_cfg)


def test_run_pool_keeps_order():
    assert run_pool(abs, [-3, 2, -1]) == [3, 2, 1]


def test_settings_validation():
    with pytest.raises(ValueError):
        ExperimentSettings(samples=0)
    with pytest.raises(ValueError):
        ExperimentSettings(v0_range=(15.0, 5.0))
    with pytest.raises(ValueError):
        ExperimentSettings(lambdas=(0.0, 1.5))
    with pytest.raises(ValueError):
        HorizonSettings(prediction=0)
    with pytest.raises(ValueError):
        ExperimentSettings(hdv_mode="wavy")
    with pytest.raises(ValueError):
        ExperimentSettings(hdv_wave_period=0.0)


def _bounds(p_ei):
    return HorizonBounds(
        rho_t=2, rho_1=6, rho_2=4, rho=10, p_e1=12, p_ei=p_ei, p_en_sum=sum(p_ei), p_en_max=max(p_ei)
    )


def _unbounded():
    return HorizonBounds(
        rho_t=0, rho_1=None, rho_2=4, rho=None, p_e1=None, p_ei=(None,), p_en_sum=None, p_en_max=None,
        rho_1_source="unavailable",
    )


def test_resolve_horizon_caps_and_fixes():
    cfg = load_config(overrides={"horizon.max_horizon": 30})
    assert resolve_horizon(cfg, _bounds((12, 12)), 0.0) == (24, False)
    assert resolve_horizon(cfg, _bounds((12, 12, 12)), 0.0) == (30, True)
    assert resolve_horizon(cfg, _bounds((12, 12, 12)), 1.0) == (12, False)
    fixed = load_config(overrides={"horizon.prediction": 7})
    assert resolve_horizon(fixed, _bounds((12, 12, 12)), 0.0) == (7, False)


def test_resolve_horizon_without_a_bound_runs_at_the_cap():
    cfg = load_config(overrides={"horizon.max_horizon": 30})
    assert resolve_horizon(cfg, _unbounded(), 0.0) == (30, True)
    assert resolve_horizon(cfg, None, 1.0) == (30, True)


def test_mpc_settings_follow_config(small_cfg):
    scenario = gen_scenario("EN", 1, small_cfg)
    settings = mpc_settings(small_cfg, scenario, 6, terminal_enabled=False)
    assert settings.horizon == 6
    assert not settings.terminal_enabled
    assert settings.weights.n == scenario.platoon.n_cavs
    assert settings.gp == scenario.gp
    assert settings.prediction == "constant"


@pytest.fixture
def trajectory_cfg():
    return load_config(
        overrides={"experiment.hdv_mode": "trajectory", "experiment.hdv_wave_amplitude": 1.0, "horizon.max_horizon": 10}
    )


def test_trajectory_scenarios_start_after_the_newell_shift(trajectory_cfg):
    scenario = gen_scenario("EN", 1, trajectory_cfg, n=2)
    assert scenario.hdv_mode == "trajectory"
    assert scenario.platoon.step == trajectory_cfg.newell.shift_steps
    assert scenario.to_dict()["hdv_mode"] == "trajectory"


def test_upstream_trajectory_stays_in_the_speed_band(trajectory_cfg):
    scenario = gen_scenario("EN", 2, trajectory_cfg, n=2)
    gp, leader = scenario.gp, scenario.platoon.leader
    upstream = upstream_trajectory(scenario, trajectory_cfg, 200)
    speeds = np.diff(upstream) / gp.tau
    assert len(upstream) == 200
    assert upstream[0] == pytest.approx(leader.x + trajectory_cfg.newell.shift_dist)
    assert speeds[0] == pytest.approx(leader.v)
    assert np.all(speeds >= gp.v_min - 1e-9) and np.all(speeds <= gp.v_max + 1e-9)
    assert speeds.max() > leader.v


def test_trajectory_mode_drives_the_hdv_by_newell(trajectory_cfg):
    scenario = gen_scenario("EN", 3, trajectory_cfg, n=2)
    newell = trajectory_cfg.newell
    settings = mpc_settings(trajectory_cfg, scenario, 6, steps=4)
    assert settings.prediction == "newell"
    assert settings.newell == newell
    assert len(settings.upstream) == 4 + 6 + 2
    start = scenario.platoon.step
    assert predict_hdv(settings.upstream, newell, start) == pytest.approx(scenario.platoon.leader.x)

    run = receding_horizon_run(scenario.platoon, 4, settings)
    assert run.steps == 4
    for state in run.states:
        assert state.leader.x == pytest.approx(predict_hdv(settings.upstream, newell, state.step))
    with pytest.raises(ValueError):
        mpc_settings(trajectory_cfg, scenario, 6)


def test_lemma1_report(small_cfg):
    report = verify_lemma1(small_cfg, samples=3, rollout_steps=10)
    assert report["schema_version"] == SCHEMA_VERSION
    assert report["check"] == "lemma1"
    summary = report["summary"]
    assert summary["states_checked"] == 3 * 10 * small_cfg.experiment.n_vehicles
    assert summary["verified_regime"]
    assert summary["empty_intervals"] == 0
    assert summary["grid_violations"] == 0
    assert summary["g_recursion_max_error"] <= 1e-9
    assert report["passed"]


def test_lemma2_report(small_cfg):
    report = verify_lemma2(small_cfg, samples=6)
    summary = report["summary"]
    assert sum(summary["situations"].values()) == 6
    assert summary["feasibility_violations"] == 0
    assert summary["bound_exceeded"] == 0
    assert summary["kinematic_bound_exceeded"] == 0
    assert summary["max_ratio"] is None or summary["max_ratio"] <= 1.0
    assert report["passed"]


def test_lemma3_samples_inside_the_settling_domain(small_cfg):
    report = verify_lemma3(small_cfg, samples=4)
    summary = report["summary"]
    assert summary["checked"] == 4
    assert summary["unsampled"] == 0
    assert 0.0 < summary["in_domain_share"] <= 1.0
    assert summary["rho_1_exceeded"] == 0
    assert summary["brake_final_z_not_positive"] == 0
    assert report["passed"]


def test_lemma3_fails_when_no_draw_reaches_the_domain(small_cfg):
    report = verify_lemma3(small_cfg, samples=2, sigma=1e6)
    summary = report["summary"]
    assert summary["checked"] == 0
    assert summary["unsampled"] == 2
    assert summary["out_of_domain"] == {"log_argument": 200}
    assert not report["passed"]


def test_lemma4_solves_every_sample(small_cfg):
    report = verify_lemma4(small_cfg, samples=3)
    summary = report["summary"]
    assert summary["solved"] == 3
    assert summary["solved_share"] == 1.0
    assert summary["non_monotone_families"] == 0
    assert summary["envelope_violations"] == 0
    assert report["passed"]


def test_lemma4_fails_when_no_sample_is_solved(small_cfg):
    report = verify_lemma4(small_cfg, samples=2, sigma=1e6)
    assert report["summary"]["solved"] == 0
    assert not report["passed"]


@pytest.fixture
def mpc_cfg():
    return load_config(overrides={"horizon.max_horizon": 10, "experiment.samples": 2})


def test_theorem1_runs_the_mpc_for_every_sample(mpc_cfg):
    report = verify_theorem1(mpc_cfg, n=1, lambdas=(0.0, 1.0))
    summary = report["summary"]
    assert summary["bounds_errors"] == 0
    assert summary["bounds_unavailable"] == 0
    for key in ("0.0", "1.0"):
        stats = summary["per_lambda"][key]
        assert stats["runs"] == 2
        assert stats["covered"] + stats["not_covered"] == 2
    if not summary["verified"]:
        assert not report["passed"]
        assert "not verified" in summary["note"]


def test_theorem1_without_bounds_is_not_verified(mpc_cfg, monkeypatch):
    monkeypatch.setattr("platoon.harness.platoon_bounds", lambda *args, **kwargs: _unbounded())
    report = verify_theorem1(mpc_cfg, n=1, samples=1, lambdas=(0.0,))
    summary = report["summary"]
    assert summary["bounds_unavailable"] == 1
    assert summary["per_lambda"]["0.0"]["runs"] == 1
    assert summary["per_lambda"]["0.0"]["covered"] == 0
    assert summary["per_lambda"]["0.0"]["mean_horizon"] == 10.0
    assert not summary["verified"]
    assert not report["passed"]


def test_theorem1_counts_bound_errors_as_failures(mpc_cfg, monkeypatch):
    def failing(*args, **kwargs):
        raise NoConvergence("spacing error too large")

    monkeypatch.setattr("platoon.harness.platoon_bounds", failing)
    report = verify_theorem1(mpc_cfg, n=1, samples=1, lambdas=(0.0,))
    assert report["summary"]["bounds_errors"] == 1
    assert report["summary"]["per_lambda"]["0.0"]["runs"] == 1
    assert not report["passed"]
    assert report["failures"][0]["bounds_error"].startswith("NoConvergence")


def test_theorem1_without_lambda_zero_is_not_verified(mpc_cfg):
    report = verify_theorem1(mpc_cfg, n=1, samples=1, lambdas=(1.0,))
    assert not report["summary"]["verified"]
    assert not report["passed"]


def test_reports_are_reproducible(small_cfg, mpc_cfg):
    assert verify_lemma2(small_cfg, samples=3) == verify_lemma2(small_cfg, samples=3)
    assert verify_lemma3(small_cfg, samples=2) == verify_lemma3(small_cfg, samples=2)
    assert verify_lemma4(small_cfg, samples=2) == verify_lemma4(small_cfg, samples=2)
    first = verify_theorem1(mpc_cfg, n=1, samples=1, lambdas=(0.0,))
    assert first == verify_theorem1(mpc_cfg, n=1, samples=1, lambdas=(0.0,))


def test_verifier_registry():
    assert sorted(VERIFIERS) == ["lemma1", "lemma2", "lemma3", "lemma4", "theorem1"]
