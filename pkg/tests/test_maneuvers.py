import pytest

from platoon.core import GlobalParams, safe_distance
from platoon.errors import FeasibilityViolation, NotApplicable
from platoon.horizon import ScenarioE1, horizon_bounds, rho_one_empirical, rho_two
from platoon.maneuvers import (
    STRATEGIES,
    blended_profile,
    e1_entry,
    plan,
    profile_brake,
    profile_to_zero_spacing,
    replay_sequence,
    strategy_s1,
    switch_family_rollout,
    vehicle_bounds,
)
from platoon.traces import replay_trace, sequence_frame

# Far out of domain, so the zero-spacing step comes from the rollout.
LOOSE_SIGMA = 1e6


@pytest.fixture
def gp39():
    return GlobalParams(delta1=39.0)


@pytest.fixture
def e1(vp, gp39):
    """CAV 1 m/s faster than an HDV at 18 m/s, on the safe distance."""
    return ScenarioE1(v0=18.0, v1_0=19.0, s1_0=safe_distance(19.0, 18.0, vp, gp39), vp=vp, gp=gp39)


def test_e1_fixture_has_positive_spacing_error(e1):
    assert e1.admits_e1()
    assert e1.z1_0 == pytest.approx(1.95)


def test_profile_to_zero_spacing_crosses_at_rollout_step(e1):
    sequence = profile_to_zero_spacing(e1, LOOSE_SIGMA)
    assert len(sequence) == rho_one_empirical(e1)
    spacing = sequence.spacing_errors()
    assert spacing[-1] <= 0 < spacing[-2]
    assert all(e > 0 for e in sequence.speed_errors())
    assert sequence.meta["rho_1"] is None


def test_profile_brake(e1):
    sequence = profile_brake(e1)
    assert len(sequence) == rho_two(e1) == 2
    z_end, speed_end = sequence.terminal_errors()
    assert z_end == pytest.approx(1.85)
    assert speed_end == pytest.approx(0.0, abs=1e-9)
    assert sequence.controls == pytest.approx((-5.0, -5.0))


def test_profile_brake_needs_speed_excess(vp, gp39):
    sc = ScenarioE1(v0=18.0, v1_0=18.0, s1_0=100.0, vp=vp, gp=gp39)
    with pytest.raises(NotApplicable):
        profile_brake(sc)


def test_blended_profile_reaches_steady_state(e1):
    sequence = blended_profile(e1, LOOSE_SIGMA)
    meta = sequence.meta
    assert meta["rho_1_source"] == "simulation"
    assert len(sequence) == meta["rho_1"] + meta["rho_2"]
    assert 0.0 <= sequence.switch_step <= meta["rho_1"]
    z_end, speed_end = sequence.terminal_errors()
    assert abs(z_end) <= 1e-3
    assert abs(speed_end) <= 1e-3


def test_switch_family_endpoints_bracket_zero(e1):
    horizon = rho_one_empirical(e1) + rho_two(e1)
    brake = switch_family_rollout(e1, 0.0, horizon)
    shrink = switch_family_rollout(e1, float(rho_one_empirical(e1)), horizon)
    assert brake.z_end > 0 > shrink.z_end
    assert len(brake.controls) == horizon
    assert brake.speed_end == pytest.approx(0.0, abs=1e-9)


def test_blended_profile_needs_e1(vp, gp39):
    sc = ScenarioE1(v0=18.0, v1_0=19.0, s1_0=120.0, vp=vp, gp=gp39)
    with pytest.raises(NotApplicable):
        blended_profile(sc, LOOSE_SIGMA)


def test_strategy_s1_rejects_inadmissible_start(vp, gp39):
    sc = ScenarioE1(v0=10.0, v1_0=12.0, s1_0=10.0, vp=vp, gp=gp39)
    with pytest.raises(NotApplicable):
        strategy_s1(sc)


def test_strategy_s1_holds_then_reaches_e1(vp, gp39):
    sc = ScenarioE1(v0=10.0, v1_0=9.0, s1_0=42.0, vp=vp, gp=gp39)
    sequence = strategy_s1(sc)
    hold = sequence.meta["hold_steps"]
    assert hold == 40
    assert all(u == pytest.approx(0.0) for u in sequence.controls[:hold])
    assert sequence.final_scenario().admits_e1()


def test_replay_sequence_rejects_out_of_interval_control(e1):
    with pytest.raises(FeasibilityViolation) as info:
        replay_sequence(e1, [0.0, 10.0])
    assert info.value.step == 0


def test_sequence_trace_replays_exactly(e1):
    frame = sequence_frame(blended_profile(e1, LOOSE_SIGMA))
    assert replay_trace(frame, e1.gp.tau) <= 1e-9
    assert set(frame["vehicle_id"]) == {0, 1}


def test_plan_dispatch(e1):
    assert plan(e1, "brake", LOOSE_SIGMA).strategy == "brake"
    assert "full" in STRATEGIES
    with pytest.raises(ValueError):
        plan(e1, "coast", LOOSE_SIGMA)


def test_e1_entry(vp, gp39, e1):
    assert e1_entry(e1) is e1
    sc = ScenarioE1(v0=10.0, v1_0=9.0, s1_0=42.0, vp=vp, gp=gp39)
    entry = e1_entry(sc)
    assert entry.admits_e1()
    assert entry == strategy_s1(sc).final_scenario()


def test_vehicle_bounds_use_the_entry_state(vp, gp39):
    sc = ScenarioE1(v0=10.0, v1_0=9.0, s1_0=42.0, vp=vp, gp=gp39)
    assert vehicle_bounds(sc, LOOSE_SIGMA) == horizon_bounds(sc, LOOSE_SIGMA, e1_entry(sc))
