import numpy as np
import pytest

from platoon.core import GlobalParams, NewellParams, PlatoonState, VehicleParams, VehicleState
from platoon.errors import SolverFailure
from platoon.mpc import (
    MpcProblem,
    MpcSettings,
    MpcWeights,
    TerminalSet,
    assemble,
    constant_speed_prediction,
    constraint_violation,
    explicit_cost,
    mpc_step,
    newell_prediction,
    receding_horizon_run,
    rollout_plan,
)
from platoon.traces import replay_trace


def _steady_platoon(n, speed=10.0, gap=8.0):
    leader = VehicleState(x=100.0, v=speed)
    return PlatoonState(leader=leader, cavs=tuple(VehicleState(x=100.0 - gap * (i + 1), v=speed) for i in range(n)))


def _problem(state, horizon, vps=None, gp=None, terminal_enabled=True):
    gp = gp or GlobalParams()
    vps = vps or (VehicleParams(),) * state.n_cavs
    positions, speeds = constant_speed_prediction(state.leader, horizon, gp.tau)
    return MpcProblem(
        horizon=horizon,
        initial=state,
        hdv_positions=positions,
        hdv_speeds=speeds,
        weights=MpcWeights.uniform(state.n_cavs),
        terminal=TerminalSet(),
        vps=vps,
        gp=gp,
        terminal_enabled=terminal_enabled,
    )


def _disturbed(n=2):
    state = _steady_platoon(n, gap=20.0)
    cavs = (VehicleState(x=state.cavs[0].x - 3.0, v=11.0, u_prev=0.5),) + state.cavs[1:]
    return state.with_cavs(cavs)


def test_row_count_with_and_without_terminal_set():
    state = _steady_platoon(2)
    assert assemble(_problem(state, 3)).qp.m == 22
    assert assemble(_problem(state, 3, terminal_enabled=False)).qp.m == 18
    labels = assemble(_problem(state, 3)).row_labels
    assert labels[0] == ("control", 1, 1)
    assert labels[-1] == ("terminal_speed", 3, 2)


def test_condensed_maps_match_rollout():
    vps = (VehicleParams(eps=0.02, eta=0.1), VehicleParams(eps=0.01, eta=0.3))
    problem = _problem(_disturbed(), 4, vps=vps)
    condensed = assemble(problem)
    U = np.random.default_rng(3).uniform(-2.0, 2.0, size=problem.n_controls)
    positions, speeds = rollout_plan(problem, U)
    np.testing.assert_allclose(condensed.positions(U), positions, atol=1e-10)
    np.testing.assert_allclose(condensed.speeds(U), speeds, atol=1e-10)


def test_condensed_cost_matches_explicit_cost():
    vps = (VehicleParams(eps=0.02, eta=0.1),) * 2
    problem = _problem(_disturbed(), 5, vps=vps)
    qp = assemble(problem).qp
    rng = np.random.default_rng(5)
    for _ in range(5):
        U = rng.uniform(-3.0, 3.0, size=problem.n_controls)
        assert qp.objective(U) == pytest.approx(explicit_cost(problem, U), rel=1e-9, abs=1e-9)


def test_gradient_matches_finite_differences():
    problem = _problem(_disturbed(), 3)
    qp = assemble(problem).qp
    U = np.random.default_rng(9).uniform(-1.0, 1.0, size=problem.n_controls)
    step = 1e-6
    numeric = np.array(
        [
            (explicit_cost(problem, U + step * e) - explicit_cost(problem, U - step * e)) / (2 * step)
            for e in np.eye(problem.n_controls)
        ]
    )
    np.testing.assert_allclose(qp.gradient(U), numeric, rtol=1e-5, atol=1e-5)


def test_steady_state_keeps_zero_controls():
    controls, solution = mpc_step(_problem(_steady_platoon(3), 5))
    assert solution.status == "optimal"
    np.testing.assert_allclose(controls, [0.0, 0.0, 0.0], atol=1e-6)
    assert solution.objective == pytest.approx(0.0, abs=1e-8)


def test_disturbed_platoon_plan_is_feasible():
    problem = _problem(_disturbed(), 10, gp=GlobalParams(delta1=3.0), terminal_enabled=False)
    controls, solution = mpc_step(problem)
    assert len(controls) == 2
    assert constraint_violation(problem, solution.controls) <= 1e-6
    assert solution.kkt_residual <= 1e-8


def test_unreachable_terminal_set_raises_with_solution():
    state = PlatoonState(leader=VehicleState(x=100.0, v=10.0), cavs=(VehicleState(x=40.0, v=10.0),))
    problem = _problem(state, 1)
    with pytest.raises(SolverFailure) as info:
        mpc_step(problem)
    assert info.value.result.status in ("infeasible", "max_iterations")


def test_weights_validation():
    with pytest.raises(ValueError):
        MpcWeights.uniform(2, q_z=[[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        MpcWeights.uniform(2, q_z=-1.0)
    with pytest.raises(ValueError):
        MpcWeights.uniform(2, omega1=-1.0)
    assert MpcWeights.uniform(3, q_z=2.0).q_z[1, 1] == 2.0


def test_constant_speed_prediction():
    positions, speeds = constant_speed_prediction(VehicleState(x=5.0, v=10.0), 3, 0.1)
    np.testing.assert_allclose(positions, [5.0, 6.0, 7.0, 8.0])
    np.testing.assert_allclose(speeds, [10.0] * 4)


def test_newell_prediction():
    history = [10.0 * j for j in range(30)]
    positions, speeds = newell_prediction(history, NewellParams(shift_steps=5, shift_dist=7.0), 5, 3, 1.0)
    np.testing.assert_allclose(positions, [-7.0, 3.0, 13.0, 23.0])
    np.testing.assert_allclose(speeds, [10.0] * 4)


def test_receding_horizon_run_from_steady_state():
    state = _steady_platoon(2)
    settings = MpcSettings(
        horizon=5,
        weights=MpcWeights.uniform(2),
        terminal=TerminalSet(),
        vps=(VehicleParams(),) * 2,
        gp=GlobalParams(),
    )
    run = receding_horizon_run(state, 8, settings)
    assert run.steps == 8
    assert run.infeasible_steps == ()
    assert not run.stopped_early
    assert len(run.frame) == 9 * 3
    assert replay_trace(run.frame, 0.1) <= 1e-9
    final = run.states[-1]
    assert final.gaps() == pytest.approx((8.0, 8.0), abs=1e-6)


def test_newell_settings_need_upstream_history():
    with pytest.raises(ValueError):
        MpcSettings(
            horizon=3,
            weights=MpcWeights.uniform(1),
            terminal=TerminalSet(),
            vps=(VehicleParams(),),
            gp=GlobalParams(),
            prediction="newell",
        )


def test_receding_horizon_run_with_newell_leader():
    upstream = tuple(130.0 + 10.0 * 0.1 * j for j in range(80))
    newell = NewellParams(shift_steps=5, shift_dist=30.0)
    leader_x = upstream[0] - newell.shift_dist
    state = PlatoonState(
        leader=VehicleState(x=leader_x, v=10.0), cavs=(VehicleState(x=leader_x - 8.0, v=10.0),), step=5
    )
    settings = MpcSettings(
        horizon=4,
        weights=MpcWeights.uniform(1),
        terminal=TerminalSet(),
        vps=(VehicleParams(),),
        gp=GlobalParams(),
        prediction="newell",
        newell=newell,
        upstream=upstream,
    )
    run = receding_horizon_run(state, 5, settings)
    assert run.infeasible_steps == ()
    assert run.states[-1].leader.x == pytest.approx(upstream[5] - 30.0)
    assert run.states[-1].step == 10
