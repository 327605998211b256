import pytest

from platoon.core import (
    NewellParams,
    PlatoonState,
    VehicleParams,
    VehicleState,
    control_uncertainty,
    desired_spacing,
    predict_hdv,
    predict_hdv_trajectory,
    safe_distance,
    speed_tracking_control,
    step_cav,
    step_constant_speed,
    tracking_errors,
)
from platoon.errors import InsufficientHistory


def test_step_cav_without_uncertainty(vp, gp):
    nxt = step_cav(VehicleState(x=0.0, v=10.0), 2.0, vp, gp)
    assert nxt.x == pytest.approx(1.01)
    assert nxt.v == pytest.approx(10.2)
    assert nxt.u_prev == 2.0


def test_step_cav_with_uncertainty(gp):
    vp = VehicleParams(eps=0.05, eta=0.4)
    state = VehicleState(x=0.0, v=10.0, u_prev=1.0)
    assert control_uncertainty(state, 2.0, vp) == pytest.approx(0.9)
    nxt = step_cav(state, 2.0, vp, gp)
    assert nxt.v == pytest.approx(10.11)
    assert nxt.x == pytest.approx(1.0055)


def test_constant_speed_step(gp):
    nxt = step_constant_speed(VehicleState(x=3.0, v=12.0, u_prev=1.0), gp)
    assert (nxt.x, nxt.v, nxt.u_prev) == (pytest.approx(4.2), 12.0, 0.0)


@pytest.mark.parametrize("eps, eta", [(0.0, 0.0), (0.05, 0.4), (0.02, 0.1)])
def test_speed_tracking_control_hits_target(gp, eps, eta):
    vp = VehicleParams(eps=eps, eta=eta)
    state = VehicleState(x=0.0, v=8.0, u_prev=-1.0)
    u = speed_tracking_control(state, 8.25, vp, gp)
    assert step_cav(state, u, vp, gp).v == pytest.approx(8.25)


def test_predict_hdv_shifts_upstream_history():
    history = [0.0, 0.0, 100.0, 0.0, 0.0]
    assert predict_hdv(history, NewellParams(shift_steps=3, shift_dist=20.0), 5) == 80.0
    assert predict_hdv([0.0], NewellParams(shift_steps=1, shift_dist=5.0), 1) == -5.0


def test_predict_hdv_respects_start_step():
    history = [50.0, 51.0, 52.0]
    assert predict_hdv(history, NewellParams(shift_steps=2, shift_dist=7.0), 12, start_step=10) == 43.0


@pytest.mark.parametrize("k", [2, 5, 20])
def test_predict_hdv_missing_history(k):
    with pytest.raises(InsufficientHistory):
        predict_hdv([1.0, 2.0], NewellParams(shift_steps=3, shift_dist=7.0), k)


def test_predict_hdv_trajectory_speeds():
    history = [10.0 * j for j in range(20)]
    positions, speeds = predict_hdv_trajectory(history, NewellParams(shift_steps=2, shift_dist=7.0), 4, 3, 0.1)
    assert positions == [13.0, 23.0, 33.0, 43.0]
    assert speeds == pytest.approx([100.0] * 4)


def test_newell_params_validation():
    with pytest.raises(ValueError):
        NewellParams(shift_steps=0)
    with pytest.raises(ValueError):
        NewellParams(shift_dist=-1.0)


def test_safe_and_desired_spacing(vp, gp):
    assert safe_distance(10.0, 10.0, vp, gp) == pytest.approx(6.0)
    assert safe_distance(12.0, 10.0, vp, gp) == pytest.approx(6.3)
    assert safe_distance(0.0, 0.0, vp, gp) == vp.length
    assert desired_spacing(10.0, 10.0, vp, gp) == pytest.approx(8.0)


def test_tracking_errors(vp, gp):
    leader = VehicleState(x=100.0, v=10.0)
    steady = PlatoonState(leader=leader, cavs=(VehicleState(x=92.0, v=10.0), VehicleState(x=84.0, v=10.0)))
    errors = tracking_errors(steady, (vp, vp), gp)
    assert errors.z == pytest.approx((0.0, 0.0))
    assert errors.z_prime == pytest.approx((0.0, 0.0))

    wide = PlatoonState(leader=leader, cavs=(VehicleState(x=89.0, v=10.0),))
    assert tracking_errors(wide, (vp,), gp).z[0] == pytest.approx(3.0)

    closing = PlatoonState(leader=leader, cavs=(VehicleState(x=93.7, v=12.0),))
    errors = tracking_errors(closing, (vp,), gp)
    assert errors.z[0] == pytest.approx(-2.0)
    assert errors.z_prime[0] == pytest.approx(-2.0)


def test_platoon_state_ordering():
    leader = VehicleState(x=50.0, v=10.0)
    with pytest.raises(ValueError):
        PlatoonState(leader=leader, cavs=(VehicleState(x=40.0, v=10.0), VehicleState(x=40.0, v=10.0)))
    with pytest.raises(ValueError):
        PlatoonState(leader=leader, cavs=(VehicleState(x=60.0, v=10.0),))


def test_platoon_state_accessors():
    leader = VehicleState(x=50.0, v=10.0)
    cavs = (VehicleState(x=40.0, v=10.0), VehicleState(x=25.0, v=9.0))
    state = PlatoonState(leader=leader, cavs=cavs, step=3)
    assert state.n_cavs == 2
    assert state.gaps() == (10.0, 15.0)
    assert state.predecessor(1) is leader
    assert state.predecessor(2) is cavs[0]
    assert state.advanced(leader, cavs).step == 4
    moved = state.with_cavs((VehicleState(x=30.0, v=10.0),))
    assert moved.step == 3 and moved.n_cavs == 1


@pytest.mark.parametrize(
    "kwargs",
    [{"a_min": 1.0}, {"a_max": -1.0}, {"eta": 1.0}, {"eps": -0.1}, {"length": 0.0}],
)
def test_vehicle_params_validation(kwargs):
    with pytest.raises(ValueError):
        VehicleParams(**kwargs)


def test_nominal_drops_uncertainty():
    vp = VehicleParams(eps=0.05, eta=0.4, a_min=-4.0)
    assert vp.nominal() == VehicleParams(a_min=-4.0)
