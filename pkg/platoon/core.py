"""Domain types and one-step dynamics for a platoon of CAVs behind one HDV.

Vehicle 0 is the human-driven leader; CAV i follows vehicle i - 1. All
quantities are SI (m, m/s, m/s^2, s) and steps are integers.
"""

from dataclasses import dataclass, field, replace
from typing import Sequence

from .errors import InsufficientHistory


@dataclass(frozen=True)
class VehicleParams:
    """Physical and uncertainty constants of one CAV.

    Attributes:
        a_min (float): Acceleration lower limit, negative.
        a_max (float): Acceleration upper limit, positive.
        eps (float): Speed coefficient of the control uncertainty (1/s).
        eta (float): Control coefficient of the control uncertainty, in [0, 1).
        length (float): Vehicle length plus standstill buffer.
    """

    a_min: float = -5.0
    a_max: float = 3.0
    eps: float = 0.0
    eta: float = 0.0
    length: float = 5.0

    def __post_init__(self):
        if not self.a_min < 0 < self.a_max:
            raise ValueError(f"need a_min < 0 < a_max, got a_min={self.a_min}, a_max={self.a_max}")
        if not 0 <= self.eta < 1:
            raise ValueError(f"eta must lie in [0, 1), got {self.eta}")
        if self.eps < 0:
            raise ValueError(f"eps must be non-negative, got {self.eps}")
        if self.length <= 0:
            raise ValueError(f"length must be positive, got {self.length}")

    def nominal(self):
        """Same vehicle with the uncertainty model switched off."""
        return replace(self, eps=0.0, eta=0.0)


@dataclass(frozen=True)
class GlobalParams:
    """Platoon-wide constants: time step, speed band and spacing policy."""

    tau: float = 0.1
    v_min: float = 0.0
    v_max: float = 20.0
    delta1: float = 1.0
    delta2: float = 0.5
    delta_margin: float = 2.0

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.v_min < 0:
            raise ValueError(f"v_min must be non-negative, got {self.v_min}")
        if not self.v_min < self.v_max:
            raise ValueError(f"need v_min < v_max, got {self.v_min} >= {self.v_max}")
        if self.delta1 < 1:
            raise ValueError(f"delta1 must be at least 1, got {self.delta1}")
        if self.delta2 < 0:
            raise ValueError(f"delta2 must be non-negative, got {self.delta2}")
        if self.delta_margin < 0:
            raise ValueError(f"delta_margin must be non-negative, got {self.delta_margin}")


@dataclass(frozen=True)
class VehicleState:
    x: float
    v: float
    u_prev: float = 0.0


@dataclass(frozen=True)
class PlatoonState:
    """Positions, speeds and previous controls of the whole platoon at step k."""

    leader: VehicleState
    cavs: tuple[VehicleState, ...]
    step: int = 0

    def __post_init__(self):
        object.__setattr__(self, "cavs", tuple(self.cavs))
        positions = [self.leader.x] + [cav.x for cav in self.cavs]
        for i in range(1, len(positions)):
            if not positions[i - 1] > positions[i]:
                raise ValueError(
                    f"positions must strictly decrease front to rear: "
                    f"x[{i - 1}]={positions[i - 1]} <= x[{i}]={positions[i]}"
                )

    @property
    def n_cavs(self):
        return len(self.cavs)

    def vehicles(self):
        """Leader followed by the CAVs, front to rear."""
        return (self.leader,) + self.cavs

    def predecessor(self, i):
        """State of the vehicle ahead of CAV i (1-based)."""
        return self.leader if i == 1 else self.cavs[i - 2]

    def gaps(self):
        vehicles = self.vehicles()
        return tuple(vehicles[i - 1].x - vehicles[i].x for i in range(1, len(vehicles)))

    def advanced(self, leader, cavs):
        return PlatoonState(leader=leader, cavs=tuple(cavs), step=self.step + 1)

    def with_cavs(self, cavs):
        """Same leader and step with a different CAV tuple."""
        return replace(self, cavs=tuple(cavs))


@dataclass(frozen=True)
class NewellParams:
    shift_steps: int = 5
    shift_dist: float = 7.0

    def __post_init__(self):
        if int(self.shift_steps) != self.shift_steps or self.shift_steps < 1:
            raise ValueError(f"shift_steps must be an integer >= 1, got {self.shift_steps}")
        if self.shift_dist <= 0:
            raise ValueError(f"shift_dist must be positive, got {self.shift_dist}")


@dataclass(frozen=True)
class TrackingErrors:
    """Spacing errors z and speed errors z' of the N CAVs."""

    z: tuple[float, ...] = field(default_factory=tuple)
    z_prime: tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if len(self.z) != len(self.z_prime):
            raise ValueError("z and z_prime must have the same length")


def control_uncertainty(state, u, vp):
    """Delta u of the uncertainty model: eps*v + eta*u - eta*u_prev."""
    return vp.eps * state.v + vp.eta * u - vp.eta * state.u_prev


def step_cav(state, u, vp, gp):
    """Advance one CAV by one step under control u.

    The effective acceleration is u - delta_u, applied as a double integrator.
    """
    u_eff = u - control_uncertainty(state, u, vp)
    return VehicleState(
        x=state.x + gp.tau * state.v + 0.5 * gp.tau**2 * u_eff,
        v=state.v + gp.tau * u_eff,
        u_prev=u,
    )


def step_constant_speed(state, gp):
    """Advance a vehicle that holds its speed (the constant-speed HDV)."""
    return VehicleState(x=state.x + gp.tau * state.v, v=state.v, u_prev=0.0)


def speed_tracking_control(state, v_target, vp, gp):
    """Control u that makes the next speed exactly v_target.

    Inverts v(k+1) = (1 - tau*eps) v + tau (1 - eta) u + tau eta u_prev.
    """
    return (v_target - (1.0 - gp.tau * vp.eps) * state.v - gp.tau * vp.eta * state.u_prev) / (
        gp.tau * (1.0 - vp.eta)
    )


def predict_hdv(history: Sequence[float], newell, k, start_step=0):
    """Newell prediction of the HDV position at step k.

    Args:
        history: Positions of the vehicle ahead of the HDV; ``history[j]`` is
            its position at step ``start_step + j``.
        newell (NewellParams): Time and space displacement of the Newell model.
        k (int): Step to predict.
        start_step (int): Step of ``history[0]``.

    Returns:
        float: ``history(k - shift_steps) - shift_dist``.

    Raises:
        InsufficientHistory: If step ``k - shift_steps`` was not recorded.
    """
    index = k - newell.shift_steps - start_step
    if index < 0 or index >= len(history):
        raise InsufficientHistory(
            f"need upstream position at step {k - newell.shift_steps}, "
            f"history covers steps {start_step}..{start_step + len(history) - 1}"
        )
    return float(history[index]) - newell.shift_dist


def predict_hdv_trajectory(history, newell, k, horizon, tau, start_step=0):
    """Newell positions and finite-difference speeds for steps k..k+horizon."""
    positions = [predict_hdv(history, newell, k + p, start_step) for p in range(horizon + 2)]
    speeds = [(positions[p + 1] - positions[p]) / tau for p in range(horizon + 1)]
    return positions[: horizon + 1], speeds


def safe_distance(v_follow, v_lead, vp, gp):
    return vp.length + gp.delta1 * gp.tau * v_follow + gp.delta2 * gp.tau * (v_follow - v_lead)


def desired_spacing(v_follow, v_lead, vp, gp):
    return safe_distance(v_follow, v_lead, vp, gp) + gp.delta_margin


def tracking_errors(state, vps, gp):
    """Spacing and speed errors of every CAV against its predecessor."""
    if len(vps) != state.n_cavs:
        raise ValueError(f"expected {state.n_cavs} vehicle parameter blocks, got {len(vps)}")
    z, z_prime = [], []
    for i, (cav, vp) in enumerate(zip(state.cavs, vps), start=1):
        lead = state.predecessor(i)
        z.append(lead.x - cav.x - desired_spacing(cav.v, lead.v, vp, gp))
        z_prime.append(lead.v - cav.v)
    return TrackingErrors(z=tuple(z), z_prime=tuple(z_prime))
