"""Closed-form one-step feasible control envelope of a CAV.

The envelope keeps the next speed inside [v_min, v_max] and the next gap at
or above the safe distance, given the predecessor's already committed next
state. Intervals for a platoon are computed front to rear.
"""

import math
from dataclasses import dataclass, field

from .core import safe_distance, step_cav
from .errors import OutOfDomain

FEASIBILITY_TOL = 1e-9


@dataclass(frozen=True)
class FeasibleInterval:
    """Admissible controls [lo, hi] with the bounds they were built from."""

    lo: float
    hi: float
    a_lower_v: float
    a_upper_v: float
    a_upper_d: float
    a_min: float
    a_max: float

    def __post_init__(self):
        if self.lo != max(self.a_min, self.a_lower_v) or self.hi != min(self.a_max, self.a_upper_v, self.a_upper_d):
            raise ValueError("interval ends must be the max/min of their constituent bounds")

    @property
    def non_empty(self):
        return self.lo <= self.hi

    @property
    def width(self):
        return self.hi - self.lo

    @property
    def midpoint(self):
        return 0.5 * (self.lo + self.hi)

    def contains(self, u, tol=FEASIBILITY_TOL):
        return self.lo - tol <= u <= self.hi + tol

    def clamp(self, u):
        return min(max(u, self.lo), self.hi)

    def grid(self, points):
        """Evenly spaced controls over the interval, both ends included."""
        if points < 2:
            raise ValueError("a grid needs at least two points")
        if not self.non_empty:
            return []
        step = self.width / (points - 1)
        return [self.lo + j * step for j in range(points - 1)] + [self.hi]


def speed_bounds(state, vp, gp):
    """Controls that keep v(k+1) inside [v_min, v_max]."""
    drift = (1.0 - gp.tau * vp.eps) * state.v + gp.tau * vp.eta * state.u_prev
    scale = gp.tau * (1.0 - vp.eta)
    return (gp.v_min - drift) / scale, (gp.v_max - drift) / scale


def g_slack(lead, follow, vp, gp):
    return lead.x - follow.x - safe_distance(follow.v, lead.v, vp, gp)


def safety_upper_bound(lead, lead_next, follow, vp, gp):
    """Largest control keeping g(k+1) >= 0 against the predecessor's next state.

    ``lead_next`` is the predecessor's committed state at k+1. With a double
    integrator predecessor and delta2 = 1/2 this is the simplified form
    (g + tau (v_lead(k+1) - v)) / (tau^2 (delta1 + 1)) shifted by the
    uncertainty terms and divided by (1 - eta).
    """
    tau = gp.tau
    reach = (
        lead_next.x
        - follow.x
        - tau * follow.v
        - vp.length
        - gp.delta1 * tau * follow.v
        - gp.delta2 * tau * (follow.v - lead_next.v)
    )
    u_eff_max = reach / (tau**2 * (gp.delta1 + gp.delta2 + 0.5))
    return (u_eff_max + vp.eps * follow.v - vp.eta * follow.u_prev) / (1.0 - vp.eta)


def safety_upper_bound_from_control(lead, lead_u_eff, follow, vp, gp):
    """``safety_upper_bound`` with the predecessor given by its effective control.

    Solves g(k+1) >= 0 on ``g_next_closed_form``; the (delta2 - 1/2) term drops
    out only for delta2 = 1/2.
    """
    tau = gp.tau
    lead_v_next = lead.v + tau * lead_u_eff
    reach = g_slack(lead, follow, vp, gp) + tau * (lead_v_next - follow.v) + tau**2 * (gp.delta2 - 0.5) * lead_u_eff
    u_eff_max = reach / (tau**2 * (gp.delta1 + gp.delta2 + 0.5))
    return (u_eff_max + vp.eps * follow.v - vp.eta * follow.u_prev) / (1.0 - vp.eta)


def g_next_closed_form(lead, lead_u_eff, follow, u_eff, vp, gp):
    """Next-step slack from the current slack and both effective accelerations."""
    tau = gp.tau
    lead_v_next = lead.v + tau * lead_u_eff
    return (
        g_slack(lead, follow, vp, gp)
        + tau * (lead_v_next - follow.v)
        + tau**2 * (gp.delta2 - 0.5) * lead_u_eff
        - tau**2 * (gp.delta1 + gp.delta2 + 0.5) * u_eff
    )


def feasible_interval(lead, lead_next, follow, vp, gp):
    """Feasible control interval of ``follow``; ``lead=None`` drops the safety bound."""
    a_lower_v, a_upper_v = speed_bounds(follow, vp, gp)
    a_upper_d = math.inf if lead is None else safety_upper_bound(lead, lead_next, follow, vp, gp)
    return FeasibleInterval(
        lo=max(vp.a_min, a_lower_v),
        hi=min(vp.a_max, a_upper_v, a_upper_d),
        a_lower_v=a_lower_v,
        a_upper_v=a_upper_v,
        a_upper_d=a_upper_d,
        a_min=vp.a_min,
        a_max=vp.a_max,
    )


def delta1_floor(vp, gp):
    return max((gp.v_min - gp.v_max) / (gp.tau * (vp.a_min - vp.eps * gp.v_min)) - 1.0, 1.0)


def uncertainty_aware_delta1_floor(vp, gp):
    """delta1 floor that also covers a previous control of a_max when eta > 0.

    Equals ``delta1_floor`` for eta = 0.
    """
    reserve = -(1.0 - vp.eta) * vp.a_min + vp.eps * gp.v_min - vp.eta * vp.a_max
    if reserve <= 0:
        raise OutOfDomain(
            f"no delta1 keeps the braking bound reachable: reserve {reserve:.6g} <= 0", argument=reserve
        )
    return max((gp.v_max - gp.v_min) / (gp.tau * reserve) - 1.0, 1.0)


def platoon_delta1_floor(vps, gp, uncertainty_aware=False):
    floor = uncertainty_aware_delta1_floor if uncertainty_aware else delta1_floor
    return max(floor(vp, gp) for vp in vps)


@dataclass(frozen=True)
class InequalityCheck:
    name: str
    slack: float
    holds: bool


@dataclass(frozen=True)
class InequalityReport:
    """The six non-emptiness inequalities plus the parameter-level bounds."""

    checks: tuple[InequalityCheck, ...]
    parameter_bounds: dict = field(default_factory=dict)
    verified_regime: bool = False

    @property
    def all_hold(self):
        return all(check.holds for check in self.checks)

    def failed(self):
        return [check.name for check in self.checks if not check.holds]

    def to_dict(self):
        return {
            "checks": {check.name: {"slack": check.slack, "holds": check.holds} for check in self.checks},
            "parameter_bounds": dict(self.parameter_bounds),
            "verified_regime": self.verified_regime,
        }


def check_nonempty_inequalities(lead, lead_next, follow, vp, gp, tol=FEASIBILITY_TOL):
    """Evaluate inequalities (i)-(vi) of the envelope at one state pair.

    The parameter bounds are the state-free lower bounds on the slacks of
    (ii), (iii), (v) and (vi); they are reported, not assumed.
    """
    iv = feasible_interval(lead, lead_next, follow, vp, gp)
    slacks = (
        ("i", vp.a_max - vp.a_min),
        ("ii", vp.a_max - iv.a_lower_v),
        ("iii", iv.a_upper_v - vp.a_min),
        ("iv", iv.a_upper_v - iv.a_lower_v),
        ("v", iv.a_upper_d - vp.a_min),
        ("vi", iv.a_upper_d - iv.a_lower_v),
    )
    one_minus_eta = 1.0 - vp.eta
    d1 = gp.delta1
    bounds = {
        "ii": vp.a_max - (vp.eps * gp.v_min - vp.eta * vp.a_min) / one_minus_eta,
        "iii": (vp.eps * gp.v_max - vp.eta * vp.a_max) / one_minus_eta - vp.a_min,
        "v": ((gp.v_min - gp.v_max) / (gp.tau * (d1 + 1.0)) - (vp.a_min - vp.eps * gp.v_min)) / one_minus_eta,
        "v_worst_previous_control": (
            (gp.v_min - gp.v_max) / (gp.tau * (d1 + 1.0))
            - one_minus_eta * vp.a_min
            + vp.eps * gp.v_min
            - vp.eta * vp.a_max
        )
        / one_minus_eta,
        "vi": (lead_next.v - gp.v_min + d1 * (follow.v - gp.v_min)) / (gp.tau * one_minus_eta * (d1 + 1.0)),
    }
    return InequalityReport(
        checks=tuple(InequalityCheck(name, slack, slack >= -tol) for name, slack in slacks),
        parameter_bounds=bounds,
        verified_regime=gp.delta2 == 0.5 and d1 >= delta1_floor(vp, gp),
    )


def platoon_envelopes(leader, leader_next, cavs, vps, gp, choose):
    """Front-to-rear intervals with each CAV committing before the next one.

    Args:
        leader (VehicleState): Vehicle ahead of the first CAV at step k.
        leader_next (VehicleState): Its committed state at k+1.
        cavs (Sequence[VehicleState]): CAV states at k, front to rear.
        vps (Sequence[VehicleParams]): Parameters of each CAV.
        gp (GlobalParams): Platoon-wide constants.
        choose (Callable[[int, FeasibleInterval, VehicleState], float]):
            Picks the control of CAV i (0-based) from its interval.

    Returns:
        list[tuple[FeasibleInterval, float, VehicleState]]: Interval, chosen
        control and next state of each CAV.
    """
    committed = []
    lead, lead_next = leader, leader_next
    for i, (cav, vp) in enumerate(zip(cavs, vps)):
        iv = feasible_interval(lead, lead_next, cav, vp, gp)
        u = choose(i, iv, cav)
        nxt = step_cav(cav, u, vp, gp)
        committed.append((iv, u, nxt))
        lead, lead_next = cav, nxt
    return committed


def state_residuals(lead, follow, vp, gp):
    """Constraint residuals of one CAV (non-negative when satisfied)."""
    residuals = {
        "speed_low": follow.v - gp.v_min,
        "speed_high": gp.v_max - follow.v,
        "control_low": follow.u_prev - vp.a_min,
        "control_high": vp.a_max - follow.u_prev,
    }
    if lead is not None:
        residuals["safety"] = g_slack(lead, follow, vp, gp)
    return residuals


def is_feasible_state(lead, follow, vp, gp, tol=FEASIBILITY_TOL):
    return min(state_residuals(lead, follow, vp, gp).values()) >= -tol
