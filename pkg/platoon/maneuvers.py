"""Constructive control sequences for one CAV behind a constant-speed HDV.

Every maneuver is planned as a sequence of target speeds, converted to
controls with ``speed_tracking_control`` so the plan holds under the
uncertainty model, and replayed against the feasible envelope before it is
returned.
"""

import logging
import math
from dataclasses import dataclass, field

from .core import PlatoonState, speed_tracking_control, step_cav, step_constant_speed, tracking_errors
from .errors import FeasibilityViolation, NoConvergence, NoSolution, NotApplicable, OutOfDomain
from .feasibility import FEASIBILITY_TOL, feasible_interval, g_slack, platoon_envelopes, state_residuals
from .horizon import (
    E1_GAP_TOL,
    ROLLOUT_CAP,
    ScenarioE1,
    d_coefficients,
    horizon_bounds,
    rho_one,
    rho_one_empirical,
    rho_two,
    shrink_acceleration,
    theorem1_bounds,
    vehicle_scenarios,
)

logger = logging.getLogger(__name__)

HOLD_GAP_EPS = 1e-9
BISECTION_ITERATIONS = 200
STRATEGIES = ("s1", "shrink", "brake", "blended", "full")


@dataclass(frozen=True)
class ControlSequence:
    """Validated controls of one CAV with the rollout they produce.

    ``states`` and ``lead_states`` hold step 0..len(controls); ``intervals``
    holds the feasible interval each control was checked against.
    """

    scenario: ScenarioE1
    controls: tuple[float, ...]
    strategy: str
    states: tuple = field(default_factory=tuple, repr=False)
    lead_states: tuple = field(default_factory=tuple, repr=False)
    intervals: tuple = field(default_factory=tuple, repr=False)
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.controls)

    @property
    def switch_step(self):
        return self.meta.get("switch_step")

    def final_scenario(self):
        return ScenarioE1.from_states(self.lead_states[-1], self.states[-1], self.scenario.vp, self.scenario.gp)

    def spacing_errors(self):
        s0 = self.scenario.s0
        return [lead.x - cav.x - s0 for lead, cav in zip(self.lead_states, self.states)]

    def speed_errors(self):
        """CAV speed minus HDV speed at every step."""
        return [cav.v - lead.v for lead, cav in zip(self.lead_states, self.states)]

    def terminal_errors(self):
        return self.spacing_errors()[-1], self.speed_errors()[-1]


def replay_sequence(sc, controls, tol=FEASIBILITY_TOL):
    """Replay controls from the scenario start and check every step.

    Returns:
        tuple: (lead_states, states, intervals).

    Raises:
        FeasibilityViolation: A control lies outside its interval, or a
            stepped state breaks the speed, control or safety constraints.
    """
    vp, gp = sc.vp, sc.gp
    lead, cav = sc.initial_states()
    lead_states, states, intervals = [lead], [cav], []
    for k, u in enumerate(controls):
        lead_next = step_constant_speed(lead, gp)
        iv = feasible_interval(lead, lead_next, cav, vp, gp)
        if not iv.contains(u, tol):
            raise FeasibilityViolation(
                f"step {k}: control {u:.12g} outside [{iv.lo:.12g}, {iv.hi:.12g}]",
                step=k,
                residual=min(u - iv.lo, iv.hi - u),
            )
        cav = step_cav(cav, u, vp, gp)
        lead = lead_next
        residuals = state_residuals(lead, cav, vp, gp)
        worst = min(residuals, key=residuals.get)
        if residuals[worst] < -tol:
            raise FeasibilityViolation(
                f"step {k + 1}: {worst} residual {residuals[worst]:.3g}", step=k + 1, residual=residuals[worst]
            )
        lead_states.append(lead)
        states.append(cav)
        intervals.append(iv)
    return tuple(lead_states), tuple(states), tuple(intervals)


def _validated(sc, controls, strategy, **meta):
    lead_states, states, intervals = replay_sequence(sc, controls)
    return ControlSequence(
        scenario=sc,
        controls=tuple(controls),
        strategy=strategy,
        states=states,
        lead_states=lead_states,
        intervals=intervals,
        meta=meta,
    )


def _box_control(cav, v_target, vp, gp):
    return min(max(speed_tracking_control(cav, v_target, vp, gp), vp.a_min), vp.a_max)


def _at_e1(lead, cav, sc):
    return (
        abs(g_slack(lead, cav, sc.vp, sc.gp)) <= E1_GAP_TOL
        and sc.v0 - FEASIBILITY_TOL <= cav.v <= sc.gp.v_max + FEASIBILITY_TOL
    )


def strategy_s1(sc, cap=ROLLOUT_CAP):
    """Drive an admissible state onto the safe-distance bound (state E1).

    Below the HDV speed and inside s0 the CAV first holds its speed until the
    gap reaches s0. It then applies the top of its feasible interval: full
    acceleration until the speed cap or the safety bound binds, the speed hold
    at v_max, and finally the control that lands the gap on the bound.

    Raises:
        NotApplicable: The start state violates speed or spacing admission.
        NoConvergence: E1 not reached within ``cap`` steps.
    """
    if not sc.admits_ee1():
        raise NotApplicable(f"start state (v1={sc.v1_0}, gap={sc.s1_0}) is not admissible")
    vp, gp = sc.vp, sc.gp
    lead, cav = sc.initial_states()
    controls = []
    hold_steps = 0
    if sc.v1_0 < sc.v0 and sc.s1_0 < sc.s0:
        while lead.x - cav.x < sc.s0 - HOLD_GAP_EPS:
            u = speed_tracking_control(cav, sc.v1_0, vp, gp)
            cav, lead = step_cav(cav, u, vp, gp), step_constant_speed(lead, gp)
            controls.append(u)
            hold_steps += 1
            if hold_steps > cap:
                raise NoConvergence(f"speed hold did not open the gap to s0 within {cap} steps")
    while not _at_e1(lead, cav, sc):
        if len(controls) > cap:
            raise NoConvergence(f"E1 not reached within {cap} steps")
        lead_next = step_constant_speed(lead, gp)
        u = feasible_interval(lead, lead_next, cav, vp, gp).hi
        cav, lead = step_cav(cav, u, vp, gp), lead_next
        controls.append(u)
    return _validated(sc, controls, "s1", hold_steps=hold_steps)


def e1_entry(sc):
    """The E1 state strategy s1 reaches from ``sc``; ``sc`` itself at E1."""
    if sc.admits_e1():
        return sc
    return strategy_s1(sc).final_scenario()


def vehicle_bounds(sc, sigma, fallback=True):
    """Horizon bounds of one CAV, settling counts taken at its E1 entry."""
    return horizon_bounds(sc, sigma, e1_entry(sc), fallback)


def platoon_bounds(platoon, vps, gp, sigma, fallback=True):
    """Per-vehicle and aggregated horizon bounds of a platoon behind its HDV."""
    scenarios = vehicle_scenarios(platoon, vps, gp)
    return theorem1_bounds(scenarios, [e1_entry(sc) for sc in scenarios], sigma, fallback)


def shrink_law(sc, p, delta_p=None):
    """Control of the discrepancy-shrinking law at step p from the E1 state ``sc``.

    Returns v0 delta_p (D_p - 1) / tau, which contracts the speed excess to
    v0 delta_p D_p in one step. The settling analysis runs the uncertainty-free
    model, where this commanded control is also the effective acceleration;
    profiles under uncertainty reach the same target speed through
    ``speed_tracking_control``.

    Args:
        sc (ScenarioE1): Start state of the law.
        p (int): Step index.
        delta_p (float | None): Speed discrepancy at step p; None rolls the
            law from delta0 for p steps.
    """
    if p < 0:
        raise ValueError(f"step index must be non-negative, got {p}")
    d = d_coefficients(sc)
    if delta_p is None:
        excess = max(sc.speed_excess, 0.0)
        for _ in range(p):
            excess *= d.at_excess(excess)
    elif delta_p < 0:
        raise ValueError(f"delta_p must be non-negative, got {delta_p}")
    else:
        excess = delta_p * sc.v0
    return shrink_acceleration(d, excess, sc.gp.tau)


def _require_e1(sc):
    if not sc.admits_e1():
        raise NotApplicable(
            f"state is not on the safe-distance bound at or above v0: "
            f"gap {sc.s1_0:.6g} vs bound {sc.safe_gap:.6g}, v1 {sc.v1_0} vs v0 {sc.v0}"
        )


def _shrink_target(d, cav, v0, tau):
    excess = cav.v - v0
    return cav.v + tau * shrink_acceleration(d, excess, tau)


def _brake_target(vp, cav, v0, tau):
    return max(cav.v + tau * vp.a_min, v0)


def profile_to_zero_spacing(sc, sigma, cap=ROLLOUT_CAP):
    """Shrink-law rollout from E1, stopped at the first step with z1 <= 0.

    Raises:
        NoConvergence: z1 did not cross zero within ``cap`` steps, or the
            remaining speed excess can no longer close it.
    """
    _require_e1(sc)
    vp, gp = sc.vp, sc.gp
    d = d_coefficients(sc)
    reach = gp.tau / (1.0 - d.d0)
    lead, cav = sc.initial_states()
    controls = []
    while lead.x - cav.x - sc.s0 > 0:
        z = lead.x - cav.x - sc.s0
        if len(controls) >= cap or (cav.v - sc.v0) * reach < z:
            raise NoConvergence(f"shrink law leaves z1 = {z:.6g} m after {len(controls)} steps")
        u = _box_control(cav, _shrink_target(d, cav, sc.v0, gp.tau), vp, gp)
        cav, lead = step_cav(cav, u, vp, gp), step_constant_speed(lead, gp)
        controls.append(u)
    try:
        rho_1 = rho_one(sc, sigma)
    except OutOfDomain as exc:
        rho_1 = None
        logger.debug("rho_1 formula out of domain for this state: %s", exc)
    return _validated(sc, controls, "shrink", rho_1=rho_1, crossing_step=len(controls))


def profile_brake(sc):
    """Brake at a_min until the CAV speed lands exactly on v0."""
    if sc.speed_excess <= 0:
        raise NotApplicable("braking profile needs the CAV faster than the HDV")
    vp, gp = sc.vp, sc.gp
    lead, cav = sc.initial_states()
    controls = []
    while cav.v > sc.v0 + FEASIBILITY_TOL:
        u = _box_control(cav, _brake_target(vp, cav, sc.v0, gp.tau), vp, gp)
        cav, lead = step_cav(cav, u, vp, gp), step_constant_speed(lead, gp)
        controls.append(u)
        if len(controls) > ROLLOUT_CAP:
            raise NoConvergence("braking did not reach v0")
    return _validated(sc, controls, "brake", rho_2=rho_two(sc))


@dataclass(frozen=True)
class FamilyRollout:
    """One member of the shrink-then-brake family, rolled out without checks."""

    controls: tuple[float, ...]
    speeds: tuple[float, ...]
    z_end: float
    speed_end: float


def switch_family_rollout(sc, switch, horizon):
    """Roll out the family member ``switch`` for ``horizon`` steps.

    Shrink law on steps below floor(switch), a blend of shrink and brake
    targets weighted by the fractional part on step floor(switch), braking
    afterwards and a speed hold at v0 once it is reached. Switch 0 is the
    braking profile; switch >= horizon is the pure shrink law.
    """
    vp, gp = sc.vp, sc.gp
    d = d_coefficients(sc)
    whole = math.floor(switch)
    frac = switch - whole
    lead, cav = sc.initial_states()
    controls, speeds = [], [cav.v]
    for p in range(horizon):
        brake = _brake_target(vp, cav, sc.v0, gp.tau)
        if p < whole:
            target = _shrink_target(d, cav, sc.v0, gp.tau)
        elif p == whole and frac > 0:
            target = frac * _shrink_target(d, cav, sc.v0, gp.tau) + (1.0 - frac) * brake
        else:
            target = brake
        u = _box_control(cav, target, vp, gp)
        cav, lead = step_cav(cav, u, vp, gp), step_constant_speed(lead, gp)
        controls.append(u)
        speeds.append(cav.v)
    return FamilyRollout(
        controls=tuple(controls), speeds=tuple(speeds), z_end=lead.x - cav.x - sc.s0, speed_end=cav.v - sc.v0
    )


def _rho_one_or_fallback(sc, sigma):
    try:
        return rho_one(sc, sigma), "formula"
    except OutOfDomain as exc:
        logger.debug("rho_1 out of domain (%s); using the shrink-law rollout", exc)
        try:
            return rho_one_empirical(sc), "simulation"
        except NoConvergence as no_conv:
            raise NoSolution(f"no zero-spacing step for the shrink law: {no_conv}") from no_conv


def blended_profile(sc, sigma, tol_spacing=1e-3, tol_speed=1e-3):
    """Sequence of length rho_1 + rho_2 ending with z1 = 0 and z1' = 0.

    Bisects the switch step of the shrink-then-brake family: switch 0 is the
    pure braking profile, switch rho_1 is the shrink law followed by braking.

    Raises:
        NotApplicable: The start state is not an E1 state.
        NoSolution: The two family endpoints do not bracket zero spacing
            error; the exception carries both endpoint errors.
    """
    _require_e1(sc)
    rho_1, source = _rho_one_or_fallback(sc, sigma)
    rho_2 = rho_two(sc)
    horizon = rho_1 + rho_2
    meta = {"rho_1": rho_1, "rho_2": rho_2, "rho_1_source": source}

    if sc.speed_excess <= 0:
        if abs(sc.z1_0) <= tol_spacing:
            controls = switch_family_rollout(sc, 0.0, horizon).controls
            return _validated(sc, controls, "blended", switch_step=0.0, **meta)
        raise NoSolution(
            f"no speed excess to absorb spacing error {sc.z1_0:.6g} m", low_error=sc.z1_0, high_error=sc.z1_0
        )

    low_error = switch_family_rollout(sc, 0.0, horizon).z_end
    high_error = switch_family_rollout(sc, float(rho_1), horizon).z_end
    if abs(low_error) <= tol_spacing:
        switch = 0.0
    elif abs(high_error) <= tol_spacing:
        switch = float(rho_1)
    elif low_error > 0 > high_error:
        lo, hi = 0.0, float(rho_1)
        for _ in range(BISECTION_ITERATIONS):
            switch = 0.5 * (lo + hi)
            error = switch_family_rollout(sc, switch, horizon).z_end
            if abs(error) <= 0.5 * tol_spacing:
                break
            if error > 0:
                lo = switch
            else:
                hi = switch
        logger.debug("bisection settled on switch step %.9f", switch)
    else:
        raise NoSolution(
            f"switch family does not bracket zero: brake end z1 = {low_error:.6g} m, "
            f"shrink end z1 = {high_error:.6g} m",
            low_error=low_error,
            high_error=high_error,
        )

    final = switch_family_rollout(sc, switch, horizon)
    controls, z_end, speed_end = final.controls, final.z_end, final.speed_end
    if abs(z_end) > tol_spacing or abs(speed_end) > tol_speed:
        raise NoSolution(
            f"terminal errors z1 = {z_end:.3g} m, z1' = {speed_end:.3g} m/s exceed tolerance",
            low_error=low_error,
            high_error=high_error,
        )
    return _validated(sc, controls, "blended", switch_step=switch, **meta)


def plan_full(sc, sigma, tol_spacing=1e-3, tol_speed=1e-3):
    """Strategy s1 to reach E1, then the blended profile to steady state."""
    transition = strategy_s1(sc)
    settle = blended_profile(transition.final_scenario(), sigma, tol_spacing, tol_speed)
    return _validated(
        sc,
        transition.controls + settle.controls,
        "full",
        transition_steps=len(transition),
        switch_step=settle.switch_step,
        rho_1=settle.meta["rho_1"],
        rho_2=settle.meta["rho_2"],
        rho_1_source=settle.meta["rho_1_source"],
    )


def plan(sc, strategy, sigma, tol_spacing=1e-3, tol_speed=1e-3):
    """Dispatch to one of the named strategies."""
    if strategy == "s1":
        return strategy_s1(sc)
    if strategy == "shrink":
        return profile_to_zero_spacing(sc, sigma)
    if strategy == "brake":
        return profile_brake(sc)
    if strategy == "blended":
        return blended_profile(sc, sigma, tol_spacing, tol_speed)
    if strategy == "full":
        return plan_full(sc, sigma, tol_spacing, tol_speed)
    raise ValueError(f"unknown strategy {strategy!r}; expected one of {', '.join(STRATEGIES)}")


@dataclass(frozen=True)
class SequentialRun:
    """Rollout of the one-CAV-at-a-time strategy over a whole platoon."""

    states: tuple[PlatoonState, ...]
    controls: tuple[tuple[float, ...], ...]
    plan_lengths: tuple[int, ...]
    violations: int
    worst_residual: float
    terminal_z: tuple[float, ...]
    terminal_z_prime: tuple[float, ...]

    @property
    def total_steps(self):
        return len(self.controls)


def sequential_strategy(platoon, vps, gp, sigma, tol_spacing=1e-3, tol_speed=1e-3):
    """CAVs settle one at a time, front to rear, behind a constant-speed HDV.

    CAV i plans ``plan_full`` from its state when its turn starts. Vehicles
    ahead of it hold v0; vehicles behind it take the control in their
    interval closest to a speed hold.
    """
    states = [platoon]
    controls = []
    plan_lengths = []
    violations = 0
    worst = math.inf
    v0 = platoon.leader.v
    current = platoon
    for i in range(platoon.n_cavs):
        sc = ScenarioE1.from_platoon(current, i + 1, vps, gp)
        maneuver = plan_full(sc, sigma, tol_spacing, tol_speed)
        plan_lengths.append(len(maneuver))
        for u_plan in maneuver.controls:

            def choose(j, iv, cav, u_plan=u_plan):
                if j < i:
                    return iv.clamp(speed_tracking_control(cav, v0, vps[j], gp))
                if j == i:
                    return u_plan
                return iv.clamp(speed_tracking_control(cav, cav.v, vps[j], gp))

            leader_next = step_constant_speed(current.leader, gp)
            committed = platoon_envelopes(current.leader, leader_next, current.cavs, vps, gp, choose)
            lead = leader_next
            for j, (iv, u, nxt) in enumerate(committed):
                residual = min(min(state_residuals(lead, nxt, vps[j], gp).values()), u - iv.lo, iv.hi - u)
                worst = min(worst, residual)
                if residual < -FEASIBILITY_TOL:
                    violations += 1
                lead = nxt
            controls.append(tuple(u for _, u, _ in committed))
            current = current.advanced(leader_next, [nxt for _, _, nxt in committed])
            states.append(current)
    errors = tracking_errors(current, vps, gp)
    return SequentialRun(
        states=tuple(states),
        controls=tuple(controls),
        plan_lengths=tuple(plan_lengths),
        violations=violations,
        worst_residual=worst if controls else 0.0,
        terminal_z=errors.z,
        terminal_z_prime=errors.z_prime,
    )
