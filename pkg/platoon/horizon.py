"""Step counts and prediction-horizon lower bounds for the feasibility theory.

A single CAV behind a constant-speed HDV is described by ``ScenarioE1``. The
closed-form counts are implemented as stated. The horizon bound takes the
transition count from ``transition_bound``, which never undercuts the
kinematically exact ``transition_step_bound``. The zero-spacing step count
falls back to simulation when its formula leaves its domain, and is reported
unavailable when the shrink law cannot close the spacing error at all.
"""

import logging
import math
from dataclasses import dataclass, field, replace

from .core import GlobalParams, VehicleParams, VehicleState, desired_spacing, safe_distance
from .errors import DegenerateRate, NoConvergence, NotApplicable, OutOfDomain

logger = logging.getLogger(__name__)

CEIL_NUDGE = 1e-12
ADMISSION_TOL = 1e-9
E1_GAP_TOL = 1e-6
ROLLOUT_CAP = 100_000


def ceil_steps(x):
    """Ceiling of a non-negative step count, robust to representation error."""
    if x <= 0:
        return 0
    return max(math.ceil(x - CEIL_NUDGE * max(1.0, abs(x))), 0)


@dataclass(frozen=True)
class ScenarioE1:
    """One CAV behind an HDV that drives at the constant speed v0.

    Attributes:
        v0 (float): HDV speed.
        v1_0 (float): Initial CAV speed.
        s1_0 (float): Initial gap x0 - x1.
        vp (VehicleParams): CAV parameters.
        gp (GlobalParams): Platoon-wide constants.
        u1_prev (float): Control applied by the CAV before step 0.
    """

    v0: float
    v1_0: float
    s1_0: float
    vp: VehicleParams
    gp: GlobalParams
    u1_prev: float = 0.0

    def __post_init__(self):
        if not self.gp.v_min - ADMISSION_TOL <= self.v0 <= self.gp.v_max + ADMISSION_TOL:
            raise ValueError(f"HDV speed {self.v0} outside [{self.gp.v_min}, {self.gp.v_max}]")

    @classmethod
    def from_states(cls, lead, follow, vp, gp):
        return cls(v0=lead.v, v1_0=follow.v, s1_0=lead.x - follow.x, vp=vp, gp=gp, u1_prev=follow.u_prev)

    @classmethod
    def from_platoon(cls, platoon, i, vps, gp):
        """CAV i (1-based) against its predecessor, taken as driving at constant speed."""
        return cls.from_states(platoon.predecessor(i), platoon.cavs[i - 1], vps[i - 1], gp)

    @property
    def speed_excess(self):
        """v0 * delta0, the initial speed of the CAV above the HDV."""
        return self.v1_0 - self.v0

    @property
    def delta0(self):
        return self.speed_excess / self.v0 if self.v0 > 0 else math.inf

    @property
    def s0(self):
        """Steady-state desired spacing at the HDV speed."""
        return desired_spacing(self.v0, self.v0, self.vp, self.gp)

    @property
    def safe_gap(self):
        return safe_distance(self.v1_0, self.v0, self.vp, self.gp)

    @property
    def z1_0(self):
        return self.s1_0 - self.s0

    def admits_ee1(self):
        gp = self.gp
        return (
            gp.v_min - ADMISSION_TOL <= self.v1_0 <= gp.v_max + ADMISSION_TOL
            and self.s1_0 >= self.safe_gap - ADMISSION_TOL
        )

    def admits_e1(self):
        return (
            self.v0 - ADMISSION_TOL <= self.v1_0 <= self.gp.v_max + ADMISSION_TOL
            and abs(self.s1_0 - self.safe_gap) <= E1_GAP_TOL
        )

    def initial_states(self):
        """HDV and CAV states at step 0, with the CAV at x = 0."""
        lead = VehicleState(x=self.s1_0, v=self.v0, u_prev=0.0)
        follow = VehicleState(x=0.0, v=self.v1_0, u_prev=self.u1_prev)
        return lead, follow

    def with_vehicle(self, vp):
        return replace(self, vp=vp)


def classify_situation(sc):
    """Name the starting situation of a transition towards E1.

    Raises:
        DegenerateRate: The CAV matches the HDV speed inside s0, so neither
            S(ii) nor the speed hold of S(iii) applies.
    """
    if sc.admits_e1():
        return "E1"
    if sc.v1_0 > sc.v0:
        return "S(i)"
    if sc.s1_0 >= sc.s0:
        return "S(ii)"
    if sc.v1_0 == sc.v0:
        raise DegenerateRate(f"v1(0) = v0 = {sc.v0} with the gap {sc.s0 - sc.s1_0:.6g} m inside s0")
    return "S(iii)"


def _require_admission(sc):
    if not sc.admits_ee1():
        raise NotApplicable(
            f"state (v1={sc.v1_0}, gap={sc.s1_0}) violates admission: "
            f"speed band [{sc.gp.v_min}, {sc.gp.v_max}], safe gap {sc.safe_gap:.6g}"
        )


def rho_transition(sc):
    """Three-ceiling step count of the transition to E1, as stated; 0 at E1."""
    _require_admission(sc)
    if sc.admits_e1():
        return 0
    gp, vp = sc.gp, sc.vp
    cruise = ceil_steps(max(sc.s1_0 - safe_distance(gp.v_max, sc.v0, vp, gp), 0.0) / (gp.tau * gp.v_max))
    accelerate = ceil_steps((gp.v_max - sc.v1_0) / (gp.tau * vp.a_max))
    if sc.v1_0 > sc.v0:
        hold = 0
    elif sc.v1_0 == sc.v0:
        if sc.s0 > sc.s1_0:
            raise DegenerateRate(f"hold term divides by v0 - v1(0) = 0 with s0 - s1(0) = {sc.s0 - sc.s1_0:.6g}")
        hold = 0
    else:
        hold = ceil_steps(max(sc.s0 - sc.s1_0, 0.0) / (sc.v0 - sc.v1_0))
    return cruise + accelerate + hold


def transition_step_bound(sc):
    """Upper bound on the steps strategy s1 needs, from exact kinematics.

    Hold at v1(0) until the gap reaches s0 (S(iii) only), accelerate at
    a_max to v_max, then close the remaining excess over the safe distance at
    the rate tau (v_max - v0). Valid for the uncertainty-free model.
    """
    _require_admission(sc)
    if sc.admits_e1():
        return 0
    gp, vp = sc.gp, sc.vp
    tau = gp.tau
    speed, gap, hold = sc.v1_0, sc.s1_0, 0
    if sc.v1_0 < sc.v0 and sc.s1_0 < sc.s0:
        hold = ceil_steps((sc.s0 - sc.s1_0) / (tau * (sc.v0 - sc.v1_0)))
        gap = sc.s1_0 + hold * tau * (sc.v0 - sc.v1_0)
    accelerate = ceil_steps((gp.v_max - speed) / (tau * vp.a_max))
    gap += accelerate * tau * max(sc.v0 - speed, 0.0)
    excess = gap - safe_distance(gp.v_max, sc.v0, vp, gp)
    if excess <= 0:
        return hold + accelerate
    if gp.v_max <= sc.v0:
        raise DegenerateRate("the CAV cannot close a gap on an HDV driving at v_max")
    return hold + accelerate + ceil_steps(excess / (tau * (gp.v_max - sc.v0)))


def transition_bound(sc):
    """Transition steps that enter the horizon bound.

    The larger of the stated count and ``transition_step_bound``: the stated
    count drops tau from its hold term and closes the cruise gap at tau v_max,
    so on its own it can fall short of the steps strategy s1 takes.

    Returns:
        tuple: (bound, stated, kinematic); ``kinematic`` is None when the
            exact bound has no closing rate.
    """
    stated = rho_transition(sc)
    try:
        kinematic = transition_step_bound(sc)
    except DegenerateRate:
        kinematic = None
    return max(stated, kinematic or 0), stated, kinematic


@dataclass(frozen=True)
class DCoefficients:
    """Per-step contraction ratios of the speed excess under the shrink law."""

    d0: float
    d_inf: float
    v0: float
    base: float
    brake_term: float

    def __post_init__(self):
        if not (0 < self.d_inf < 1 and 0 < self.d0 < 1):
            raise ValueError(f"contraction ratios must lie in (0, 1): d0={self.d0}, d_inf={self.d_inf}")

    def at_excess(self, excess):
        """D for a speed excess v0 * delta."""
        numerator = self.base + excess
        return numerator / (numerator + self.brake_term)

    def at(self, delta):
        return self.at_excess(delta * self.v0)


def d_coefficients(sc):
    gp, vp = sc.gp, sc.vp
    base = 2.0 * sc.v0 + 2.0 * gp.tau * vp.a_max - gp.tau * vp.a_min
    brake_term = -2.0 * gp.tau * vp.a_min
    if base + max(sc.speed_excess, 0.0) + brake_term <= 0:
        raise OutOfDomain("contraction ratio denominator is not positive")

    def ratio(excess):
        return (base + excess) / (base + excess + brake_term)

    return DCoefficients(
        d0=ratio(sc.speed_excess), d_inf=ratio(0.0), v0=sc.v0, base=base, brake_term=brake_term
    )


def rho_one_argument(d, sigma):
    return 1.0 - (2.0 * (1.0 - d.d_inf) / (1.0 + d.d_inf)) * (1.0 / (1.0 - d.d0) - sigma)


def rho_one(sc, sigma):
    """Steps for the shrink law to bring the spacing error to zero (formula).

    Raises:
        OutOfDomain: If the logarithm argument lies outside (0, 1].
    """
    d = d_coefficients(sc)
    argument = rho_one_argument(d, sigma)
    if not 0.0 < argument <= 1.0:
        raise OutOfDomain(f"log argument {argument:.6g} outside (0, 1]", argument=argument)
    return ceil_steps(math.log(argument) / math.log(d.d_inf))


def shrink_acceleration(d, excess, tau):
    """Effective acceleration of the shrink law for a given speed excess."""
    return excess * (d.at_excess(excess) - 1.0) / tau


def rho_one_empirical(sc, cap=ROLLOUT_CAP):
    """Steps until the shrink law drives z1 <= 0, by uncertainty-free rollout.

    Raises:
        NoConvergence: If z1 stays positive for ``cap`` steps, or if the speed
            excess left cannot close the remaining spacing error.
    """
    d = d_coefficients(sc)
    tau = sc.gp.tau
    excess, z = sc.speed_excess, sc.z1_0
    reach = tau / (1.0 - d.d0)
    for p in range(cap + 1):
        if z <= 0:
            return p
        if excess * reach < z:
            raise NoConvergence(
                f"spacing error {z:.6g} m exceeds the {excess * reach:.6g} m the remaining excess can close"
            )
        excess_next = excess * d.at_excess(excess)
        z -= 0.5 * tau * (excess + excess_next)
        excess = excess_next
    raise NoConvergence(f"z1 still {z:.6g} m after {cap} steps")


def rho_two(sc):
    if sc.speed_excess <= 0:
        return 0
    return ceil_steps(sc.speed_excess / (-sc.vp.a_min * sc.gp.tau))


def braking_distance(sc):
    """Gap closed while braking at a_min onto v0, the last step landing exactly."""
    steps = rho_two(sc)
    if steps == 0:
        return 0.0
    excess, tau = sc.speed_excess, sc.gp.tau
    last = excess + (steps - 1) * tau * sc.vp.a_min
    return tau * ((steps - 1) * (excess + last) / 2.0 + last / 2.0)


def settling_domain(sc, sigma):
    """Why an E1 state falls outside the zero-spacing and braking counts, or None.

    The counts hold for uncertainty-free dynamics when the log argument lies
    in (0, 1], the spacing error is at most v0 delta0 tau (1 / (1 - D0) - sigma),
    which is what rho_1 shrink steps close at the slowest contraction D_inf,
    and the spacing error exceeds the braking distance.

    Returns:
        str | None: ``"log_argument"``, ``"spacing_error"``, ``"braking_margin"``
            or None inside the domain.
    """
    _require_e1_state(sc)
    d = d_coefficients(sc)
    if not 0.0 < rho_one_argument(d, sigma) <= 1.0:
        return "log_argument"
    if sc.z1_0 > sc.speed_excess * sc.gp.tau * (1.0 / (1.0 - d.d0) - sigma):
        return "spacing_error"
    if sc.z1_0 <= braking_distance(sc):
        return "braking_margin"
    return None


def _require_e1_state(sc):
    if not sc.admits_e1():
        raise NotApplicable(f"state (v1={sc.v1_0}, gap={sc.s1_0}) is not on the safe-distance bound")


@dataclass(frozen=True)
class HorizonBounds:
    """Step counts of the transition and steady-state phases.

    ``rho_t`` is the transition count used in ``p_e1`` (see
    ``transition_bound``); ``rho_t_stated`` and ``rho_t_kinematic`` are its two
    ingredients. ``rho_1`` comes from the stated formula, from simulation when
    ``rho_1_source == "simulation"``, or is None when neither exists
    (``"unavailable"``), which leaves ``rho``, ``p_e1`` and the aggregates unset.
    """

    rho_t: int
    rho_1: int | None
    rho_2: int
    rho: int | None
    p_e1: int | None
    p_ei: tuple
    p_en_sum: int | None
    p_en_max: int | None
    rho_1_source: str = "formula"
    rho_1_argument: float | None = None
    rho_t_stated: int | None = None
    rho_t_kinematic: int | None = None
    situation: str = "E1"
    per_vehicle: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "p_ei", tuple(self.p_ei))
        if self.rho_1 is None:
            if self.rho is not None or self.p_e1 is not None:
                raise ValueError("an unavailable rho_1 leaves rho and p_e1 unset")
        else:
            if self.rho != self.rho_1 + self.rho_2:
                raise ValueError("rho must equal rho_1 + rho_2")
            if self.p_e1 != self.rho + self.rho_t:
                raise ValueError("p_e1 must equal rho + rho_t")
        if None in self.p_ei:
            if self.p_en_sum is not None or self.p_en_max is not None:
                raise ValueError("p_en_sum/p_en_max must stay unset while a p_ei is unavailable")
        elif self.p_en_sum != sum(self.p_ei) or self.p_en_max != max(self.p_ei):
            raise ValueError("p_en_sum/p_en_max must aggregate p_ei")

    @property
    def bounded(self):
        """True when every vehicle has a finite horizon bound."""
        return self.p_en_sum is not None

    def to_dict(self):
        doc = {
            "rho_t": self.rho_t,
            "rho_t_stated": self.rho_t_stated,
            "rho_t_kinematic": self.rho_t_kinematic,
            "rho_1": self.rho_1,
            "rho_1_source": self.rho_1_source,
            "rho_1_argument": self.rho_1_argument,
            "rho_2": self.rho_2,
            "rho": self.rho,
            "p_e1": self.p_e1,
            "p_ei": list(self.p_ei),
            "p_en_sum": self.p_en_sum,
            "p_en_max": self.p_en_max,
            "bounded": self.bounded,
            "situation": self.situation,
        }
        if self.per_vehicle:
            doc["per_vehicle"] = [hb.to_dict() for hb in self.per_vehicle]
        return doc


def horizon_bounds(sc, sigma, entry, fallback=True):
    """Bounds of one CAV: transition to E1, then the settling phase.

    Args:
        sc (ScenarioE1): Start state of the CAV.
        sigma (float): Spacing allowance of the zero-spacing count.
        entry (ScenarioE1): The E1 state strategy s1 reaches from ``sc``
            (``sc`` itself at E1); the settling counts are evaluated there.
        fallback (bool): Roll the shrink law when the formula is out of domain.

    Raises:
        OutOfDomain: Formula out of domain and ``fallback`` is False.
        DegenerateRate: The transition count divides by zero.
    """
    situation = classify_situation(sc)
    rho_t, stated, kinematic = transition_bound(sc)

    d = d_coefficients(entry)
    argument = rho_one_argument(d, sigma)
    source = "formula"
    try:
        rho_1 = rho_one(entry, sigma)
    except OutOfDomain:
        if not fallback:
            raise
        logger.info("rho_1 formula out of domain (argument %.6g); rolling the shrink law instead", argument)
        try:
            rho_1 = rho_one_empirical(entry)
            source = "simulation"
        except NoConvergence as exc:
            logger.warning("no zero-spacing step count for this vehicle: %s", exc)
            rho_1 = None
            source = "unavailable"
    rho_2 = rho_two(entry)
    rho = None if rho_1 is None else rho_1 + rho_2
    p_e1 = None if rho is None else rho + rho_t
    return HorizonBounds(
        rho_t=rho_t,
        rho_1=rho_1,
        rho_2=rho_2,
        rho=rho,
        p_e1=p_e1,
        p_ei=(p_e1,),
        p_en_sum=p_e1,
        p_en_max=p_e1,
        rho_1_source=source,
        rho_1_argument=argument,
        rho_t_stated=stated,
        rho_t_kinematic=kinematic,
        situation=situation,
    )


def vehicle_scenarios(platoon, vps, gp):
    """One E1-type scenario per CAV: its own state against the HDV speed v0."""
    gaps = platoon.gaps()
    return [
        ScenarioE1(v0=platoon.leader.v, v1_0=cav.v, s1_0=gap, vp=vp, gp=gp, u1_prev=cav.u_prev)
        for cav, vp, gap in zip(platoon.cavs, vps, gaps)
    ]


def theorem1_bounds(scenarios, entries, sigma, fallback=True):
    """Per-vehicle horizon bounds of a platoon and their sum and max.

    ``entries`` holds the E1 entry state of each scenario, in order.
    """
    if not scenarios:
        raise ValueError("platoon has no CAVs")
    if len(entries) != len(scenarios):
        raise ValueError(f"{len(scenarios)} scenarios but {len(entries)} entry states")
    per_vehicle = tuple(horizon_bounds(sc, sigma, entry, fallback) for sc, entry in zip(scenarios, entries))
    p_ei = tuple(hb.p_e1 for hb in per_vehicle)
    available = None not in p_ei
    return replace(
        per_vehicle[0],
        p_ei=p_ei,
        p_en_sum=sum(p_ei) if available else None,
        p_en_max=max(p_ei) if available else None,
        per_vehicle=per_vehicle,
    )


def blended_horizon(hb, lam):
    """ceil(lam * max + (1 - lam) * sum) of the per-vehicle bounds.

    Raises:
        NotApplicable: Some vehicle has no bound.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    if not hb.bounded:
        raise NotApplicable("no horizon bound: a vehicle's zero-spacing count is unavailable")
    return ceil_steps(lam * hb.p_en_max + (1.0 - lam) * hb.p_en_sum)
