"""MPC for a CAV platoon behind one HDV, condensed to a dense QP.

Each CAV has the state s = (x, v, u_prev), so the uncertainty term of the
dynamics stays linear and the whole horizon is an affine map of the stacked
controls. Decision variable ``U[i * P + j]`` is the control of CAV i at
prediction step j.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .core import (
    PlatoonState,
    VehicleState,
    control_uncertainty,
    predict_hdv,
    predict_hdv_trajectory,
    step_cav,
    step_constant_speed,
)
from .errors import SolverFailure
from .feasibility import platoon_envelopes
from .qp import QuadraticProgram, solve_qp
from .traces import trace_frame, trace_rows

logger = logging.getLogger(__name__)

PSD_FLOOR = -1e-10


def _as_weight(value, n, name):
    matrix = np.asarray(value, dtype=float)
    if matrix.ndim == 0:
        matrix = float(matrix) * np.eye(n)
    if matrix.shape != (n, n):
        raise ValueError(f"{name} must be a scalar or a {n}x{n} matrix, got shape {matrix.shape}")
    return matrix


@dataclass(frozen=True, eq=False)
class MpcWeights:
    """Spacing-error, speed-error and control-effort weights of the cost."""

    q_z: np.ndarray
    q_zp: np.ndarray
    omega1: float = 1.0

    def __post_init__(self):
        for name in ("q_z", "q_zp"):
            matrix = np.asarray(getattr(self, name), dtype=float)
            if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
                raise ValueError(f"{name} must be a square matrix")
            if not np.allclose(matrix, matrix.T, atol=1e-12):
                raise ValueError(f"{name} must be symmetric")
            if linalg.eigvalsh(matrix)[0] < PSD_FLOOR:
                raise ValueError(f"{name} must be positive semidefinite")
            object.__setattr__(self, name, matrix)
        if self.q_z.shape != self.q_zp.shape:
            raise ValueError("q_z and q_zp must have the same size")
        if self.omega1 < 0:
            raise ValueError(f"omega1 must be non-negative, got {self.omega1}")

    @classmethod
    def uniform(cls, n, q_z=1.0, q_zp=1.0, omega1=1.0):
        """Scalars become multiples of the identity; matrices pass through."""
        return cls(q_z=_as_weight(q_z, n, "q_z"), q_zp=_as_weight(q_zp, n, "q_zp"), omega1=omega1)

    @property
    def n(self):
        return self.q_z.shape[0]


@dataclass(frozen=True)
class TerminalSet:
    """Per-vehicle boxes on the spacing and speed errors at step k + P."""

    zeta_x: float = 0.5
    zeta_v: float = 0.2

    def __post_init__(self):
        if self.zeta_x <= 0 or self.zeta_v <= 0:
            raise ValueError(f"terminal half-widths must be positive, got {self.zeta_x}, {self.zeta_v}")


@dataclass(frozen=True, eq=False)
class MpcProblem:
    """One MPC solve: horizon, current platoon state and HDV prediction.

    ``hdv_positions`` and ``hdv_speeds`` cover prediction steps 0..P.
    """

    horizon: int
    initial: PlatoonState
    hdv_positions: np.ndarray
    hdv_speeds: np.ndarray
    weights: MpcWeights
    terminal: TerminalSet
    vps: tuple
    gp: object
    terminal_enabled: bool = True

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError(f"horizon must be at least 1, got {self.horizon}")
        object.__setattr__(self, "vps", tuple(self.vps))
        object.__setattr__(self, "hdv_positions", np.asarray(self.hdv_positions, dtype=float))
        object.__setattr__(self, "hdv_speeds", np.asarray(self.hdv_speeds, dtype=float))
        if len(self.hdv_positions) < self.horizon + 1 or len(self.hdv_speeds) < self.horizon + 1:
            raise ValueError(f"HDV prediction must cover {self.horizon + 1} steps")
        if len(self.vps) != self.initial.n_cavs:
            raise ValueError(f"expected {self.initial.n_cavs} vehicle parameter blocks, got {len(self.vps)}")
        if self.weights.n != self.initial.n_cavs:
            raise ValueError(f"weights are {self.weights.n}x{self.weights.n} for {self.initial.n_cavs} CAVs")

    @property
    def n_cavs(self):
        return self.initial.n_cavs

    @property
    def n_controls(self):
        return self.n_cavs * self.horizon


@dataclass(frozen=True, eq=False)
class CondensedMpc:
    """QP of one MPC solve plus the affine maps from controls to states.

    ``x_const[i, p] + x_gain[i, p] @ U`` is the position of CAV i at
    prediction step p; speeds likewise.
    """

    qp: QuadraticProgram
    x_const: np.ndarray
    x_gain: np.ndarray
    v_const: np.ndarray
    v_gain: np.ndarray
    row_labels: tuple

    def positions(self, U):
        return self.x_const + self.x_gain @ U

    def speeds(self, U):
        return self.v_const + self.v_gain @ U


@dataclass(frozen=True, eq=False)
class MpcSolution:
    controls: np.ndarray
    positions: np.ndarray
    speeds: np.ndarray
    objective: float
    kkt_residual: float
    status: str
    qp_result: object = field(default=None, repr=False)

    @property
    def first_controls(self):
        return tuple(float(u) for u in self.controls[:, 0])


def constant_speed_prediction(leader, horizon, tau):
    """HDV positions and speeds over steps 0..horizon at its current speed."""
    steps = np.arange(horizon + 1)
    return leader.x + tau * leader.v * steps, np.full(horizon + 1, leader.v)


def newell_prediction(history, newell, k, horizon, tau, start_step=0):
    positions, speeds = predict_hdv_trajectory(history, newell, k, horizon, tau, start_step)
    return np.asarray(positions), np.asarray(speeds)


def _vehicle_maps(state, vp, gp, horizon):
    tau = gp.tau
    A = np.array(
        [
            [1.0, tau - 0.5 * tau**2 * vp.eps, 0.5 * tau**2 * vp.eta],
            [0.0, 1.0 - tau * vp.eps, tau * vp.eta],
            [0.0, 0.0, 0.0],
        ]
    )
    B = np.array([0.5 * tau**2 * (1.0 - vp.eta), tau * (1.0 - vp.eta), 1.0])
    const = np.zeros((horizon + 1, 3))
    gain = np.zeros((horizon + 1, 3, horizon))
    const[0] = (state.x, state.v, state.u_prev)
    for p in range(1, horizon + 1):
        const[p] = A @ const[p - 1]
        gain[p] = A @ gain[p - 1]
        gain[p, :, p - 1] += B
    return const, gain


def assemble(problem):
    """Condense the MPC problem into a QP over the stacked controls.

    Rows per prediction step: N control boxes, N speed boxes and N safety
    rows; with the terminal set enabled, 2N more rows bound the spacing and
    speed errors at step P. All rows are two-sided (infinite where open).
    """
    P, N = problem.horizon, problem.n_cavs
    gp = problem.gp
    tau = gp.tau
    n_u = N * P

    x_const = np.zeros((N, P + 1))
    v_const = np.zeros((N, P + 1))
    x_gain = np.zeros((N, P + 1, n_u))
    v_gain = np.zeros((N, P + 1, n_u))
    for i, (cav, vp) in enumerate(zip(problem.initial.cavs, problem.vps)):
        const, gain = _vehicle_maps(cav, vp, gp, P)
        x_const[i], v_const[i] = const[:, 0], const[:, 1]
        x_gain[i, :, i * P : (i + 1) * P] = gain[:, 0, :]
        v_gain[i, :, i * P : (i + 1) * P] = gain[:, 1, :]

    hdv_x = problem.hdv_positions[: P + 1]
    hdv_v = problem.hdv_speeds[: P + 1]
    spread = (gp.delta1 + gp.delta2) * tau
    # Safety slack g and tracking errors as affine maps, shape (N, P+1[, n_u]).
    g_const = np.zeros((N, P + 1))
    g_gain = np.zeros((N, P + 1, n_u))
    dv_const = np.zeros((N, P + 1))
    dv_gain = np.zeros((N, P + 1, n_u))
    for i, vp in enumerate(problem.vps):
        if i == 0:
            lead_xc, lead_xg, lead_vc, lead_vg = hdv_x, 0.0, hdv_v, 0.0
        else:
            lead_xc, lead_xg = x_const[i - 1], x_gain[i - 1]
            lead_vc, lead_vg = v_const[i - 1], v_gain[i - 1]
        g_const[i] = lead_xc - x_const[i] - vp.length - spread * v_const[i] + gp.delta2 * tau * lead_vc
        g_gain[i] = lead_xg - x_gain[i] - spread * v_gain[i] + gp.delta2 * tau * lead_vg
        dv_const[i] = lead_vc - v_const[i]
        dv_gain[i] = lead_vg - v_gain[i]
    z_const = g_const - gp.delta_margin

    rows, lower, upper, labels = [], [], [], []
    for p in range(1, P + 1):
        for i, vp in enumerate(problem.vps):
            row = np.zeros(n_u)
            row[i * P + p - 1] = 1.0
            rows.append(row)
            lower.append(vp.a_min)
            upper.append(vp.a_max)
            labels.append(("control", p, i + 1))
        for i in range(N):
            rows.append(v_gain[i, p])
            lower.append(gp.v_min - v_const[i, p])
            upper.append(gp.v_max - v_const[i, p])
            labels.append(("speed", p, i + 1))
        for i in range(N):
            rows.append(g_gain[i, p])
            lower.append(-g_const[i, p])
            upper.append(np.inf)
            labels.append(("safety", p, i + 1))
    if problem.terminal_enabled:
        zx, zv = problem.terminal.zeta_x, problem.terminal.zeta_v
        for i in range(N):
            rows.append(g_gain[i, P])
            lower.append(-zx - z_const[i, P])
            upper.append(zx - z_const[i, P])
            labels.append(("terminal_spacing", P, i + 1))
        for i in range(N):
            rows.append(dv_gain[i, P])
            lower.append(-zv - dv_const[i, P])
            upper.append(zv - dv_const[i, P])
            labels.append(("terminal_speed", P, i + 1))

    w = problem.weights
    H = tau**2 * w.omega1 * np.eye(n_u)
    grad = np.zeros(n_u)
    c0 = 0.0
    for p in range(1, P + 1):
        Ez, Ev = g_gain[:, p, :], dv_gain[:, p, :]
        zc, vc = z_const[:, p], dv_const[:, p]
        H += Ez.T @ w.q_z @ Ez + Ev.T @ w.q_zp @ Ev
        grad += Ez.T @ w.q_z @ zc + Ev.T @ w.q_zp @ vc
        c0 += 0.5 * (zc @ w.q_z @ zc + vc @ w.q_zp @ vc)

    qp = QuadraticProgram(
        H=H,
        g=grad,
        C=np.array(rows).reshape(len(rows), n_u),
        l=np.array(lower, dtype=float),
        u=np.array(upper, dtype=float),
        c0=c0,
    )
    return CondensedMpc(
        qp=qp, x_const=x_const, x_gain=x_gain, v_const=v_const, v_gain=v_gain, row_labels=tuple(labels)
    )


def rollout_plan(problem, controls):
    """Positions and speeds (N x (P+1)) from a fresh ``step_cav`` rollout."""
    controls = np.asarray(controls, dtype=float).reshape(problem.n_cavs, problem.horizon)
    positions = np.zeros((problem.n_cavs, problem.horizon + 1))
    speeds = np.zeros_like(positions)
    for i, (cav, vp) in enumerate(zip(problem.initial.cavs, problem.vps)):
        state = cav
        positions[i, 0], speeds[i, 0] = state.x, state.v
        for p in range(problem.horizon):
            state = step_cav(state, float(controls[i, p]), vp, problem.gp)
            positions[i, p + 1], speeds[i, p + 1] = state.x, state.v
    return positions, speeds


def explicit_cost(problem, controls):
    """Evaluate the MPC cost by rolling the controls forward step by step."""
    controls = np.asarray(controls, dtype=float).reshape(problem.n_cavs, problem.horizon)
    gp, w = problem.gp, problem.weights
    positions, speeds = rollout_plan(problem, controls)
    cost = 0.5 * gp.tau**2 * w.omega1 * float(np.sum(controls**2))
    for p in range(1, problem.horizon + 1):
        lead_x = np.concatenate([[problem.hdv_positions[p]], positions[:-1, p]])
        lead_v = np.concatenate([[problem.hdv_speeds[p]], speeds[:-1, p]])
        z = np.array(
            [
                lead_x[i] - positions[i, p] - vp.length - gp.delta1 * gp.tau * speeds[i, p]
                - gp.delta2 * gp.tau * (speeds[i, p] - lead_v[i]) - gp.delta_margin
                for i, vp in enumerate(problem.vps)
            ]
        )
        z_prime = lead_v - speeds[:, p]
        cost += 0.5 * (z @ w.q_z @ z + z_prime @ w.q_zp @ z_prime)
    return cost


def constraint_violation(problem, controls):
    """Largest violation of the control, speed, safety and terminal constraints."""
    condensed = assemble(problem)
    U = np.asarray(controls, dtype=float).reshape(-1)
    Cx = condensed.qp.C @ U
    violation = np.maximum(np.maximum(Cx - condensed.qp.u, condensed.qp.l - Cx), 0.0)
    return float(violation.max()) if violation.size else 0.0


def _solution(problem, condensed, result):
    U = result.x
    controls = U.reshape(problem.n_cavs, problem.horizon)
    return MpcSolution(
        controls=controls,
        positions=condensed.positions(U),
        speeds=condensed.speeds(U),
        objective=result.objective,
        kkt_residual=result.kkt.worst if result.kkt is not None else float("nan"),
        status=result.status,
        qp_result=result,
    )


def mpc_step(problem, warm_start=None):
    """Solve one MPC problem and return the first control of every CAV.

    Returns:
        tuple: (first controls, MpcSolution).

    Raises:
        InfeasibleProblem: The QP has no feasible point; the MpcSolution is
            attached as ``result``.
        MaxIterations: The solver ran out of iterations.
    """
    condensed = assemble(problem)
    result = solve_qp(condensed.qp, warm_start=warm_start)
    solution = _solution(problem, condensed, result)
    result.raise_for_status(payload=solution)
    return solution.first_controls, solution


@dataclass(frozen=True)
class MpcSettings:
    """Everything a receding-horizon run needs besides the initial state.

    ``prediction`` is ``"constant"`` or ``"newell"``; the latter moves the
    HDV by the Newell rule from ``upstream`` positions and predicts it the
    same way.
    """

    horizon: int
    weights: MpcWeights
    terminal: TerminalSet
    vps: tuple
    gp: object
    terminal_enabled: bool = True
    prediction: str = "constant"
    newell: object = None
    upstream: tuple = field(default_factory=tuple, repr=False)

    def __post_init__(self):
        if self.prediction not in ("constant", "newell"):
            raise ValueError(f"prediction must be 'constant' or 'newell', got {self.prediction!r}")
        if self.prediction == "newell" and (self.newell is None or not self.upstream):
            raise ValueError("newell prediction needs Newell parameters and an upstream trajectory")
        object.__setattr__(self, "vps", tuple(self.vps))
        object.__setattr__(self, "upstream", tuple(self.upstream))

    def problem(self, state, hdv_positions, hdv_speeds):
        return MpcProblem(
            horizon=self.horizon,
            initial=state,
            hdv_positions=hdv_positions,
            hdv_speeds=hdv_speeds,
            weights=self.weights,
            terminal=self.terminal,
            vps=self.vps,
            gp=self.gp,
            terminal_enabled=self.terminal_enabled,
        )


@dataclass(frozen=True, eq=False)
class RecedingHorizonRun:
    frame: object
    states: tuple
    infeasible_steps: tuple
    fallback_steps: tuple
    stopped_early: bool = False

    @property
    def first_infeasible(self):
        return self.infeasible_steps[0] if self.infeasible_steps else None

    @property
    def steps(self):
        return len(self.states) - 1


def _newell_leader(settings, k):
    x = predict_hdv(settings.upstream, settings.newell, k)
    x_next = predict_hdv(settings.upstream, settings.newell, k + 1)
    return VehicleState(x=x, v=(x_next - x) / settings.gp.tau, u_prev=0.0)


def _hdv_prediction(settings, state):
    if settings.prediction == "newell":
        return newell_prediction(settings.upstream, settings.newell, state.step, settings.horizon, settings.gp.tau)
    return constant_speed_prediction(state.leader, settings.horizon, settings.gp.tau)


def receding_horizon_run(initial, steps, settings):
    """Solve, apply the first controls, advance; repeat for ``steps`` steps.

    A failed solve falls back to the midpoint of each CAV's feasible
    interval, and the event is recorded. The run stops early if the platoon
    order breaks, which only a fallback into an empty interval can cause.

    Returns:
        RecedingHorizonRun: Trace frame, visited states and event steps.
    """
    gp, vps = settings.gp, settings.vps
    state = initial
    states = [state]
    rows = []
    infeasible, fallbacks = [], []
    warm = None
    stopped = False
    for _ in range(steps):
        positions, speeds = _hdv_prediction(settings, state)
        problem = settings.problem(state, positions, speeds)
        fallback = False
        try:
            controls, solution = mpc_step(problem, warm_start=warm)
            status, objective = solution.status, solution.objective
            shifted = np.hstack([solution.controls[:, 1:], solution.controls[:, -1:]]).reshape(-1)
            warm = (shifted, None)
        except SolverFailure as exc:
            logger.warning("step %d: %s; applying interval midpoints", state.step, exc)
            status = exc.result.status if exc.result is not None else "failed"
            objective = float("nan")
            fallback = True
            warm = None
            controls = None
            infeasible.append(state.step)
            fallbacks.append(state.step)

        if settings.prediction == "newell":
            leader_next = _newell_leader(settings, state.step + 1)
        else:
            leader_next = step_constant_speed(state.leader, gp)
        if controls is None:
            committed = platoon_envelopes(state.leader, leader_next, state.cavs, vps, gp, lambda i, iv, cav: iv.midpoint)
        else:
            committed = platoon_envelopes(
                state.leader, leader_next, state.cavs, vps, gp, lambda i, iv, cav: controls[i]
            )
        applied = [u for _, u, _ in committed]
        deltas = [control_uncertainty(cav, u, vp) for cav, u, vp in zip(state.cavs, applied, vps)]
        rows.extend(trace_rows(state, vps, gp, applied, deltas, status, objective, fallback))
        try:
            state = state.advanced(leader_next, [nxt for _, _, nxt in committed])
        except ValueError as exc:
            logger.warning("step %d: platoon order broke (%s); stopping the run", state.step, exc)
            stopped = True
            break
        states.append(state)
    if stopped:
        rows = [row for row in rows if row["step"] < states[-1].step]
    rows.extend(trace_rows(states[-1], vps, gp, None, None, "none", float("nan"), False))
    return RecedingHorizonRun(
        frame=trace_frame(rows),
        states=tuple(states),
        infeasible_steps=tuple(infeasible),
        fallback_steps=tuple(fallbacks),
        stopped_early=stopped,
    )
