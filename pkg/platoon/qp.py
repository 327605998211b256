"""Dense convex quadratic programs with two-sided linear constraints.

    minimize    1/2 x'Hx + g'x + c0
    subject to  l <= Cx <= u

``solve_qp`` runs an operator-splitting (ADMM) iteration on the
row-equilibrated problem, with the same splitting and step-size adaptation
as the OSQP solver, and polishes every few iterations by solving the KKT
system of the guessed active set. A point is accepted only when its scaled
KKT residual is below tolerance; infeasibility is declared only with a
Farkas certificate. ``solve_qp_reference`` is a slow dual projected-gradient
method for strictly convex programs, kept as an oracle.

Multiplier sign convention: y_i > 0 on an active upper bound, y_i < 0 on an
active lower bound, and Hx + g + C'y = 0 at the optimum.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import InfeasibleProblem, MaxIterations

logger = logging.getLogger(__name__)

KKT_TOL = 1e-8
CERTIFICATE_GAP = 1e-8
CERTIFICATE_RESIDUAL = 1e-6
SIGMA = 1e-6
ALPHA = 1.6
RHO = 0.1
RHO_MIN = 1e-6
RHO_MAX = 1e6
RHO_EQ_SCALE = 1e3
CHECK_EVERY = 25
POLISH_DELTA = 1e-7
POLISH_REFINE = 10
ITERATIONS_PER_DIMENSION = 50

STATUS_OPTIMAL = "optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_MAX_ITERATIONS = "max_iterations"


def _inf_norm(a):
    return float(np.max(np.abs(a))) if np.size(a) else 0.0


@dataclass(frozen=True, eq=False)
class QuadraticProgram:
    """Convex QP data; H is symmetrized on construction."""

    H: np.ndarray
    g: np.ndarray
    C: np.ndarray
    l: np.ndarray
    u: np.ndarray
    c0: float = 0.0

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        n = H.shape[0]
        if H.shape != (n, n):
            raise ValueError(f"H must be square, got shape {H.shape}")
        if _inf_norm(H - H.T) > 1e-10 * max(1.0, _inf_norm(H)):
            raise ValueError("H must be symmetric")
        g = np.asarray(self.g, dtype=float).reshape(-1)
        C = np.asarray(self.C, dtype=float).reshape(-1, n)
        l = np.asarray(self.l, dtype=float).reshape(-1)
        u = np.asarray(self.u, dtype=float).reshape(-1)
        if g.shape != (n,):
            raise ValueError(f"g must have length {n}, got {g.shape[0]}")
        if l.shape != (C.shape[0],) or u.shape != (C.shape[0],):
            raise ValueError(f"l and u must have one entry per constraint row ({C.shape[0]})")
        if np.isnan(l).any() or np.isnan(u).any() or np.isposinf(l).any() or np.isneginf(u).any():
            raise ValueError("bounds must not be NaN, and l < +inf, u > -inf")
        object.__setattr__(self, "H", 0.5 * (H + H.T))
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "l", l)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "c0", float(self.c0))

    @property
    def n(self):
        return self.H.shape[0]

    @property
    def m(self):
        return self.C.shape[0]

    def objective(self, x):
        return float(0.5 * x @ self.H @ x + self.g @ x + self.c0)

    def gradient(self, x):
        return self.H @ x + self.g


@dataclass(frozen=True)
class KktResidual:
    """Scaled infinity-norm KKT residuals of a primal-dual pair."""

    stationarity: float
    primal: float
    dual: float
    complementarity: float

    @property
    def worst(self):
        return max(self.stationarity, self.primal, self.dual, self.complementarity)

    def to_dict(self):
        return {
            "stationarity": self.stationarity,
            "primal": self.primal,
            "dual": self.dual,
            "complementarity": self.complementarity,
        }


def kkt_residual(qp, x, y):
    """Stationarity, primal feasibility, dual sign and complementarity residuals.

    Each component is scaled by the magnitude of the terms it compares, so
    the residual is dimensionless.
    """
    Cx = qp.C @ x
    Hx = qp.H @ x
    Cty = qp.C.T @ y
    stationarity = _inf_norm(Hx + qp.g + Cty) / (1.0 + max(_inf_norm(Hx), _inf_norm(qp.g), _inf_norm(Cty)))

    finite_l, finite_u = np.isfinite(qp.l), np.isfinite(qp.u)
    bound_scale = max(_inf_norm(qp.l[finite_l]), _inf_norm(qp.u[finite_u]))
    row_scale = 1.0 + max(_inf_norm(Cx), bound_scale)
    violation = np.maximum(np.maximum(Cx - qp.u, qp.l - Cx), 0.0)
    primal = _inf_norm(violation) / row_scale

    y_upper, y_lower = np.maximum(y, 0.0), np.maximum(-y, 0.0)
    dual = max(_inf_norm(y_upper[~finite_u]), _inf_norm(y_lower[~finite_l])) / (1.0 + _inf_norm(y))

    slack_upper = np.where(finite_u, qp.u - Cx, 0.0)
    slack_lower = np.where(finite_l, Cx - qp.l, 0.0)
    complementarity = max(
        _inf_norm(y_upper * np.abs(slack_upper)), _inf_norm(y_lower * np.abs(slack_lower))
    ) / ((1.0 + _inf_norm(y)) * row_scale)
    return KktResidual(stationarity, primal, dual, complementarity)


@dataclass(frozen=True, eq=False)
class InfeasibilityCertificate:
    """Farkas multipliers proving l <= Cx <= u has no solution.

    ``upper`` and ``lower`` are non-negative with max-norm 1;
    C'(upper - lower) vanishes up to ``residual`` while
    l'lower - u'upper = ``gap`` > 0.
    """

    upper: np.ndarray
    lower: np.ndarray
    gap: float
    residual: float

    def is_valid(self, gap_tol=CERTIFICATE_GAP, residual_tol=CERTIFICATE_RESIDUAL):
        return self.gap > gap_tol and self.residual <= residual_tol * self.gap

    def to_dict(self):
        return {"gap": self.gap, "residual": self.residual}


def _certificate(qp, direction):
    scale = _inf_norm(direction)
    if scale == 0.0:
        return None
    w = direction / scale
    upper, lower = np.maximum(w, 0.0), np.maximum(-w, 0.0)
    finite_l, finite_u = np.isfinite(qp.l), np.isfinite(qp.u)
    if _inf_norm(upper[~finite_u]) > 1e-9 or _inf_norm(lower[~finite_l]) > 1e-9:
        return None
    upper = np.where(finite_u, upper, 0.0)
    lower = np.where(finite_l, lower, 0.0)
    gap = float(np.where(finite_l, qp.l, 0.0) @ lower - np.where(finite_u, qp.u, 0.0) @ upper)
    residual = _inf_norm(qp.C.T @ (upper - lower))
    return InfeasibilityCertificate(upper=upper, lower=lower, gap=gap, residual=residual)


def _bound_certificate(qp):
    """Certificate for a row whose bounds cross or whose zero row excludes 0."""
    zero_rows = np.all(qp.C == 0.0, axis=1)
    crossing = np.where(qp.l > qp.u, qp.l - qp.u, 0.0)
    excluded = np.where(zero_rows, np.maximum(qp.l, -qp.u), 0.0)
    worst = np.maximum(crossing, excluded)
    if not np.size(worst) or worst.max() <= 0.0:
        return None
    i = int(np.argmax(worst))
    upper, lower = np.zeros(qp.m), np.zeros(qp.m)
    if crossing[i] >= excluded[i]:
        upper[i] = lower[i] = 1.0
    elif qp.l[i] > 0.0:
        lower[i] = 1.0
    else:
        upper[i] = 1.0
    return _certificate_from_parts(qp, upper, lower)


def _certificate_from_parts(qp, upper, lower):
    gap = float(np.where(lower > 0, qp.l, 0.0) @ lower - np.where(upper > 0, qp.u, 0.0) @ upper)
    residual = _inf_norm(qp.C.T @ (upper - lower))
    return InfeasibilityCertificate(upper=upper, lower=lower, gap=gap, residual=residual)


@dataclass(frozen=True, eq=False)
class QpResult:
    """Outcome of ``solve_qp``; on max_iterations ``x`` is the best iterate."""

    x: np.ndarray
    y: np.ndarray
    status: str
    objective: float
    iterations: int
    kkt: KktResidual | None = None
    certificate: InfeasibilityCertificate | None = None
    polished: bool = False
    rho_updates: int = field(default=0, repr=False)

    @property
    def optimal(self):
        return self.status == STATUS_OPTIMAL

    def raise_for_status(self, payload=None):
        """Raise the matching ``SolverFailure`` unless optimal.

        Args:
            payload: Object attached to the exception; defaults to this result.
        """
        attached = self if payload is None else payload
        if self.status == STATUS_INFEASIBLE:
            gap = self.certificate.gap if self.certificate is not None else float("nan")
            raise InfeasibleProblem(f"QP infeasible (certificate gap {gap:.3g})", result=attached)
        if self.status == STATUS_MAX_ITERATIONS:
            worst = self.kkt.worst if self.kkt is not None else float("nan")
            raise MaxIterations(
                f"QP not solved in {self.iterations} iterations (KKT residual {worst:.3g})", result=attached
            )


def _polish(qp, x, z, y):
    """Solve the equality-constrained KKT system of the guessed active set."""
    n = qp.n
    finite_l, finite_u = np.isfinite(qp.l), np.isfinite(qp.u)
    equality = finite_l & finite_u & (qp.u - qp.l <= 1e-12 * np.maximum(1.0, np.abs(qp.l)))
    lower = finite_l & (z - qp.l < -y)
    upper = finite_u & (qp.u - z < y)
    both = lower & upper
    lower = (lower & ~both) | (both & (y < 0))
    upper = ((upper & ~both) | (both & (y >= 0)) | equality) & ~lower
    rows = np.flatnonzero(lower | upper)
    targets = np.where(lower[rows], qp.l[rows], qp.u[rows])
    A = qp.C[rows]
    k = rows.size
    K = np.block([[qp.H, A.T], [A, np.zeros((k, k))]])
    K_reg = K + np.diag(np.concatenate([np.full(n, POLISH_DELTA), np.full(k, -POLISH_DELTA)]))
    rhs = np.concatenate([-qp.g, targets])
    try:
        factor = linalg.lu_factor(K_reg)
    except (linalg.LinAlgError, ValueError):
        return None
    solution = linalg.lu_solve(factor, rhs)
    for _ in range(POLISH_REFINE):
        residual = rhs - K @ solution
        if _inf_norm(residual) <= 1e-15 * (1.0 + _inf_norm(rhs)):
            break
        solution = solution + linalg.lu_solve(factor, residual)
    x_polished = solution[:n]
    y_polished = np.zeros(qp.m)
    y_polished[rows] = solution[n:]
    return x_polished, y_polished


def _rho_vector(qp, rho):
    finite_l, finite_u = np.isfinite(qp.l), np.isfinite(qp.u)
    rho_vec = np.full(qp.m, rho)
    rho_vec[finite_l & finite_u & (qp.u - qp.l <= 1e-12 * np.maximum(1.0, np.abs(qp.l)))] = rho * RHO_EQ_SCALE
    rho_vec[~finite_l & ~finite_u] = RHO_MIN
    return rho_vec


def _factor(H, Cs, rho_vec):
    M = H + SIGMA * np.eye(H.shape[0]) + Cs.T @ (rho_vec[:, None] * Cs)
    return linalg.cho_factor(M)


def solve_qp(qp, warm_start=None, max_iter=None, tol=KKT_TOL):
    """Solve a convex QP to a scaled KKT residual of ``tol``.

    Args:
        qp (QuadraticProgram): Problem data; H must be positive semidefinite.
        warm_start (tuple | None): Initial (x, y) pair.
        max_iter (int | None): Iteration budget; defaults to 50 * (n + m).
        tol (float): KKT acceptance threshold.

    Returns:
        QpResult: Status ``optimal``, ``infeasible`` (with a certificate) or
        ``max_iterations`` (with the iterate of smallest KKT residual).
    """
    n, m = qp.n, qp.m
    budget = max(max_iter if max_iter is not None else ITERATIONS_PER_DIMENSION * (n + m), 1)

    bound_cert = _bound_certificate(qp) if m else None
    if bound_cert is not None:
        logger.debug("bounds of one constraint row exclude every point (gap %.3g)", bound_cert.gap)
        return QpResult(
            x=np.zeros(n),
            y=np.zeros(m),
            status=STATUS_INFEASIBLE,
            objective=float("nan"),
            iterations=0,
            certificate=bound_cert,
        )

    row_norms = np.max(np.abs(qp.C), axis=1) if m else np.zeros(0)
    e = np.where(row_norms > 0, 1.0 / np.where(row_norms > 0, row_norms, 1.0), 1.0)
    Cs = qp.C * e[:, None]
    ls, us = qp.l * e, qp.u * e

    if warm_start is not None:
        x = np.asarray(warm_start[0], dtype=float).copy()
        y = np.asarray(warm_start[1], dtype=float) / e if warm_start[1] is not None else np.zeros(m)
    else:
        x, y = np.zeros(n), np.zeros(m)
    z = np.clip(Cs @ x, ls, us)

    rho = RHO
    rho_vec = _rho_vector(qp, rho)
    factor = _factor(qp.H, Cs, rho_vec)
    rho_updates = 0
    best = None

    for iteration in range(1, budget + 1):
        rhs = SIGMA * x - qp.g + Cs.T @ (rho_vec * z - y)
        x_tilde = linalg.cho_solve(factor, rhs)
        z_tilde = Cs @ x_tilde
        z_relaxed = ALPHA * z_tilde + (1.0 - ALPHA) * z
        x = ALPHA * x_tilde + (1.0 - ALPHA) * x
        z_next = np.clip(z_relaxed + y / rho_vec, ls, us)
        y_next = y + rho_vec * (z_relaxed - z_next)
        delta_y = y_next - y
        z, y = z_next, y_next

        if iteration % CHECK_EVERY and iteration != budget:
            continue

        y_orig = e * y
        kkt = kkt_residual(qp, x, y_orig)
        if best is None or kkt.worst < best[2].worst:
            best = (x.copy(), y_orig.copy(), kkt)
        if kkt.worst <= tol:
            return QpResult(x, y_orig, STATUS_OPTIMAL, qp.objective(x), iteration, kkt, rho_updates=rho_updates)

        polished = _polish(qp, x, z / e if m else z, y_orig)
        if polished is not None:
            kkt_polished = kkt_residual(qp, *polished)
            if kkt_polished.worst < best[2].worst:
                best = (polished[0], polished[1], kkt_polished)
            if kkt_polished.worst <= tol:
                logger.debug("polished solution accepted after %d iterations", iteration)
                return QpResult(
                    polished[0],
                    polished[1],
                    STATUS_OPTIMAL,
                    qp.objective(polished[0]),
                    iteration,
                    kkt_polished,
                    polished=True,
                    rho_updates=rho_updates,
                )

        if m:
            certificate = _certificate(qp, e * delta_y)
            if certificate is not None and certificate.is_valid():
                logger.debug("infeasibility certificate after %d iterations (gap %.3g)", iteration, certificate.gap)
                return QpResult(
                    x,
                    y_orig,
                    STATUS_INFEASIBLE,
                    float("nan"),
                    iteration,
                    kkt,
                    certificate=certificate,
                    rho_updates=rho_updates,
                )

            Csx = Cs @ x
            primal_res = _inf_norm(Csx - z) / max(_inf_norm(Csx), _inf_norm(z), 1e-12)
            Hx, Csty = qp.H @ x, Cs.T @ y
            dual_res = _inf_norm(Hx + qp.g + Csty) / max(_inf_norm(Hx), _inf_norm(Csty), _inf_norm(qp.g), 1e-12)
            if primal_res > 0 and dual_res > 0:
                rho_new = float(np.clip(rho * np.sqrt(primal_res / dual_res), RHO_MIN, RHO_MAX))
                if rho_new > 5.0 * rho or rho_new < 0.2 * rho:
                    rho = rho_new
                    rho_vec = _rho_vector(qp, rho)
                    factor = _factor(qp.H, Cs, rho_vec)
                    rho_updates += 1

    x_best, y_best, kkt_best = best
    logger.info("QP budget of %d iterations exhausted; best KKT residual %.3g", budget, kkt_best.worst)
    return QpResult(
        x_best,
        y_best,
        STATUS_MAX_ITERATIONS,
        qp.objective(x_best),
        budget,
        kkt_best,
        rho_updates=rho_updates,
    )


def solve_qp_reference(qp, max_iter=200_000, tol=1e-13):
    """Accelerated projected gradient on the dual of a strictly convex QP.

    Two-sided rows are split into one-sided inequalities Ax <= b. Slow, but
    every step is elementary, which makes it a trustworthy oracle.

    Returns:
        tuple[np.ndarray, np.ndarray]: Primal solution and two-sided
        multipliers in the ``solve_qp`` sign convention.

    Raises:
        ValueError: If H is not positive definite.
    """
    try:
        chol = linalg.cho_factor(qp.H)
    except linalg.LinAlgError as exc:
        raise ValueError("reference solver needs a positive definite H") from exc
    has_upper, has_lower = np.isfinite(qp.u), np.isfinite(qp.l)
    A = np.vstack([qp.C[has_upper], -qp.C[has_lower]])
    b = np.concatenate([qp.u[has_upper], -qp.l[has_lower]])
    H_inv_g = linalg.cho_solve(chol, qp.g)
    if A.shape[0] == 0:
        return -H_inv_g, np.zeros(qp.m)

    H_inv_At = linalg.cho_solve(chol, A.T)
    M = A @ H_inv_At
    offset = b + A @ H_inv_g
    lipschitz = max(float(linalg.eigvalsh(M)[-1]), 1e-12)

    lam = np.zeros(A.shape[0])
    w = lam.copy()
    t = 1.0
    for _ in range(max_iter):
        lam_next = np.maximum(w - (offset + M @ w) / lipschitz, 0.0)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        if (w - lam_next) @ (lam_next - lam) > 0:
            t_next = 1.0
            w = lam_next
        else:
            w = lam_next + ((t - 1.0) / t_next) * (lam_next - lam)
        step = _inf_norm(lam_next - lam)
        lam, t = lam_next, t_next
        if step <= tol * (1.0 + _inf_norm(lam)):
            break

    x = -(H_inv_g + H_inv_At @ lam)
    n_upper = int(has_upper.sum())
    y = np.zeros(qp.m)
    y[has_upper] += lam[:n_upper]
    y[has_lower] -= lam[n_upper:]
    return x, y
