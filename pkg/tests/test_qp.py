import numpy as np
import pytest

from platoon.errors import InfeasibleProblem, MaxIterations
from platoon.qp import QpResult, QuadraticProgram, kkt_residual, solve_qp, solve_qp_reference


def _scalar_clamp():
    # minimize x^2/2 - 3x over 0 <= x <= 1
    return QuadraticProgram(H=[[1.0]], g=[-3.0], C=[[1.0]], l=[0.0], u=[1.0])


def _random_qp(seed, n=5, m=7):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n))
    C = np.vstack([np.eye(n), rng.normal(size=(m - n, n))])
    lower = -rng.uniform(0.1, 1.0, size=m)
    upper = rng.uniform(0.1, 1.0, size=m)
    upper[-1] = np.inf
    return QuadraticProgram(H=A @ A.T + np.eye(n), g=rng.normal(scale=5.0, size=n), C=C, l=lower, u=upper)


def test_scalar_clamp():
    result = solve_qp(_scalar_clamp())
    assert result.optimal
    assert result.x[0] == pytest.approx(1.0, abs=1e-7)
    assert result.y[0] == pytest.approx(2.0, abs=1e-6)
    assert result.objective == pytest.approx(-2.5, abs=1e-6)


def test_inactive_constraints_give_unconstrained_minimum():
    qp = QuadraticProgram(H=np.diag([2.0, 4.0]), g=[-2.0, -4.0], C=np.eye(2), l=[-10.0, -10.0], u=[10.0, 10.0])
    result = solve_qp(qp)
    assert result.optimal
    np.testing.assert_allclose(result.x, [1.0, 1.0], atol=1e-7)
    np.testing.assert_allclose(result.y, [0.0, 0.0], atol=1e-7)


@pytest.mark.parametrize("seed", range(6))
def test_matches_reference_solver(seed):
    qp = _random_qp(seed)
    result = solve_qp(qp)
    assert result.optimal
    assert result.kkt.worst <= 1e-8
    x_ref, y_ref = solve_qp_reference(qp)
    np.testing.assert_allclose(result.x, x_ref, atol=1e-5)
    assert result.objective == pytest.approx(qp.objective(x_ref), abs=1e-6)
    assert kkt_residual(qp, x_ref, y_ref).worst <= 1e-6


def test_warm_start_does_not_slow_down():
    qp = _random_qp(3)
    cold = solve_qp(qp)
    warm = solve_qp(qp, warm_start=(cold.x, cold.y))
    assert warm.optimal
    assert warm.iterations <= cold.iterations
    np.testing.assert_allclose(warm.x, cold.x, atol=1e-6)


def test_crossing_bounds_are_infeasible_immediately():
    qp = QuadraticProgram(H=[[1.0]], g=[0.0], C=[[1.0]], l=[2.0], u=[1.0])
    result = solve_qp(qp)
    assert result.status == "infeasible"
    assert result.iterations == 0
    assert result.certificate.is_valid()
    assert result.certificate.gap == pytest.approx(1.0)
    with pytest.raises(InfeasibleProblem):
        result.raise_for_status()


def test_conflicting_rows_are_certified_infeasible():
    qp = QuadraticProgram(
        H=[[1.0]], g=[0.0], C=[[1.0], [1.0]], l=[2.0, -np.inf], u=[np.inf, 1.0]
    )
    result = solve_qp(qp, max_iter=5000)
    assert result.status == "infeasible"
    assert result.certificate.is_valid()


def test_max_iterations_raises_with_payload():
    result = QpResult(x=np.zeros(1), y=np.zeros(1), status="max_iterations", objective=0.0, iterations=7)
    with pytest.raises(MaxIterations) as info:
        result.raise_for_status(payload="solution")
    assert info.value.result == "solution"


def test_kkt_residual_flags_non_stationary_point():
    qp = _scalar_clamp()
    assert kkt_residual(qp, np.array([1.0]), np.array([2.0])).worst == pytest.approx(0.0, abs=1e-12)
    assert kkt_residual(qp, np.array([0.5]), np.array([0.0])).stationarity > 0.1


def test_objective_and_gradient():
    qp = QuadraticProgram(H=np.diag([2.0, 4.0]), g=[1.0, -1.0], C=np.eye(2), l=[-1.0, -1.0], u=[1.0, 1.0], c0=3.0)
    x = np.array([1.0, 0.5])
    assert qp.objective(x) == pytest.approx(0.5 * (2.0 + 1.0) + 1.0 - 0.5 + 3.0)
    np.testing.assert_allclose(qp.gradient(x), [3.0, 1.0])


@pytest.mark.parametrize(
    "kwargs",
    [
        {"H": [[1.0, 2.0], [0.0, 1.0]], "g": [0.0, 0.0], "C": np.eye(2), "l": [0.0, 0.0], "u": [1.0, 1.0]},
        {"H": np.eye(2), "g": [0.0], "C": np.eye(2), "l": [0.0, 0.0], "u": [1.0, 1.0]},
        {"H": np.eye(2), "g": [0.0, 0.0], "C": np.eye(2), "l": [np.inf, 0.0], "u": [np.inf, 1.0]},
    ],
)
def test_quadratic_program_validation(kwargs):
    with pytest.raises(ValueError):
        QuadraticProgram(**kwargs)


def test_reference_solver_needs_positive_definite_hessian():
    qp = QuadraticProgram(H=np.zeros((1, 1)), g=[1.0], C=[[1.0]], l=[-1.0], u=[1.0])
    with pytest.raises(ValueError):
        solve_qp_reference(qp)
