import numpy as np
import pytest

from acopf_escape.acopf import NlpProblem, assemble_primal, start_to_point
from acopf_escape.caseio import flat_start
from acopf_escape.globalcheck import random_starts
from acopf_escape.ipm import CONVERGED, MAX_ITERATIONS, Multipliers, SolverOptions, kkt_residual, solve

from helpers import random_point


def quadratic(hess, lin, a_eq=None, b_eq=None, a_in=None, b_in=None, lower=None, upper=None):
    """min 1/2 x'Hx + q'x  s.t.  A_eq x = b_eq,  A_in x <= b_in,  bounds."""
    hess, lin = np.asarray(hess, float), np.asarray(lin, float)
    n = lin.size
    a_eq = np.zeros((0, n)) if a_eq is None else np.asarray(a_eq, float)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, float)
    a_in = np.zeros((0, n)) if a_in is None else np.asarray(a_in, float)
    b_in = np.zeros(0) if b_in is None else np.asarray(b_in, float)
    return NlpProblem(
        lower=np.full(n, -np.inf) if lower is None else np.asarray(lower, float),
        upper=np.full(n, np.inf) if upper is None else np.asarray(upper, float),
        funcs=lambda x: (0.5 * x @ hess @ x + lin @ x, a_eq @ x - b_eq, a_in @ x - b_in),
        grads=lambda x: (hess @ x + lin, a_eq, a_in),
        hess=lambda x, y, lam: hess.copy(),
        n_eq=b_eq.size,
        n_ineq=b_in.size,
    )


def test_equality_multiplier_sign():
    # min (x-2)^2 s.t. x - 1 = 0: stationarity 2(x-2) + y = 0 gives y = 2
    p = quadratic([[2.0]], [-4.0], a_eq=[[1.0]], b_eq=[1.0])
    sol = solve(p, np.array([5.0]))
    assert sol.status == CONVERGED
    assert sol.x[0] == pytest.approx(1.0, abs=1e-9)
    assert sol.y_eq[0] == pytest.approx(2.0, abs=1e-9)
    assert kkt_residual(p, [1.0], Multipliers(np.array([2.0]), np.zeros(0), np.zeros(1), np.zeros(1))) <= 1e-12


def test_bound_multiplier():
    p = quadratic([[2.0]], [0.0], lower=[1.0])
    loose = solve(p, np.array([3.0]))
    assert loose.converged
    # scaled complementarity z (x - 1) / (1 + z) <= tol bounds the gap by 1.5 tol
    assert 0.0 < loose.x[0] - 1.0 <= 1.5e-4
    tight = solve(p, np.array([3.0]), SolverOptions(tolerance=1e-8))
    assert tight.x[0] == pytest.approx(1.0, abs=1e-6)
    assert tight.z_lower[0] == pytest.approx(2.0, abs=1e-6)


def test_inequality_multiplier():
    # x >= 1 written as 1 - x <= 0
    p = quadratic([[2.0]], [0.0], a_in=[[-1.0]], b_in=[-1.0])
    sol = solve(p, np.array([3.0]), SolverOptions(tolerance=1e-8))
    assert sol.converged
    assert sol.y_ineq[0] == pytest.approx(2.0, abs=1e-6)


def test_equality_qp_closed_form(rng):
    n, m = 6, 2
    a = rng.normal(size=(n, n))
    hess = a @ a.T + n * np.eye(n)
    lin, a_eq, b_eq = rng.normal(size=n), rng.normal(size=(m, n)), rng.normal(size=m)
    kkt = np.block([[hess, a_eq.T], [a_eq, np.zeros((m, m))]])
    exact = np.linalg.solve(kkt, np.concatenate([-lin, b_eq]))
    sol = solve(quadratic(hess, lin, a_eq, b_eq), np.zeros(n))
    assert sol.converged
    np.testing.assert_allclose(sol.x, exact[:n], atol=1e-6)
    np.testing.assert_allclose(sol.y_eq, exact[n:], atol=1e-6)


def test_box_qp_closed_form():
    # separable: min sum (x_i - t_i)^2 on [0, 1]; solution clip(t), z = 2 |t - clip(t)|
    t = np.array([-0.5, 0.3, 1.7, 0.9])
    p = quadratic(2 * np.eye(4), -2 * t, lower=np.zeros(4), upper=np.ones(4))
    sol = solve(p, np.full(4, 0.5), SolverOptions(tolerance=1e-8))
    assert sol.converged
    np.testing.assert_allclose(sol.x, np.clip(t, 0, 1), atol=1e-6)
    np.testing.assert_allclose(sol.z_lower - sol.z_upper, 2 * (np.clip(t, 0, 1) - t), atol=1e-6)


def test_max_iterations_status(case9):
    p = assemble_primal(case9)
    sol = solve(p, start_to_point(case9, flat_start(case9)), SolverOptions(max_iterations=2))
    assert sol.status == MAX_ITERATIONS
    assert sol.kkt_residual > 1e-4


def test_options_validation():
    with pytest.raises(ValueError):
        SolverOptions(tolerance=0.0)
    with pytest.raises(ValueError):
        SolverOptions(max_iterations=0)


def test_start_dimension_checked(case9):
    with pytest.raises(ValueError):
        solve(assemble_primal(case9), np.zeros(3))


def test_case9_flat_start(case9):
    p = assemble_primal(case9)
    sol = solve(p, start_to_point(case9, flat_start(case9)))
    assert sol.converged
    # pypower runopf on case9 (PIPS, 1e-8 tolerances) gives 5296.686523629813
    assert sol.objective == pytest.approx(5296.686523629813, rel=1e-5)
    assert kkt_residual(p, sol.x, sol.multipliers) <= 1e-4


def test_case9_random_starts_self_check(case9):
    p = assemble_primal(case9)
    converged = 0
    for start in random_starts(case9, 10, seed=7):
        sol = solve(p, start_to_point(case9, start))
        assert sol.y_ineq.min(initial=0) >= -1e-12
        assert min(sol.z_lower.min(), sol.z_upper.min()) >= -1e-12
        if sol.converged:
            converged += 1
            assert kkt_residual(p, sol.x, sol.multipliers) <= 1e-4
    assert converged >= 5


def test_determinism(case9):
    p = assemble_primal(case9)
    x0 = start_to_point(case9, random_starts(case9, 1, seed=3)[0])
    a, b = solve(p, x0), solve(p, x0)
    assert a.iterations == b.iterations
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y_eq, b.y_eq)


def test_infeasible_point_has_large_residual(case9, rng):
    p = assemble_primal(case9)
    x = random_point(p, rng, angle=1.0)
    zero = Multipliers(np.zeros(p.n_eq), np.zeros(p.n_ineq), np.zeros(p.n), np.zeros(p.n))
    assert kkt_residual(p, x, zero) > 1e-4
