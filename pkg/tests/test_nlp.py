import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import cell_variation, random_single_step, single_step_grid

from fanreg import nlp
from fanreg.fan import table_curves
from fanreg.model import table_model
from fanreg.scheduler import SchedulingProblem, schedule_reserves
from fanreg.verify import X0, demo_scenario


def quad(center, lb=None, ub=None):
    c = np.asarray(center, dtype=float)
    return nlp.NlpProblem(fun=lambda z: float(np.sum((z - c) ** 2)), n=c.size, grad=lambda z: 2 * (z - c),
                          lb=lb, ub=ub)


def test_unconstrained_quadratic():
    rep = nlp.solve(quad([3.0]), [0.0])
    assert rep.converged and rep.x[0] == pytest.approx(3.0, abs=1e-6)
    assert rep.stationarity <= 1e-6 and rep.max_violation <= 1e-6


def test_active_bound():
    p = nlp.NlpProblem(fun=lambda z: float(z[0]), n=1, grad=lambda z: np.ones(1), lb=[1.0])
    rep = nlp.solve(p, [5.0])
    assert rep.converged and rep.x[0] == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("method", ["slsqp", "auglag"])
def test_constrained_quadratic_both_backends(method):
    # min (x-2)^2 + (y-1)^2  s.t.  x + y = 1, x >= 0.2: optimum (1, 0)
    p = nlp.NlpProblem(fun=lambda z: float((z[0] - 2) ** 2 + (z[1] - 1) ** 2), n=2,
                       eq=lambda z: np.array([z[0] + z[1] - 1.0]), ineq=lambda z: np.array([0.2 - z[0]]))
    rep = nlp.solve(p, [0.5, 0.5], nlp.SolveOptions(method=method))
    assert rep.converged
    np.testing.assert_allclose(rep.x, [1.0, 0.0], atol=1e-5)


def test_start_outside_bounds_rejected():
    with pytest.raises(ValueError):
        nlp.solve(quad([0.0], lb=[0.0], ub=[1.0]), [2.0])


def test_iteration_cap_reports_instead_of_raising():
    rosen = nlp.NlpProblem(fun=lambda z: float(100 * (z[1] - z[0] ** 2) ** 2 + (1 - z[0]) ** 2), n=2)
    rep = nlp.solve(rosen, [-1.2, 1.0], nlp.SolveOptions(max_iter=2, restarts=0))
    assert not rep.converged
    assert np.isfinite(rep.max_violation)


def test_infeasible_problem_not_converged():
    p = nlp.NlpProblem(fun=lambda z: float(z[0] ** 2), n=1,
                       ineq=lambda z: np.array([1.0 - z[0], z[0] - 0.0]))
    rep = nlp.solve(p, [0.5])
    assert not rep.converged and rep.max_violation > 1e-3


def test_reproducible():
    p = quad([1.0, -2.0, 0.5], lb=[0, -1, 0], ub=[2, 2, 2])
    a, b = nlp.solve(p, [0.1, 0.1, 0.1]), nlp.solve(p, [0.1, 0.1, 0.1])
    np.testing.assert_array_equal(a.x, b.x)
    assert (a.fun, a.stationarity, a.max_violation, a.iterations) == (b.fun, b.stationarity, b.max_violation,
                                                                       b.iterations)


@settings(max_examples=30, deadline=None)
@given(center=st.lists(st.floats(-3, 3), min_size=2, max_size=4), radius=st.floats(0.3, 2.0))
def test_converged_means_feasible(center, radius):
    c = np.asarray(center)
    # project onto a ball: analytic optimum c * min(1, radius / |c|)
    p = nlp.NlpProblem(fun=lambda z: float(np.sum((z - c) ** 2)), n=c.size, grad=lambda z: 2 * (z - c),
                       ineq=lambda z: np.array([z @ z - radius ** 2]),
                       ineq_jac=lambda z: 2 * z[None, :])
    rep = nlp.solve(p, np.zeros(c.size))
    if rep.converged:
        assert rep.max_violation <= 1e-6
        expect = c * min(1.0, radius / max(np.linalg.norm(c), 1e-300))
        np.testing.assert_allclose(rep.x, expect, atol=1e-5)


def test_check_gradients_on_quadratic():
    rng = np.random.default_rng(0)
    M = rng.normal(size=(4, 4))
    H = M @ M.T
    p = nlp.NlpProblem(fun=lambda z: float(0.5 * z @ H @ z), n=4, grad=lambda z: H @ z)
    assert nlp.check_gradients(p, rng.normal(size=4), h_fd=1e-5) <= 1e-7


def test_check_gradients_flags_wrong_gradient():
    p = nlp.NlpProblem(fun=lambda z: float(np.sum(z ** 2)), n=3, grad=lambda z: 2.2 * z)
    assert nlp.check_gradients(p, np.array([0.3, -1.0, 2.0])) >= 1e-2


def test_check_gradients_covers_constraints():
    p = nlp.NlpProblem(fun=lambda z: float(z[0]), n=2, grad=lambda z: np.array([1.0, 0.0]),
                       ineq=lambda z: np.array([z[0] * z[1]]), ineq_jac=lambda z: np.array([[z[1], 0.0]]))
    assert nlp.check_gradients(p, np.array([1.0, 2.0])) >= 1e-2


def test_scheduler_gradients_at_random_feasible_point():
    m, c = table_model(), table_curves()
    sc = demo_scenario(12, 0.25, curves=c)
    prob = SchedulingProblem(m, c, sc, X0, "exact")
    rng = np.random.default_rng(4)
    u = rng.uniform(sc.u_min + 0.05, sc.u_max - 0.05, sc.N)
    z = prob.feasible_start(u, rng.uniform(0, 0.04, sc.N), rng.uniform(0, 0.04, sc.N))
    assert nlp.check_gradients(prob.nlp_problem(), z) <= 1e-5


def test_toy_scheduler_matches_grid_search():
    rng = np.random.default_rng(11)
    for _ in range(3):
        m, c, sc, x0 = random_single_step(rng)
        J, *_ = single_step_grid(m, c, sc, x0)
        s = schedule_reserves(m, c, sc, x0)
        assert s.converged
        assert s.objective <= J + 1e-9
        assert J - s.objective <= cell_variation(c, sc, s.u[0], s.r_u[0], s.r_d[0])
