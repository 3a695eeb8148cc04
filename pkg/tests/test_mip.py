import itertools

import numpy as np
import pytest
from scipy.optimize import Bounds, LinearConstraint, milp

from unionro.errors import NodeLimitExceeded
from unionro.lp import LinearProgram, LpStatus
from unionro.mip import ConvexConstraint, MixedIntegerProgram, solve_convex_mip, solve_milp


def _mip(c, A, b, senses, bounds, mask, sense="min"):
    return MixedIntegerProgram(LinearProgram(c, A, b, senses, np.asarray(bounds, float)), np.asarray(mask), sense)


def test_two_binaries_capped_sum():
    m = _mip([1.0, 1.0], [[1.0, 1.0]], [1.5], ["<="], [[0, 1], [0, 1]], [True, True], "max")
    sol = solve_milp(m)
    assert sol.objective_value == pytest.approx(1.0)
    assert sorted(np.round(sol.primal)) == [0.0, 1.0]


def test_knapsack_against_enumeration():
    c, w = np.array([3.0, 2.0, 2.0]), np.array([2.0, 2.0, 1.0])
    best = max(c @ z for z in itertools.product([0, 1], repeat=3) if w @ z <= 3)
    sol = solve_milp(_mip(c, [w], [3.0], ["<="], [[0, 1]] * 3, [True] * 3, "max"))
    assert sol.objective_value == pytest.approx(best) == 5.0
    assert np.allclose(sol.primal, [1, 0, 1])


def test_integral_relaxation_needs_no_branching():
    sol = solve_milp(_mip([1.0, 1.0], [[1.0, 1.0]], [1.0], [">="], [[0, 1], [0, 1]], [True, True]))
    assert sol.objective_value == pytest.approx(1.0)
    assert sol.node_count <= 1


def test_node_limit():
    rng = np.random.default_rng(0)
    n = 14
    w = rng.uniform(1, 2, n)
    m = _mip(rng.uniform(1, 2, n), [w], [w.sum() / 2], ["<="], [[0, 1]] * n, [True] * n, "max")
    with pytest.raises(NodeLimitExceeded):
        solve_milp(m, node_limit=2)


@pytest.mark.parametrize("backend", ["bnb", "highs"])
def test_random_milps_against_scipy(backend):
    rng = np.random.default_rng(4)
    for _ in range(40):
        n, m = 6, 4
        mask = rng.random(n) < 0.5
        A = rng.normal(size=(m, n))
        b = A @ rng.uniform(0, 1, n) + rng.uniform(0.2, 1, m)
        c = rng.normal(size=n)
        bounds = np.where(mask[:, None], [0.0, 1.0], [0.0, 4.0])
        sol = solve_milp(_mip(c, A, b, ["<="] * m, bounds, mask), gap_tol=1e-9, backend=backend)
        ref = milp(c, constraints=LinearConstraint(A, -np.inf, b), integrality=mask.astype(int),
                   bounds=Bounds(bounds[:, 0], bounds[:, 1]))
        assert sol.objective_value == pytest.approx(ref.fun, abs=1e-7)
        z = sol.primal[mask]
        assert np.all(np.abs(z - np.round(z)) <= 1e-6)


def test_node_bounds_are_monotone_in_max_sense():
    rng = np.random.default_rng(2)
    n = 10
    w = rng.uniform(1, 3, n)
    sol = solve_milp(_mip(rng.uniform(1, 3, n), [w], [w.sum() / 2.5], ["<="], [[0, 1]] * n, [True] * n, "max"))
    hist = np.asarray(sol.bound_history)
    assert hist.size and np.all(np.diff(hist) <= 1e-9)
    assert sol.objective_value <= sol.bound + 1e-9


def test_infeasible_milp():
    sol = solve_milp(_mip([1.0], [[1.0]], [0.5], [">="], [[0, 1]], [True], "min").add_rows([[1.0]], [0.7], ["<="]))
    assert sol.status is LpStatus.INFEASIBLE


# --- outer approximation --------------------------------------------------------


def exp_row(p_bar, rho):
    """g(eta, mu, nu, phi) = mu + rho nu + nu sum p exp((phi - mu)/nu - 1) - eta."""
    p_bar = np.asarray(p_bar, float)

    def fun(z):
        eta, mu, nu, phi = z[0], z[1], z[2], z[3:]
        with np.errstate(over="ignore", invalid="ignore"):
            e = np.exp((phi - mu) / nu - 1.0)
            val = mu + rho * nu + nu * p_bar @ e - eta
            grad = np.concatenate([[-1.0, 1.0 - p_bar @ e, rho + p_bar @ (e * (1.0 - (phi - mu) / nu))], p_bar * e])
        return val, grad

    return fun


def test_no_convex_rows_matches_milp():
    m = _mip([3.0, 2.0, 2.0], [[2.0, 2.0, 1.0]], [3.0], ["<="], [[0, 1]] * 3, [True] * 3, "max")
    assert solve_convex_mip(m, []).objective_value == pytest.approx(solve_milp(m).objective_value)


def test_single_atom_limit_value():
    # variables eta, mu, nu, phi with phi fixed at 1: value tends to 1 as nu -> 0
    bounds = [[-10, 10], [-10, 10], [0, 10], [1, 1]]
    m = _mip([1.0, 0, 0, 0], np.zeros((0, 4)), [], [], bounds, [False] * 4)
    cons = ConvexConstraint(np.arange(4), exp_row([1.0], 0.5), guard={2: 1e-9},
                            initial_points=[np.array([0.0, 1.0, 1.0, 1.0])])
    sol = solve_convex_mip(m, [cons], oa_tol=1e-9)
    assert sol.objective_value == pytest.approx(1.0, abs=1e-6)


def _psi_grid(phi, p_bar, rho, step=1e-3):
    mu = np.arange(-1.0, 6.0, step)
    best = np.inf
    with np.errstate(over="ignore"):
        for nu in np.arange(step, 6.0, step):
            vals = mu + rho * nu + nu * (np.exp((phi[None, :] - mu[:, None]) / nu - 1.0) @ p_bar)
            best = min(best, vals.min())
    return best


def test_two_binary_exp_problem_against_grid():
    p_bar, rho = np.array([0.5, 0.5]), 0.5
    # z = [eta, mu, nu, phi1, phi2, b1, b2]; phi1 = 3 - 2 b1, phi2 = 4 - 3 b2
    c = np.array([1.0, 0, 0, 0, 0, 1.2, 1.5])
    A = np.array([[0, 0, 0, 1, 0, 2, 0], [0, 0, 0, 0, 1, 0, 3]], float)
    bounds = [[-20, 20], [-20, 20], [0, 50], [-20, 20], [-20, 20], [0, 1], [0, 1]]
    m = _mip(c, A, [3.0, 4.0], ["=", "="], bounds, [False] * 5 + [True] * 2)
    cons = ConvexConstraint(np.arange(5), exp_row(p_bar, rho), guard={2: 1e-9},
                            initial_points=[np.array([0, 3.5, 1.0, 3, 4.0])])
    sol = solve_convex_mip(m, [cons], oa_tol=1e-9)
    grid = min(_psi_grid(np.array([3 - 2 * b1, 4 - 3 * b2]), p_bar, rho) + 1.2 * b1 + 1.5 * b2
               for b1, b2 in itertools.product([0, 1], repeat=2))
    assert sol.objective_value <= grid + 1e-9
    assert sol.objective_value == pytest.approx(grid, abs=5e-3)
    # objective nondecreasing as cuts accumulate
    assert np.all(np.diff(sol.objective_history) >= -1e-9)
    # every cut holds at sampled points of the true convex set
    rng = np.random.default_rng(0)
    fun = exp_row(p_bar, rho)
    pts = []
    while len(pts) < 100:
        z = np.concatenate([[rng.uniform(-5, 20)], rng.uniform(-5, 5, 1), rng.uniform(1e-3, 5, 1), rng.uniform(-3, 5, 2)])
        if fun(z)[0] <= 0:
            pts.append(z)
    for _, coef, b in sol.cuts:
        assert all(coef @ z <= b + 1e-7 * (1 + abs(b)) for z in pts)
