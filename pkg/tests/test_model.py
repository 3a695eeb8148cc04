import numpy as np
import pytest
from scipy.optimize import linprog

from unionro.bench.oracles import linprog_value
from unionro.errors import DimensionMismatch, RecourseInfeasible
from unionro.lp import LinearProgram, vertex_oracle
from unionro.model import (LinearDynamics, TwoStageProblem, deterministic_mpc_lp, evaluate_recourse,
                           solve_fixed_scenario, stack_mpc, validate)


def _problem(**kw):
    data = dict(c=[1.0, 1.0], b=[1.0, 1.0], A=np.zeros((0, 2)), q=[], T=np.eye(2), W=-np.eye(2),
                M=np.eye(2), h=[1.0, 1.0])
    data.update(kw)
    return TwoStageProblem(**data)


def test_validate_consistent_system():
    assert validate(_problem()) == []


def test_validate_names_wrong_W():
    diag = validate(_problem(W=-np.eye(3)[:, :2]))
    assert len(diag) == 1 and diag[0].startswith("W")


def test_validate_block_sum():
    diag = validate(_problem(M=np.ones((2, 5)), blocks=(2, 2, 2)))
    assert len(diag) == 1 and "block widths sum to 6" in diag[0]


def _scalar(s0, N=1, **kw):
    return LinearDynamics(Phi=[[1.0]], Gamma_u=[[1.0]], Gamma_v=[[1.0]], s0=[s0], cost_u=[1.0],
                          s_lower=0.0, **kw)


@pytest.mark.parametrize("s0", [-2.5, -0.3, 0.0, 1.7])
def test_one_step_scalar_control(s0):
    p = stack_mpc(_scalar(s0), 1)
    sol = solve_fixed_scenario(p, [0.0])
    assert sol.primal[0] == pytest.approx(max(0.0, -s0), abs=1e-9)


def test_blocks_match_disturbance_width():
    dyn = LinearDynamics(Phi=np.eye(3), Gamma_u=np.ones((3, 1)), Gamma_v=np.ones((3, 2)), s0=np.zeros(3),
                         cost_u=1.0, s_lower=-1.0)
    p = stack_mpc(dyn, 4)
    assert p.blocks == (2, 2, 2, 2)
    assert validate(p) == []


def test_two_step_matches_hand_assembled_lp():
    # s1 = 0.9 s0 + u0, s2 = 0.9 s1 + u1, cost u0 + u1 + 0.5 s1 + 0.5 s2, s >= 1, 0 <= u <= 4
    dyn = LinearDynamics(Phi=[[0.9]], Gamma_u=[[1.0]], Gamma_v=[[1.0]], s0=[0.2], cost_u=1.0, cost_s=0.5,
                         s_lower=1.0, u_upper=4.0)
    ours = solve_fixed_scenario(stack_mpc(dyn, 2), [0.0, 0.0]).objective_value
    # variables u0, u1, s1, s2
    ref = linprog([1.0, 1.0, 0.5, 0.5], A_eq=[[1.0, 0, -1.0, 0], [0, 1.0, 0.9, -1.0]], b_eq=[-0.18, 0.0],
                  bounds=[(0, 4), (0, 4), (1, None), (1, None)])
    assert ours == pytest.approx(ref.fun, abs=1e-9)


def test_stacked_zero_disturbance_matches_direct_lp():
    rng = np.random.default_rng(0)
    checked = 0
    for _ in range(30):
        ns, nu, nv, N = int(rng.integers(1, 4)), int(rng.integers(1, 3)), int(rng.integers(1, 3)), int(rng.integers(1, 7))
        Phi = rng.normal(size=(ns, ns))
        Phi *= 0.9 / max(1e-9, np.max(np.abs(np.linalg.eigvals(Phi))))
        dyn = LinearDynamics(Phi=Phi, Gamma_u=rng.normal(size=(ns, nu)), Gamma_v=rng.normal(size=(ns, nv)),
                             s0=rng.uniform(-1, 1, ns), cost_u=rng.uniform(0.1, 1, nu), cost_s=rng.uniform(-1, 1, ns),
                             s_lower=-3.0, s_upper=3.0, u_lower=-2.0, u_upper=2.0)
        ref, _ = linprog_value(deterministic_mpc_lp(dyn, N))
        if not np.isfinite(ref):
            continue
        ours = solve_fixed_scenario(stack_mpc(dyn, N), np.zeros(N * nv)).objective_value
        assert ours == pytest.approx(ref, abs=1e-7 * (1 + abs(ref)))
        checked += 1
    assert checked >= 20


def test_bad_dynamics_shapes():
    with pytest.raises(DimensionMismatch):
        LinearDynamics(Phi=np.ones((2, 3)), Gamma_u=np.ones((2, 1)), Gamma_v=np.ones((2, 1)), s0=[0, 0], cost_u=1.0)


def test_recourse_examples():
    p = TwoStageProblem(c=[0.0], b=[1.0, 1.0], A=np.zeros((0, 1)), q=[], T=np.zeros((2, 1)), W=np.eye(2),
                        M=np.zeros((2, 1)), h=[1.0, 1.0])
    assert evaluate_recourse(p, [0.0], [0.0]) == pytest.approx(0.0)
    # min y s.t. y >= 1 + v
    p = TwoStageProblem(c=[0.0], b=[1.0], A=np.zeros((0, 1)), q=[], T=[[0.0]], W=[[-1.0]], M=[[1.0]], h=[-1.0])
    assert evaluate_recourse(p, [0.0], [0.5]) == pytest.approx(1.5)


def _random_recourse(rng, nx=2, ny=3, nv=2, nr=5):
    W = rng.normal(size=(nr, ny))
    W[:, 0] = -np.abs(W[:, 0]) - 1.0  # y0 can always absorb every row
    return TwoStageProblem(c=np.zeros(nx), b=np.concatenate([[1.0], rng.uniform(0.1, 1, ny - 1)]),
                           A=np.zeros((0, nx)), q=[], T=rng.normal(size=(nr, nx)), W=W,
                           M=rng.normal(size=(nr, nv)), h=rng.uniform(0, 1, nr))


def test_recourse_matches_vertex_oracle():
    rng = np.random.default_rng(1)
    for _ in range(30):
        p = _random_recourse(rng)
        x, v = rng.uniform(0, 1, 2), rng.uniform(-1, 1, 2)
        rhs = p.h - p.T @ x - p.M @ v
        _, val, _ = vertex_oracle(LinearProgram(p.b, p.W, rhs, ["<="] * 5, np.tile([0.0, np.inf], (3, 1))))
        assert evaluate_recourse(p, x, v) == pytest.approx(val, abs=1e-7)


def test_recourse_is_convex_in_v():
    rng = np.random.default_rng(2)
    p = _random_recourse(rng)
    x = rng.uniform(0, 1, 2)
    for _ in range(50):
        v1, v2 = rng.uniform(-2, 2, 2), rng.uniform(-2, 2, 2)
        mid = evaluate_recourse(p, x, (v1 + v2) / 2)
        assert mid <= (evaluate_recourse(p, x, v1) + evaluate_recourse(p, x, v2)) / 2 + 1e-9


def test_recourse_infeasible():
    p = TwoStageProblem(c=[0.0], b=[1.0], A=np.zeros((0, 1)), q=[], T=[[0.0]], W=[[1.0]], M=[[1.0]], h=[-1.0])
    with pytest.raises(RecourseInfeasible):
        evaluate_recourse(p, [0.0], [0.0])
