from dataclasses import replace

import numpy as np
import pytest

from unionro.bench.cases import random_instance
from unionro.ccg_dro import (AmbiguitySet, Variant, build_master_dro, exp_row_value, perspective_exp_hessian,
                             perspective_exp_min_eigenvalue, solve_algorithm2, worst_case_expectation_dual,
                             worst_case_expectation_primal)
from unionro.ccg_ro import ETA_FLOOR, solve_algorithm1
from unionro.mip import solve_convex_mip, solve_milp
from unionro.uncertainty import UnionSet, encode_monolithic

P7 = np.array([0.7, 0.1, 0.1, 0.1])


def test_dual_examples():
    C = np.array([1.0, 2.0, 3.0, 4.0])
    assert worst_case_expectation_dual(C, AmbiguitySet(P7, 0.0)).value == pytest.approx(P7 @ C)
    for rho in (0.0, 0.3, 5.0):
        assert worst_case_expectation_dual(np.full(4, 2.5), AmbiguitySet(P7, rho)).value == pytest.approx(2.5)
    amb = AmbiguitySet(P7, 0.5)
    assert worst_case_expectation_dual(C, amb).value == pytest.approx(worst_case_expectation_primal(C, amb).value,
                                                                      abs=1e-4)


def test_dual_certificate_reproduces_value():
    amb = AmbiguitySet(P7, 0.5)
    C = np.array([1.0, 2.0, 3.0, 4.0])
    dv = worst_case_expectation_dual(C, amb)
    assert exp_row_value(dv.mu, dv.nu, C, amb) == pytest.approx(dv.value, abs=1e-9)
    assert P7 @ C <= dv.value <= C.max()


def test_primal_examples():
    C = np.array([1.0, 2.0, 3.0, 4.0])
    assert np.allclose(worst_case_expectation_primal(C, AmbiguitySet(P7, 0.0)).p, P7)
    assert worst_case_expectation_primal(C, AmbiguitySet(P7, 50.0)).value == pytest.approx(4.0, abs=1e-3)


def test_strong_duality_random():
    rng = np.random.default_rng(0)
    for _ in range(40):
        K = int(rng.integers(2, 5))
        amb = AmbiguitySet(rng.dirichlet(np.ones(K)), float(rng.choice([0.1, 0.5, 1.0])))
        C = rng.normal(size=K) * 3
        primal = worst_case_expectation_primal(C, amb)
        assert amb.contains(primal.p, tol=1e-9)
        assert worst_case_expectation_dual(C, amb).value == pytest.approx(primal.value, abs=1e-4)


def test_dual_monotone_in_radius():
    rng = np.random.default_rng(1)
    for _ in range(10):
        C = rng.normal(size=4)
        p = rng.dirichlet(np.ones(4))
        vals = [worst_case_expectation_dual(C, AmbiguitySet(p, r)).value for r in (0, 0.01, 0.1, 0.5, 1, 5, 50)]
        assert np.all(np.diff(vals) >= -1e-10)
        assert vals[-1] <= C.max() + 1e-12
        assert vals[-1] == pytest.approx(C.max(), abs=1e-3)


def test_zero_probability_subset_is_ignored():
    amb = AmbiguitySet(np.array([0.5, 0.5, 0.0]), 0.3)
    a = worst_case_expectation_dual([1.0, 2.0, 100.0], amb).value
    b = worst_case_expectation_dual([1.0, 2.0], AmbiguitySet(np.array([0.5, 0.5]), 0.3)).value
    assert a == pytest.approx(b)


def test_hessian_is_psd():
    rng = np.random.default_rng(2)
    x = rng.uniform(1e-3, 10, 1000)
    y = x * rng.uniform(-20, 20, 1000)  # ratio y/x bounded so exp(y/x) stays finite
    for a, b in zip(x, y):
        assert perspective_exp_min_eigenvalue(a, b) >= -1e-10
        H = perspective_exp_hessian(a, b)
        assert np.linalg.eigvalsh(H).min() >= -1e-12 * np.abs(H).max()


def test_hessian_matches_finite_differences():
    f = lambda x, y: x * np.exp(y / x - 1.0)
    rng = np.random.default_rng(3)
    for _ in range(50):
        x, y = rng.uniform(0.5, 3), rng.uniform(-2, 2)
        h = 1e-4
        fd = np.array([
            [(f(x + h, y) - 2 * f(x, y) + f(x - h, y)) / h**2,
             (f(x + h, y + h) - f(x + h, y - h) - f(x - h, y + h) + f(x - h, y - h)) / (4 * h**2)],
            [0.0, (f(x, y + h) - 2 * f(x, y) + f(x, y - h)) / h**2]])
        fd[1, 0] = fd[0, 1]
        assert np.allclose(perspective_exp_hessian(x, y), fd, rtol=1e-5, atol=1e-5)


def _dro_instance(seed, K=2):
    prob, pu, x = random_instance(seed, m=2, K=K, N=1)
    return prob, pu.base, x


@pytest.mark.parametrize("variant", list(Variant))
def test_exp_row_gradient_matches_finite_differences(variant):
    prob, u, x = _dro_instance(0, K=3)
    amb = AmbiguitySet(np.array([0.5, 0.3, 0.2]), 0.4)
    master = build_master_dro([[np.zeros(2)], [np.ones(2)], [-np.ones(2)]], prob, amb, variant)
    rng = np.random.default_rng(4)
    for cons in master.convex:
        n = cons.indices.size
        for _ in range(20):
            z = np.concatenate([[rng.uniform(-1, 1), rng.uniform(0, 2), rng.uniform(0.3, 3)], rng.uniform(0, 2, n - 3)])
            _, g = cons.fun(z)
            fd = np.array([(cons.fun(z + 1e-6 * e)[0] - cons.fun(z - 1e-6 * e)[0]) / 2e-6 for e in np.eye(n)])
            assert np.max(np.abs(g - fd)) <= 1e-5 * max(1.0, np.max(np.abs(g)))


def test_empty_master_is_floored():
    prob, u, _ = _dro_instance(1)
    m = build_master_dro([[], []], prob, AmbiguitySet(np.array([0.5, 0.5]), 0.2))
    assert not m.convex
    sol = solve_milp(m.mip)
    assert sol.primal[m.layout["eta"]][0] == pytest.approx(ETA_FLOOR)


def test_variants_project_to_the_same_first_stage_set():
    prob, u, _ = _dro_instance(2)
    amb = AmbiguitySet(np.array([0.6, 0.4]), 0.3)
    sets = [[np.array([0.2, -0.1])], [np.array([-0.5, 0.4])]]
    rng = np.random.default_rng(5)
    for _ in range(5):
        w = rng.uniform(0.1, 2.0, prob.num_x)
        vals = []
        for variant in Variant:
            m = build_master_dro(sets, prob, amb, variant)
            c = m.mip.lp.objective.copy()
            c[m.layout["x"]] = w
            mip = replace(m.mip, lp=replace(m.mip.lp, objective=c))
            vals.append(solve_convex_mip(mip, m.convex, oa_tol=1e-9, repair=m.repair).objective_value)
        assert vals[0] == pytest.approx(vals[1], abs=1e-6)


def test_single_subset_equals_robust():
    prob, pu, _ = random_instance(3, m=2, K=1, N=1)
    ro = solve_algorithm1(prob, encode_monolithic(pu)).objective
    dro = solve_algorithm2(prob, pu.base, AmbiguitySet(np.ones(1), 0.5)).objective
    assert dro == pytest.approx(ro, abs=1e-6)


def test_zero_radius_gives_nominal_expectation():
    prob, u, _ = _dro_instance(4)
    amb = AmbiguitySet(np.array([0.7, 0.3]), 0.0)
    sol = solve_algorithm2(prob, u, amb)
    assert sol.objective == pytest.approx(prob.c @ sol.x + amb.p_bar @ sol.subset_costs, abs=1e-9)


def test_variants_agree_and_stay_below_robust():
    for seed in range(4):
        prob, u, _ = _dro_instance(seed, K=3)
        ro = solve_algorithm1(prob, encode_monolithic(u)).objective
        amb = AmbiguitySet(np.array([0.5, 0.3, 0.2]), 0.3)
        a = solve_algorithm2(prob, u, amb, variant="DirectExp")
        b = solve_algorithm2(prob, u, amb, variant="PhiReform")
        assert a.objective == pytest.approx(b.objective, abs=1e-6)
        assert b.objective <= ro + 1e-6
        assert b.trace.violations() == []
        assert b.eta >= worst_case_expectation_dual(b.subset_costs, amb).value - 1e-6
