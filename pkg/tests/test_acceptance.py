"""End-to-end acceptance checks, one test per criterion.

Each test stores a PASS/FAIL line through the ``record`` fixture; the lines
are printed in the terminal summary.
"""
import time

import numpy as np
import pytest

from unionro.bench.cases import (CpnpParams, build_cpnp, build_location_transportation, climate_case, cpnp_case,
                                 location_case, random_instance)
from unionro.bench.experiments import solve_dro, solve_ro, sweep_rho
from unionro.bench.io import ProblemFile, SolverConfig, case_file
from unionro.bench.oracles import brute_force_fixed_scenario, milp_fixed_scenario, worst_case_by_vertices
from unionro.bilevel import build_sp2, solve_subproblem, validate_bigM
from unionro.ccg_dro import (AmbiguitySet, Variant, build_master_dro, perspective_exp_min_eigenvalue,
                             worst_case_expectation_dual, worst_case_expectation_primal)
from unionro.ccg_ro import solve_algorithm1, solve_conventional
from unionro.mip import solve_convex_mip
from unionro.model import solve_fixed_scenario
from unionro.uncertainty import PolytopeSubset, UnionSet, encode_monolithic, enumerate_vertices

RHO_GRID = (0.01, 0.1, 0.5, 1.0, 5.0, 50.0)
TRACE_SOLVES: list = []  # (label, trace) from suites 1 and 5, checked by criterion 8


def _suite_dims(rng, n_max):
    return int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(1, n_max + 1))


# ---------------------------------------------------------------------------
# suite 1: encoded versus explicit CCG


@pytest.fixture(scope="module")
def suite1():
    out = []
    cpu = 0.0
    for i in range(50):
        seed = 1000 + i
        m, K, N = _suite_dims(np.random.default_rng(seed), 4)
        prob, pu, _ = random_instance(seed, m, K, N)
        t = time.process_time()
        a = solve_algorithm1(prob, encode_monolithic(pu))
        b = solve_conventional(prob, pu)
        cpu += time.process_time() - t
        out.append((seed, K, N, a, b))
        TRACE_SOLVES.extend([(f"suite1 seed {seed} encoded", a.trace), (f"suite1 seed {seed} explicit", b.trace)])
    return out, cpu


def test_criterion_1_encoded_and_explicit_agree(suite1, record):
    runs, cpu = suite1
    worst = max(abs(a.objective - b.objective) for *_, a, b in runs)
    ok = worst <= 1e-6 and cpu < 60.0
    record(1, ok, f"50 instances, max |diff| {worst:.2e} (<= 1e-6), cpu {cpu:.1f} s (< 60 s)")
    assert ok


def test_criterion_2_subproblem_counts(suite1, record):
    runs, _ = suite1
    bad = [seed for seed, K, N, a, b in runs
           if set(a.trace.subproblem_counts()) != {1} or set(b.trace.subproblem_counts()) != {K**N}]
    record(2, not bad, f"1 per iteration encoded, K^N explicit; mismatched seeds {bad}")
    assert not bad


# ---------------------------------------------------------------------------
# suite 3: encoded worst case versus vertex enumeration


def test_criterion_3_encoded_worst_case_oracle(record):
    worst, suspect = 0.0, []
    for i in range(100):
        seed = 3000 + i
        m, K, N = _suite_dims(np.random.default_rng(seed), 2)
        prob, pu, x = random_instance(seed, m, K, N)
        sub = build_sp2(x, prob, encode_monolithic(pu))
        val = solve_subproblem(sub).value
        worst = max(worst, abs(val - worst_case_by_vertices(prob, x, pu).value))
        if validate_bigM(sub, value=val).status != "ok":
            suspect.append(seed)
    ok = worst <= 1e-6 and not suspect
    record(3, ok, f"100 instances, max |diff| {worst:.2e} (<= 1e-6), big-M suspects {suspect}")
    assert ok


# ---------------------------------------------------------------------------
# worst-case expectation duality


def test_criterion_4_kl_strong_duality(record):
    rng = np.random.default_rng(4000)
    t = time.process_time()
    gap = outside = far = 0.0
    for _ in range(200):
        K = int(rng.integers(1, 5))
        p_bar = rng.dirichlet(np.ones(K))
        C = rng.normal(size=K) * rng.uniform(0.1, 100)
        amb = AmbiguitySet(p_bar, float(rng.choice([0.01, 0.1, 0.5, 1.0, 5.0])))
        d = worst_case_expectation_dual(C, amb).value
        gap = max(gap, abs(d - worst_case_expectation_primal(C, amb).value))
        scale = max(1.0, np.abs(C).max())
        outside = max(outside, p_bar @ C - d, d - C.max()) / scale
        far = max(far, abs(worst_case_expectation_dual(C, AmbiguitySet(p_bar, 50.0)).value - C.max()))
    cpu = time.process_time() - t
    ok = gap <= 1e-4 and outside <= 1e-12 and far <= 1e-3 and cpu < 30.0
    record(4, ok, f"200 triples, |dual - primal| {gap:.1e} (<= 1e-4), bracket breach {max(outside, 0):.1e}, "
                  f"rho=50 gap to max {far:.1e} (<= 1e-3), cpu {cpu:.1f} s (< 30 s)")
    assert ok


# ---------------------------------------------------------------------------
# suite 5: robust versus distributionally robust on the benchmarks


@pytest.fixture(scope="module")
def suite5():
    out = {}
    for name, make in (("location", location_case), ("cpnp", cpnp_case)):
        for K in (4, 1):
            pf = case_file(make(K=K))
            ro = solve_ro(pf)
            direct = solve_dro(pf, variant=Variant.DIRECT_EXP.value)
            phi = solve_dro(pf, variant=Variant.PHI_REFORM.value)
            out[name, K] = (ro, direct, phi)
            TRACE_SOLVES.extend([(f"{name} K={K} {s}", sol.trace)
                                 for s, sol in (("RO", ro), ("DirectExp", direct), ("PhiReform", phi))])
    return out


def test_criterion_5_conservatism_ordering(suite5, record):
    notes, ok = [], True
    for (name, K), (ro, direct, phi) in suite5.items():
        variants = abs(direct.objective - phi.objective)
        ok &= variants <= 1e-6
        if K == 1:
            diff = max(abs(direct.objective - ro.objective), abs(phi.objective - ro.objective))
            ok &= diff <= 1e-6
            notes.append(f"{name} K=1 |DRO - RO| {diff:.1e}")
        else:
            ok &= phi.objective <= ro.objective + 1e-6 and direct.objective <= ro.objective + 1e-6
            notes.append(f"{name} K=4 DRO {phi.objective:.4f} <= RO {ro.objective:.4f}")
        notes.append(f"variants {variants:.1e}")
    record(5, ok, "; ".join(notes))
    assert ok


def test_criterion_6_radius_sweep(record):
    case = cpnp_case()
    pf = case_file(case)
    t = time.process_time()
    res = sweep_rho(case.problem, case.union, case.ambiguity.p_bar, RHO_GRID, 1000, 0, pf.config, sign=-1.0)
    cpu = time.process_time() - t
    ro_npv = -solve_ro(pf).objective
    mins = np.array([r["min"] for r in res.rows])
    dist = np.abs(mins - ro_npv)
    monotone = bool(np.all(np.diff(dist) <= 1e-6 * max(1.0, abs(ro_npv))))
    final = dist[-1] / abs(ro_npv)
    ok = monotone and final <= 0.01 and cpu < 300.0
    record(6, ok, f"min NPV {np.round(mins, 2).tolist()} toward RO NPV {ro_npv:.2f}, monotone {monotone}, "
                  f"final gap {100 * final:.3f}% (<= 1%), cpu {cpu:.0f} s (< 300 s)")
    assert ok


# ---------------------------------------------------------------------------
# convexity and cut certificates


def _location_master(variant):
    case = location_case()
    scenarios = [[enumerate_vertices(s)[0], enumerate_vertices(s)[-1]] for s in case.union.subsets]
    return build_master_dro(scenarios, case.problem, case.ambiguity, variant)


def _feasible_points(row, cons, rng, n, scale):
    """Local points ``[eta, mu, nu, u]`` that satisfy the row, by lifting ``eta`` above it."""
    pts = []
    width = cons.indices.size - 3
    while len(pts) < n:
        u = rng.uniform(0, scale, width)
        s = row.split(np.concatenate([[0.0, 0.0, 1.0], u]))[3]
        nu = rng.uniform(1e-3, 1.0) * scale
        mu = s.max() - nu * rng.uniform(-2.0, 5.0)
        z = np.concatenate([[0.0, mu, nu], u])
        z[0] = cons.fun(z)[0] + rng.uniform(0, scale)
        pts.append(z)
    return pts


def test_criterion_7_convexity_and_cut_certificates(record):
    rng = np.random.default_rng(7000)
    x = rng.uniform(1e-3, 10, 1000)
    y = x * rng.uniform(-20, 20, 1000)
    min_eig = min(perspective_exp_min_eigenvalue(a, b) for a, b in zip(x, y))

    grad_err, cut_breach, n_cuts = 0.0, 0.0, 0
    for variant in Variant:
        master = _location_master(variant)
        for row, cons in zip(master.rows, master.convex):
            n = cons.indices.size
            for z in _feasible_points(row, cons, rng, 20, 1.0):
                _, g = cons.fun(z)
                fd = np.array([(cons.fun(z + 1e-6 * e)[0] - cons.fun(z - 1e-6 * e)[0]) / 2e-6 for e in np.eye(n)])
                grad_err = max(grad_err, np.max(np.abs(g - fd)) / max(1.0, np.max(np.abs(g))))
        sol = solve_convex_mip(master.mip, master.convex, oa_tol=1e-8, repair=master.repair)
        by_cons = {id(c): _feasible_points(r, c, rng, 100, 5e4) for r, c in zip(master.rows, master.convex)}
        for cons, coef, b in sol.cuts:
            n_cuts += 1
            for z in by_cons[id(cons)]:
                cut_breach = max(cut_breach, (coef @ z - b) / max(1.0, np.abs(coef) @ np.abs(z)))
    ok = min_eig >= -1e-10 and grad_err <= 1e-5 and cut_breach <= 1e-9
    record(7, ok, f"min Hessian eigenvalue {min_eig:.1e} (>= -1e-10), gradient rel err {grad_err:.1e} (<= 1e-5), "
                  f"{n_cuts} cuts x 100 feasible points, worst scaled breach {cut_breach:.1e}")
    assert ok


# ---------------------------------------------------------------------------
# trace invariants and deterministic limits


def test_criterion_8_trace_invariants(suite1, suite5, record):
    bad = [label for label, tr in TRACE_SOLVES if tr.violations() or tr.status not in ("converged", "repeat")]
    record(8, not bad, f"{len(TRACE_SOLVES)} CCG solves from suites 1 and 5, broken traces {bad}")
    assert not bad


def _point_file(problem, v):
    point = UnionSet([PolytopeSubset.box(v, v)])
    return ProblemFile(problem, point, AmbiguitySet(np.ones(1), 0.0), SolverConfig())


def test_criterion_9_deterministic_limits(record):
    checks = {}
    loc = location_case()
    ref = brute_force_fixed_scenario(loc.problem, np.zeros(3))
    checks["location v=0"] = (solve_fixed_scenario(loc.problem, np.zeros(3)).objective_value, ref.value)

    clim = climate_case()
    ref = brute_force_fixed_scenario(clim.problem, np.zeros(clim.problem.num_v))
    checks["climate v=0"] = (solve_fixed_scenario(clim.problem, np.zeros(clim.problem.num_v)).objective_value, ref.value)

    small = cpnp_case(CpnpParams(T=1))
    v1 = np.asarray(small.params["reference_v"])
    ref = brute_force_fixed_scenario(small.problem, v1)
    checks["cpnp T=1 nominal"] = (solve_fixed_scenario(small.problem, v1).objective_value, ref.value)

    # 40 binaries at the full horizon: the reference MILP stands in for pattern enumeration
    full = cpnp_case()
    v5 = np.asarray(full.params["reference_v"])
    checks["cpnp T=5 nominal (reference MILP)"] = (solve_fixed_scenario(full.problem, v5).objective_value,
                                                  milp_fixed_scenario(full.problem, v5).value)

    zero = np.zeros(3)
    point_loc = build_location_transportation(UnionSet([PolytopeSubset.box(zero, zero)]))
    checks["location rho=0 K=1"] = (solve_dro(_point_file(point_loc, zero)).objective,
                                    brute_force_fixed_scenario(point_loc, zero).value)
    point_cpnp = build_cpnp(CpnpParams(T=1))
    checks["cpnp T=1 rho=0 K=1"] = (solve_dro(_point_file(point_cpnp, v1)).objective,
                                    brute_force_fixed_scenario(point_cpnp, v1).value)

    errs = {k: abs(a - b) for k, (a, b) in checks.items()}
    ok = all(e <= 1e-6 for e in errs.values())
    record(9, ok, ", ".join(f"{k} {e:.1e}" for k, e in errs.items()) + " (<= 1e-6)")
    assert ok
