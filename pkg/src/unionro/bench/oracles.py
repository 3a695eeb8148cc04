"""Independent reference solutions built on scipy's HiGHS interface.

These avoid the package's own simplex and branch-and-bound so agreement
between the two is meaningful.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

from ..errors import ExplosionCapExceeded
from ..lp import LinearProgram
from ..model import TwoStageProblem
from ..uncertainty import as_product, enumerate_vertices

DEFAULT_PATTERN_CAP = 4096


@dataclass
class OracleResult:
    value: float
    x: np.ndarray | None
    evaluated: int


def linprog_value(lp: LinearProgram) -> tuple[float, np.ndarray | None]:
    """Optimal value of ``lp`` (``inf`` if infeasible) via ``scipy.optimize.linprog``."""
    A, b = lp.constraint_matrix, lp.rhs
    senses = np.asarray(lp.senses)
    A_ub = np.vstack([A[senses == "<="], -A[senses == ">="]])
    b_ub = np.concatenate([b[senses == "<="], -b[senses == ">="]])
    eq = senses == "="
    res = linprog(lp.objective, A_ub=A_ub if A_ub.size else None, b_ub=b_ub if A_ub.size else None,
                  A_eq=A[eq] if eq.any() else None, b_eq=b[eq] if eq.any() else None,
                  bounds=[(None if not np.isfinite(lo) else lo, None if not np.isfinite(hi) else hi)
                          for lo, hi in lp.bounds], method="highs")
    if res.status == 2:
        return np.inf, None
    if res.status != 0:
        raise RuntimeError(f"reference LP failed: {res.message}")
    return float(res.fun), res.x


def recourse_value(p: TwoStageProblem, x, v) -> float:
    """``min_y b^T y`` at ``(x, v)`` solved by HiGHS."""
    rhs = p.h - p.T @ np.asarray(x, float) - p.M @ np.asarray(v, float)
    bounds = np.column_stack([p.y_lower, np.full(p.num_y, np.inf)])
    return linprog_value(LinearProgram(p.b, p.W, rhs, p.row_senses(), bounds))[0]


def _scenario_lp(p: TwoStageProblem, v, x_bounds: np.ndarray) -> LinearProgram:
    """Joint LP over ``(x, y)`` at a fixed ``v`` with the given first-stage bounds."""
    nx, ny = p.num_x, p.num_y
    rows = [np.hstack([p.A, np.zeros((p.A.shape[0], ny))]), np.hstack([p.T, p.W])]
    rhs = np.concatenate([p.q, p.h - p.M @ np.asarray(v, float)])
    senses = ["<="] * p.A.shape[0] + p.row_senses()
    bounds = np.vstack([x_bounds, np.column_stack([p.y_lower, np.full(ny, np.inf)])])
    return LinearProgram(np.concatenate([p.c, p.b]), np.vstack(rows), rhs, senses, bounds)


def brute_force_fixed_scenario(p: TwoStageProblem, v, cap: int = DEFAULT_PATTERN_CAP) -> OracleResult:
    """Best ``c^T x + b^T y`` at fixed ``v`` by enumerating every binary pattern and solving an LP each.

    Patterns that break a row involving only binaries are discarded before
    any LP is solved.
    """
    nb = int(p.x_binary.sum())
    if 2**nb > cap:
        raise ExplosionCapExceeded(f"{2 ** nb} binary patterns exceed the cap {cap}")
    bins = np.flatnonzero(p.x_binary)
    pure = np.flatnonzero(np.all(p.A[:, ~p.x_binary] == 0, axis=1)) if p.A.size else np.zeros(0, int)
    best, best_x, count = np.inf, None, 0
    for pattern in itertools.product((0.0, 1.0), repeat=nb):
        z = np.array(pattern)
        if pure.size and np.any(p.A[np.ix_(pure, bins)] @ z > p.q[pure] + 1e-9):
            continue
        xb = p.x_bounds.copy()
        xb[bins, 0] = xb[bins, 1] = z
        val, sol = linprog_value(_scenario_lp(p, v, xb))
        count += 1
        if val < best:
            best, best_x = val, sol[: p.num_x]
    return OracleResult(best, best_x, count)


def milp_fixed_scenario(p: TwoStageProblem, v) -> OracleResult:
    """Same problem as :func:`brute_force_fixed_scenario`, solved by ``scipy.optimize.milp``."""
    lp = _scenario_lp(p, v, p.x_bounds)
    senses = np.asarray(lp.senses)
    lo = np.where(senses == "<=", -np.inf, lp.rhs)
    hi = np.where(senses == ">=", np.inf, lp.rhs)
    integrality = np.concatenate([p.x_binary.astype(int), np.zeros(p.num_y, int)])
    res = milp(lp.objective, constraints=LinearConstraint(lp.constraint_matrix, lo, hi), integrality=integrality,
               bounds=Bounds(lp.bounds[:, 0], lp.bounds[:, 1]), options=dict(mip_rel_gap=1e-10))
    if res.status != 0:
        raise RuntimeError(f"reference MILP failed: {res.message}")
    return OracleResult(float(res.fun), res.x[: p.num_x], 1)


def worst_case_by_vertices(p: TwoStageProblem, x, pu) -> OracleResult:
    """``max_v min_y`` over a product of unions by checking every vertex of every explicit subset.

    The recourse value is convex in ``v``, so each subset's maximum sits at
    a vertex; a product subset's vertices are products of per-step vertices.
    """
    pu = as_product(pu)
    if pu.explicit_count > DEFAULT_PATTERN_CAP:
        raise ExplosionCapExceeded(f"{pu.explicit_count} explicit subsets exceed the cap {DEFAULT_PATTERN_CAP}")
    verts = [enumerate_vertices(s) for s in pu.base.subsets]
    best, arg, count = -np.inf, None, 0
    for index in itertools.product(range(pu.K), repeat=pu.N):
        for combo in itertools.product(*[verts[k] for k in index]):
            v = np.concatenate(combo)
            val = recourse_value(p, x, v)
            count += 1
            if val > best:
                best, arg = val, v
    return OracleResult(best, arg, count)


def _check(name, value, reference, tol=1e-6) -> dict:
    err = abs(value - reference)
    ok = err <= tol * max(1.0, abs(reference))
    return dict(check=name, value=float(value), reference=float(reference), abs_err=float(err),
                status="ok" if ok else "mismatch")


def verify_problem_file(pf, cap: int = DEFAULT_PATTERN_CAP) -> list[dict]:
    """Compare the package's solvers with the reference solutions on one problem file.

    Checks the fixed-scenario optimum at the file's reference point, the
    encoded worst case at that first-stage point against vertex enumeration
    (when the subsets are small enough) and, with an ambiguity set, the dual
    worst-case expectation against the primal one.
    """
    from ..bilevel import KktReformConfig, build_sp2, solve_subproblem, solve_worst_case
    from ..ccg_dro import worst_case_expectation_dual, worst_case_expectation_primal
    from ..model import solve_fixed_scenario
    from ..uncertainty import MAX_VERTEX_DIM, UnionSet, encode_monolithic

    p, cfg = pf.problem, pf.config
    kcfg = KktReformConfig(M_comp=cfg.M_comp, Delta=cfg.Delta, backend=cfg.backend)
    v_ref = np.asarray(pf.params.get("reference_v", np.zeros(p.num_v)), dtype=float)
    out = []
    ours = solve_fixed_scenario(p, v_ref, cfg.backend)
    if 2 ** int(p.x_binary.sum()) <= cap:
        ref = brute_force_fixed_scenario(p, v_ref, cap)
        out.append(_check("fixed_scenario_vs_enumeration", ours.objective_value, ref.value))
    else:
        ref = milp_fixed_scenario(p, v_ref)
        out.append(_check("fixed_scenario_vs_reference_milp", ours.objective_value, ref.value))
    x = ours.primal[: p.num_x].copy()
    x[p.x_binary] = np.round(x[p.x_binary])
    pu = as_product(pf.uncertainty)
    if pu.base.dim <= MAX_VERTEX_DIM and pu.explicit_count <= cap:
        sp = solve_subproblem(build_sp2(x, p, encode_monolithic(pu), kcfg))
        out.append(_check("encoded_worst_case_vs_vertices", sp.value, worst_case_by_vertices(p, x, pu).value))
    if pf.ambiguity is not None and isinstance(pf.uncertainty, UnionSet):
        C = np.array([solve_worst_case(x, p, s, kcfg).value for s in pf.uncertainty.subsets])
        out.append(_check("kl_dual_vs_primal", worst_case_expectation_dual(C, pf.ambiguity).value,
                          worst_case_expectation_primal(C, pf.ambiguity).value, 1e-4))
    return out
