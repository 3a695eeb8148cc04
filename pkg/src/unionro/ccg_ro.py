"""Column-and-constraint generation for two-stage robust problems over unions.

``solve_algorithm1`` finds the worst case with one MILP over the selector
encoding each iteration. ``solve_conventional`` is the enumeration baseline
that solves one subproblem per explicit product subset.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .bilevel import KktReformConfig, build_sp2, solve_subproblem, solve_worst_case
from .errors import DimensionMismatch, IterationLimit
from .lp import LpStatus
from .mip import MixedIntegerProgram, ProblemBuilder, solve_milp
from .model import TwoStageProblem, _require_valid, evaluate_recourse
from .uncertainty import MonolithicEncoding, as_product, enumerate_explicit_subsets, DEFAULT_SUBSET_CAP

ETA_FLOOR = -1e12
REPEAT_TOL = 1e-9


@dataclass
class IterationRecord:
    iteration: int
    lower_bound: float
    upper_bound: float
    scenario: np.ndarray
    subproblems_solved: int
    wall_time: float
    eta_floored: bool = False


@dataclass
class CcgTrace:
    records: list = field(default_factory=list)
    status: str = "running"

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def lower_bounds(self) -> np.ndarray:
        return np.array([r.lower_bound for r in self.records])

    @property
    def upper_bounds(self) -> np.ndarray:
        return np.array([r.upper_bound for r in self.records])

    def subproblem_counts(self) -> list[int]:
        return [r.subproblems_solved for r in self.records]

    def violations(self, tol: float = 1e-9) -> list[str]:
        """Broken bound invariants; empty when the trace is consistent."""
        out = []
        lb, ub = self.lower_bounds, self.upper_bounds
        for i in range(1, len(lb)):
            if lb[i] < lb[i - 1] - tol:
                out.append(f"LB decreased at iteration {i}")
            if ub[i] > ub[i - 1] + tol:
                out.append(f"UB increased at iteration {i}")
        for i in range(len(lb)):
            if lb[i] > ub[i] + tol * max(1.0, abs(ub[i])):
                out.append(f"LB above UB at iteration {i}")
        return out

    def to_rows(self) -> list[dict]:
        return [dict(iteration=r.iteration, lower_bound=r.lower_bound, upper_bound=r.upper_bound,
                     subproblems_solved=r.subproblems_solved, wall_time=r.wall_time,
                     scenario=np.asarray(r.scenario).tolist()) for r in self.records]


@dataclass
class RoSolution:
    x: np.ndarray
    objective: float
    eta: float
    trace: CcgTrace
    scenarios: list


def is_repeat(v, scenarios, tol: float = REPEAT_TOL) -> bool:
    v = np.asarray(v, dtype=float)
    return any(np.max(np.abs(v - s), initial=0.0) <= tol for s in scenarios)


def build_master(scenarios, p: TwoStageProblem) -> MixedIntegerProgram:
    """Master over ``(x, eta, y_1..y_r)``; ``eta`` is floored when ``r = 0``."""
    _require_valid(p)
    bld = ProblemBuilder()
    x = bld.add_vars("x", p.num_x, p.x_bounds[:, 0], p.x_bounds[:, 1], binary=False)
    eta = bld.add_vars("eta", 1, -np.inf if len(scenarios) else ETA_FLOOR, np.inf)
    if p.A.shape[0]:
        bld.add_rows([(x, p.A)], "<=", p.q)
    for i, v in enumerate(scenarios):
        v = np.asarray(v, dtype=float).ravel()
        if v.size != p.num_v:
            raise DimensionMismatch(f"scenario {i} has {v.size} entries, expected {p.num_v}")
        y = bld.add_vars(f"y{i}", p.num_y, p.y_lower, np.inf)
        bld.add_rows([(y, p.b.reshape(1, -1)), (eta, -np.ones((1, 1)))], "<=", np.zeros(1))
        rhs = p.h - p.M @ v
        for s in ("<=", "="):
            rows = np.flatnonzero(p.equality_rows == (s == "="))
            if rows.size:
                bld.add_rows([(x, p.T[rows]), (y, p.W[rows])], s, rhs[rows])
    bld.set_objective([(x, p.c), (eta, np.ones(1))])
    mip = bld.build()
    mask = np.zeros(mip.lp.num_vars, dtype=bool)
    mask[x] = p.x_binary
    return MixedIntegerProgram(mip.lp, mask)


def _solve_master(scenarios, p, backend):
    sol = solve_milp(build_master(scenarios, p), gap_tol=1e-9, backend=backend)
    if sol.status is not LpStatus.OPTIMAL:
        raise RuntimeError(f"master problem is {sol.status.value}")
    x = sol.primal[: p.num_x].copy()
    x[p.x_binary] = np.round(x[p.x_binary])
    return x, float(sol.primal[p.num_x])


def _ccg_loop(p, worst_case, eps, max_iter, backend) -> RoSolution:
    trace = CcgTrace()
    scenarios: list[np.ndarray] = []
    lb, ub = -np.inf, np.inf
    start = time.perf_counter()
    for it in range(max_iter):
        x, eta = _solve_master(scenarios, p, backend)
        lb = max(lb, float(p.c @ x + eta))
        v, count = worst_case(x)
        ub = min(ub, float(p.c @ x + evaluate_recourse(p, x, v)))
        trace.records.append(IterationRecord(it, lb, ub, v, count, time.perf_counter() - start, not scenarios))
        if ub - lb <= eps:
            trace.status = "converged"
            return RoSolution(x, float(p.c @ x + eta), eta, trace, scenarios)
        if is_repeat(v, scenarios):
            trace.status = "repeat"
            return RoSolution(x, float(p.c @ x + eta), eta, trace, scenarios)
        scenarios.append(v)
    trace.status = "iteration_limit"
    raise IterationLimit(f"no convergence within {max_iter} iterations (gap {ub - lb:.3g})")


def solve_algorithm1(p: TwoStageProblem, enc: MonolithicEncoding, eps: float = 1e-6,
                     cfg: KktReformConfig | None = None, max_iter: int = 100) -> RoSolution:
    """CCG with a single selector-encoded worst-case MILP per iteration."""
    _require_valid(p)
    cfg = cfg or KktReformConfig()
    if p.blocks and any(w != enc.step_dim for w in p.blocks):
        raise DimensionMismatch("problem blocks do not match the encoding step dimension")

    def worst_case(x):
        res = solve_subproblem(build_sp2(x, p, enc, cfg))
        return res.v, 1

    return _ccg_loop(p, worst_case, eps, max_iter, cfg.backend)


def solve_conventional(p: TwoStageProblem, pu, eps: float = 1e-6, cfg: KktReformConfig | None = None,
                       max_iter: int = 100, cap: int = DEFAULT_SUBSET_CAP) -> RoSolution:
    """CCG that solves one subproblem for each of the K^N explicit subsets."""
    _require_valid(p)
    cfg = cfg or KktReformConfig()
    subsets = [s for _, s in enumerate_explicit_subsets(as_product(pu), cap)]

    def worst_case(x):
        best_val, best_v = -np.inf, None
        for s in subsets:
            res = solve_worst_case(x, p, s, cfg)
            if res.value > best_val:
                best_val, best_v = res.value, res.v
        return best_v, len(subsets)

    return _ccg_loop(p, worst_case, eps, max_iter, cfg.backend)
