"""Branch-and-bound over binaries and an outer-approximation loop for convex rows."""
from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import CutLimitExceeded, DomainGuardViolated, NodeLimitExceeded
from ._dual_simplex import DualSimplex
from .lp import LinearProgram, LpStatus, solve_lp

INT_TOL = 1e-6
_HUGE_VALUE = 1e8  # linearizations above this are taken at a backed-off point


@dataclass(frozen=True, eq=False)
class MixedIntegerProgram:
    lp: LinearProgram
    binary_mask: np.ndarray
    sense: str = "min"
    priority: np.ndarray | None = None  # branch on higher values first

    def __post_init__(self):
        mask = np.asarray(self.binary_mask, dtype=bool).ravel()
        prio = np.zeros(mask.size) if self.priority is None else np.asarray(self.priority, dtype=float).ravel()
        if prio.size != mask.size:
            raise ValueError("priority length differs from variable count")
        object.__setattr__(self, "priority", prio)
        if mask.size != self.lp.num_vars:
            raise ValueError("binary_mask length differs from variable count")
        if self.sense not in ("min", "max"):
            raise ValueError("sense must be 'min' or 'max'")
        b = self.lp.bounds[mask]
        if np.any(b[:, 0] < 0) or np.any(b[:, 1] > 1):
            raise ValueError("binary variables need bounds within [0, 1]")
        object.__setattr__(self, "binary_mask", mask)

    def add_rows(self, rows, rhs, senses) -> "MixedIntegerProgram":
        rows = np.asarray(rows, dtype=float).reshape(-1, self.lp.num_vars)
        lp = LinearProgram(
            self.lp.objective,
            np.vstack([self.lp.constraint_matrix, rows]),
            np.concatenate([self.lp.rhs, np.asarray(rhs, dtype=float).ravel()]),
            self.lp.senses + tuple(senses),
            self.lp.bounds,
        )
        return MixedIntegerProgram(lp, self.binary_mask, self.sense, self.priority)

    def with_bounds(self, bounds) -> "MixedIntegerProgram":
        return MixedIntegerProgram(self.lp.with_bounds(bounds), self.binary_mask, self.sense, self.priority)


@dataclass
class MilpSolution:
    status: LpStatus
    primal: np.ndarray | None = None
    objective_value: float = np.nan
    bound: float = np.nan
    node_count: int = 0
    bound_history: list = field(default_factory=list)
    # outer-approximation bookkeeping
    cuts: list = field(default_factory=list)
    objective_history: list = field(default_factory=list)
    oa_rounds: int = 0
    lp_rounds: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


class ProblemBuilder:
    """Assemble a MILP from named variable blocks and dense row blocks."""

    def __init__(self):
        self._lb: list[float] = []
        self._ub: list[float] = []
        self._bin: list[bool] = []
        self._prio: list[float] = []
        self.blocks: dict[str, slice] = {}
        self._rows: list[tuple[list, float, str]] = []
        self._obj: dict[int, float] = {}

    @property
    def num_vars(self) -> int:
        return len(self._lb)

    def add_vars(self, name: str, size: int, lb=0.0, ub=np.inf, binary=False, priority=0) -> slice:
        start = self.num_vars
        lb = np.broadcast_to(np.asarray(lb, dtype=float), (size,))
        ub = np.broadcast_to(np.asarray(ub, dtype=float), (size,))
        self._lb.extend(lb.tolist())
        self._ub.extend(ub.tolist())
        self._bin.extend([binary] * size)
        self._prio.extend([priority] * size)
        sl = slice(start, start + size)
        self.blocks[name] = sl
        return sl

    def add_rows(self, terms: Sequence[tuple[slice, np.ndarray]], sense: str, rhs) -> None:
        """Add rows ``sum_b terms[b].matrix @ x[terms[b].slice]  sense  rhs``."""
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
        mats = []
        for sl, mat in terms:
            mat = np.asarray(mat, dtype=float)
            if mat.ndim == 1:
                mat = mat.reshape(1, -1) if rhs.size == 1 and mat.size == sl.stop - sl.start else np.diag(mat)
            mats.append((sl, mat))
        nrows = rhs.size
        for r in range(nrows):
            entries = []
            for sl, mat in mats:
                if mat.shape != (nrows, sl.stop - sl.start):
                    raise ValueError(f"block shape {mat.shape} does not match ({nrows}, {sl.stop - sl.start})")
                entries.append((sl, mat[r]))
            self._rows.append((entries, float(rhs[r]), sense))

    def set_objective(self, terms: Sequence[tuple[slice, np.ndarray]]) -> None:
        for sl, coef in terms:
            coef = np.broadcast_to(np.asarray(coef, dtype=float), (sl.stop - sl.start,))
            for j, v in zip(range(sl.start, sl.stop), coef):
                self._obj[j] = self._obj.get(j, 0.0) + float(v)

    def build(self, sense: str = "min") -> MixedIntegerProgram:
        n = self.num_vars
        c = np.zeros(n)
        for j, v in self._obj.items():
            c[j] = v
        A = np.zeros((len(self._rows), n))
        b = np.zeros(len(self._rows))
        senses = []
        for i, (entries, rhs, s) in enumerate(self._rows):
            for sl, row in entries:
                A[i, sl] += row
            b[i] = rhs
            senses.append(s)
        bounds = np.column_stack([self._lb, self._ub]) if n else np.zeros((0, 2))
        lp = LinearProgram(c, A, b, senses, bounds)
        return MixedIntegerProgram(lp, np.array(self._bin, dtype=bool), sense, np.array(self._prio, dtype=float))


# ---------------------------------------------------------------------------
# branch and bound


def _solve_fixed(lp: LinearProgram, mask, x):
    """Re-solve with binaries pinned to their rounded values."""
    bounds = lp.bounds.copy()
    vals = np.round(x[mask])
    bounds[mask, 0] = vals
    bounds[mask, 1] = vals
    return solve_lp(lp.with_bounds(bounds))


def _solve_highs(mip: MixedIntegerProgram, gap_tol: float) -> MilpSolution:
    from scipy.optimize import Bounds, LinearConstraint, milp

    lp = mip.lp
    sign = 1.0 if mip.sense == "min" else -1.0
    cons = []
    if lp.num_rows:
        lo = np.full(lp.num_rows, -np.inf)
        hi = np.full(lp.num_rows, np.inf)
        for i, s in enumerate(lp.senses):
            if s in ("<=", "="):
                hi[i] = lp.rhs[i]
            if s in (">=", "="):
                lo[i] = lp.rhs[i]
        cons.append(LinearConstraint(lp.constraint_matrix, lo, hi))
    res = milp(
        sign * lp.objective,
        integrality=mip.binary_mask.astype(int),
        bounds=Bounds(lp.bounds[:, 0], lp.bounds[:, 1]),
        constraints=cons,
        options={"mip_rel_gap": 1e-12, "presolve": True},
    )
    if res.status == 2:
        return MilpSolution(LpStatus.INFEASIBLE)
    if res.status == 3:
        return MilpSolution(LpStatus.UNBOUNDED)
    if res.x is None:
        raise NodeLimitExceeded(f"HiGHS stopped: {res.message}")
    x = res.x.copy()
    x[mip.binary_mask] = np.round(x[mip.binary_mask])
    if mip.binary_mask.any():
        # clean continuous values with the binaries pinned
        fix = lp.bounds.copy()
        fix[mip.binary_mask] = x[mip.binary_mask, None]
        lin = milp(sign * lp.objective, bounds=Bounds(fix[:, 0], fix[:, 1]), constraints=cons)
        if lin.x is not None:
            x = lin.x.copy()
            x[mip.binary_mask] = fix[mip.binary_mask, 0]
    obj = float(lp.objective @ x)
    bound = getattr(res, "mip_dual_bound", None)
    bound = obj if bound is None or not np.isfinite(bound) else sign * float(bound)
    return MilpSolution(LpStatus.OPTIMAL, x, obj, bound, int(getattr(res, "mip_node_count", 0) or 0))


def solve_milp(
    mip: MixedIntegerProgram,
    gap_tol: float = 1e-7,
    node_limit: int = 100_000,
    backend: str = "bnb",
    warm_start: bool = True,
) -> MilpSolution:
    """Solve a binary MILP by best-bound branch and bound.

    Branching picks the most fractional binary among those with the highest
    priority (lowest index on ties). Nodes are re-solved by a dual simplex
    started from the parent's basis (``warm_start``); the two-phase solver
    covers anything it cannot certify. The ``highs`` backend hands the same
    model to ``scipy.optimize.milp`` and is meant for benchmark-sized
    instances.
    """
    if backend == "highs":
        return _solve_highs(mip, gap_tol)
    if backend != "bnb":
        raise ValueError(f"unknown backend {backend!r}")
    sign = 1.0 if mip.sense == "min" else -1.0
    base = mip.lp
    lp = LinearProgram(sign * base.objective, base.constraint_matrix, base.rhs, base.senses, base.bounds)
    mask = mip.binary_mask
    engine = DualSimplex(lp)

    def node_solve(bounds, start):
        res = engine.solve(bounds, start) if warm_start else None
        if res is None:
            sol = solve_lp(lp.with_bounds(bounds))
            if sol.status is LpStatus.UNBOUNDED:
                return "unbounded"
            return (sol.objective_value, sol.primal, None) if sol.optimal else None
        if res.status == "infeasible":
            return None
        return res.objective, res.x, res.basis

    root = node_solve(lp.bounds, None)
    if root is None:
        return MilpSolution(LpStatus.INFEASIBLE)
    if root == "unbounded":
        return MilpSolution(LpStatus.UNBOUNDED)

    counter = itertools.count()
    heap = [(root[0], next(counter), lp.bounds, root[1], root[2])]
    incumbent, inc_x = np.inf, None
    nodes = 0
    history = []
    node_bound = root[0]
    while heap:
        node_bound, _, bounds, x, basis = heapq.heappop(heap)
        history.append(sign * node_bound)
        if node_bound >= incumbent - gap_tol:
            break
        frac = np.abs(x - np.round(x)) * mask
        open_ = frac > INT_TOL
        if not open_.any():
            fixed = _solve_fixed(lp.with_bounds(bounds), mask, x)
            if fixed.optimal and fixed.objective_value < incumbent:
                incumbent = fixed.objective_value
                inc_x = fixed.primal.copy()
                inc_x[mask] = np.round(inc_x[mask])
            tol = 1e-9 * max(1.0, abs(node_bound))
            agrees = fixed.optimal and fixed.objective_value <= node_bound + tol
            # near-integral values times large coefficients can hide a different pattern:
            # keep branching on any binary that is not exactly integral
            open_ = (frac > 0) & (bounds[:, 0] < bounds[:, 1])
            if agrees or not open_.any():
                continue
        top = np.where(open_, mip.priority, -np.inf)
        j = int(np.argmax(np.where(top == top.max(), frac, -1.0)))
        start = None
        if warm_start and basis is not None:
            try:
                start = engine.factor(basis)
            except np.linalg.LinAlgError:
                start = None
        for val in (0.0, 1.0):
            child = bounds.copy()
            child[j] = val
            nodes += 1
            if nodes > node_limit:
                raise NodeLimitExceeded(f"more than {node_limit} branch-and-bound nodes")
            res = node_solve(child, start)
            if res == "unbounded":
                return MilpSolution(LpStatus.UNBOUNDED, node_count=nodes)
            if res is not None and res[0] < incumbent - gap_tol:
                heapq.heappush(heap, (res[0], next(counter), child, res[1], res[2]))
    if inc_x is None:
        return MilpSolution(LpStatus.INFEASIBLE, node_count=nodes, bound_history=history)
    bound = min(node_bound, incumbent)
    return MilpSolution(
        LpStatus.OPTIMAL,
        primal=inc_x,
        objective_value=float(base.objective @ inc_x),
        bound=sign * bound,
        node_count=nodes,
        bound_history=history,
    )


# ---------------------------------------------------------------------------
# outer approximation


@dataclass
class ConvexConstraint:
    """A smooth convex requirement ``g(z[indices]) <= 0``.

    ``fun`` returns ``(value, gradient)`` on the local vector ``z[indices]``.
    ``guard`` maps local positions to lower bounds that keep the evaluation
    away from singularities. ``cutter`` may return extra valid cuts
    ``(coef, rhs)`` meaning ``coef @ z_local <= rhs``; by default the gradient
    linearisation at the query point is used.
    """

    indices: np.ndarray
    fun: Callable[[np.ndarray], tuple[float, np.ndarray]]
    guard: dict = field(default_factory=dict)
    initial_points: list = field(default_factory=list)
    cutter: Callable[[np.ndarray], list] | None = None
    initial_cuts: list = field(default_factory=list)
    name: str = ""

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=int)

    def linearize(self, z_local):
        val, grad = self.fun(np.asarray(z_local, dtype=float))
        grad = np.asarray(grad, dtype=float)
        if not (np.isfinite(val) and np.all(np.isfinite(grad))):
            return None
        return grad, float(grad @ z_local - val)

    def cuts_at(self, z_local) -> list:
        z_local = np.asarray(z_local, dtype=float)
        if self.cutter is not None:
            return self.cutter(z_local)
        val = self.fun(z_local)[0]
        if self.initial_points and not (np.isfinite(val) and abs(val) <= _HUGE_VALUE):
            z_local = self._backtrack(z_local)
        cut = self.linearize(z_local)
        return [] if cut is None else [cut]

    def _backtrack(self, z):
        """A point between the first initial point and ``z`` with a moderate value.

        Along that segment the function is convex, so the tangent at a point
        whose value exceeds the start value still separates ``z``.
        """
        ref = np.asarray(self.initial_points[0], dtype=float)
        g_ref = self.fun(ref)[0]
        if not np.isfinite(g_ref):
            return z
        cap = max(g_ref, 0.0) + 1.0 + abs(g_ref)
        lo, hi = 0.0, 1.0
        for _ in range(100):
            t = 0.5 * (lo + hi)
            g = self.fun(ref + t * (z - ref))[0]
            if np.isfinite(g) and g <= cap:
                lo = t
            else:
                hi = t
        return ref + lo * (z - ref)


def _embed(cons: ConvexConstraint, coef, n):
    row = np.zeros(n)
    np.add.at(row, cons.indices, coef)
    return row


def _holds(cons: ConvexConstraint, zl, tol) -> bool:
    val, _ = cons.fun(zl)
    return bool(np.isfinite(val) and val <= tol)


def solve_convex_mip(
    mip: MixedIntegerProgram,
    convex: Sequence[ConvexConstraint],
    oa_tol: float = 1e-7,
    gap_tol: float = 1e-9,
    max_rounds: int = 500,
    max_cuts: int = 20_000,
    backend: str = "bnb",
    repair: Callable[[np.ndarray], np.ndarray] | None = None,
    fixed_rounds: int = 200,
) -> MilpSolution:
    """Outer approximation: solve the MILP, cut at the incumbent, repeat.

    The result is the first MILP solution at which every convex row holds
    within ``oa_tol``. Objective values are nondecreasing (min sense) across
    rounds because cuts only shrink the relaxation.

    When binaries are present, each violated MILP solution is followed by up
    to ``fixed_rounds`` cheap LP rounds with the binaries pinned, so the
    continuous part converges for that pattern before the next MILP solve.
    All cuts are globally valid, so this only changes where they are taken.

    ``repair`` may move a MILP solution to a point with the same objective
    value that still satisfies every linear row (for instance by resetting
    variables that carry no cost); the repaired point is returned when it
    satisfies the convex rows, otherwise cuts are taken at the original.
    """
    n = mip.lp.num_vars
    bounds = mip.lp.bounds.copy()
    for cons in convex:
        for pos, lo in cons.guard.items():
            j = cons.indices[pos]
            bounds[j, 0] = max(bounds[j, 0], lo)
    model = mip.with_bounds(bounds)
    mask = mip.binary_mask
    cut_log: list[tuple[ConvexConstraint, np.ndarray, float]] = []
    rows, rhs = [], []

    def add(cons, coef, b):
        cut_log.append((cons, np.asarray(coef, dtype=float), float(b)))
        rows.append(_embed(cons, coef, n))
        rhs.append(b)

    def current(m):
        return m.add_rows(rows, rhs, ["<="] * len(rows)) if rows else m

    def accept(z):
        """The point to return if it (or its repair) satisfies every convex row, else None."""
        if repair is not None:
            zr = repair(z.copy())
            if all(_holds(cons, zr[cons.indices], oa_tol) for cons in convex):
                return zr
        if all(_holds(cons, z[cons.indices], oa_tol) for cons in convex):
            return z
        return None

    def separate(z):
        added, worst = 0, 0.0
        for cons in convex:
            zl = z[cons.indices]
            val, _ = cons.fun(zl)
            if not np.isfinite(val):
                val = np.inf
            if val <= oa_tol:
                continue
            worst = max(worst, val)
            for coef, b in cons.cuts_at(zl):
                if coef @ zl - b > 0.1 * oa_tol:
                    add(cons, coef, b)
                    added += 1
        return added, worst

    for cons in convex:
        for coef, b in cons.initial_cuts:
            add(cons, coef, b)
        for pt in cons.initial_points:
            for coef, b in cons.cuts_at(pt):
                add(cons, coef, b)

    history = []
    lp_rounds = 0
    for rnd in range(1, max_rounds + 1):
        sol = solve_milp(current(model), gap_tol=gap_tol, backend=backend)
        if not sol.optimal:
            sol.cuts, sol.oa_rounds = cut_log, rnd
            return sol
        history.append(sol.objective_value)
        z = sol.primal
        ok = accept(z)
        if ok is not None:
            sol.primal = ok
            sol.cuts, sol.objective_history, sol.oa_rounds = cut_log, history, rnd
            sol.lp_rounds = lp_rounds
            return sol
        added, worst = separate(z)
        if added == 0:
            for cons in convex:
                for pos, lo in cons.guard.items():
                    if abs(z[cons.indices[pos]] - lo) <= 1e-12 * max(1.0, abs(lo)):
                        raise DomainGuardViolated(
                            f"constraint {cons.name or '?'} violated by {worst:.3g} with a variable pinned at its guard"
                        )
            raise CutLimitExceeded(f"outer approximation stalled with violation {worst:.3g}")
        if mask.any():
            pinned = model.lp.bounds.copy()
            pinned[mask] = np.round(z[mask])[:, None]
            fixed = MixedIntegerProgram(model.lp.with_bounds(pinned), np.zeros(n, dtype=bool), model.sense)
            for _ in range(fixed_rounds):
                inner = solve_milp(current(fixed), gap_tol=gap_tol, backend=backend)
                lp_rounds += 1
                if not inner.optimal or accept(inner.primal) is not None:
                    break
                if separate(inner.primal)[0] == 0:
                    break
        if len(cut_log) > max_cuts:
            raise CutLimitExceeded(f"more than {max_cuts} cuts")
    raise CutLimitExceeded(f"no convergence within {max_rounds} rounds")
