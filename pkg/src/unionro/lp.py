"""Dense two-phase primal simplex with dual extraction.

Problems are stated as

    min  c^T x   s.t.  a_i^T x  (<=, =, >=)  b_i,   lb <= x <= ub

and solved on a dense tableau. Dual multipliers follow the minimisation
convention ``y_i = d(objective)/d(b_i)``: ``<=`` rows carry ``y_i <= 0``,
``>=`` rows ``y_i >= 0`` and equality rows are free.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import NumericalBreakdown

INF = 1e30
SENSES = ("<=", "=", ">=")

_PIVOT_TOL = 1e-9
_BLAND_AFTER = 50
_REINVERT_EVERY = 64


class LpStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


def is_infinite(value) -> np.ndarray:
    return np.abs(np.asarray(value, dtype=float)) >= INF


@dataclass(frozen=True, eq=False)
class LinearProgram:
    objective: np.ndarray
    constraint_matrix: np.ndarray
    rhs: np.ndarray
    senses: tuple
    bounds: np.ndarray = None

    def __post_init__(self):
        c = np.asarray(self.objective, dtype=float).ravel()
        n = c.size
        A = np.asarray(self.constraint_matrix, dtype=float)
        if A.size == 0:
            A = A.reshape(0, n)
        if A.ndim != 2:
            raise ValueError("constraint_matrix must be two-dimensional")
        b = np.asarray(self.rhs, dtype=float).ravel()
        senses = tuple(self.senses)
        if self.bounds is None:
            bounds = np.tile([0.0, np.inf], (n, 1))
        else:
            bounds = np.array(self.bounds, dtype=float).reshape(n, 2)
        bounds[is_infinite(bounds)] = np.sign(bounds[is_infinite(bounds)]) * np.inf
        if A.shape[1] != n:
            raise ValueError(f"constraint_matrix has {A.shape[1]} columns, objective has {n}")
        if not (A.shape[0] == b.size == len(senses)):
            raise ValueError("row count mismatch between matrix, rhs and senses")
        bad = [s for s in senses if s not in SENSES]
        if bad:
            raise ValueError(f"unknown senses {bad}")
        if np.any(bounds[:, 0] > bounds[:, 1]):
            raise ValueError("lower bound exceeds upper bound")
        object.__setattr__(self, "objective", c)
        object.__setattr__(self, "constraint_matrix", A)
        object.__setattr__(self, "rhs", b)
        object.__setattr__(self, "senses", senses)
        object.__setattr__(self, "bounds", bounds)

    @property
    def num_vars(self) -> int:
        return self.objective.size

    @property
    def num_rows(self) -> int:
        return self.rhs.size

    def with_bounds(self, bounds) -> "LinearProgram":
        return LinearProgram(self.objective, self.constraint_matrix, self.rhs, self.senses, bounds)

    def max_violation(self, x) -> float:
        """Largest violation of rows and bounds at ``x`` (0 when feasible)."""
        x = np.asarray(x, dtype=float)
        viol = [0.0]
        if self.num_rows:
            act = self.constraint_matrix @ x - self.rhs
            for s, r in zip(self.senses, act):
                if s == "<=":
                    viol.append(r)
                elif s == ">=":
                    viol.append(-r)
                else:
                    viol.append(abs(r))
        viol.extend(self.bounds[:, 0] - x)
        viol.extend(x - self.bounds[:, 1])
        return float(max(viol))


@dataclass
class LpSolution:
    status: LpStatus
    primal: np.ndarray | None = None
    duals: np.ndarray | None = None
    objective_value: float = np.nan
    reduced_costs: np.ndarray | None = None
    ray: np.ndarray | None = None
    farkas: np.ndarray | None = None
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


def dual_bound(lp: LinearProgram, duals, reduced_costs, tol: float = 1e-9) -> float:
    """Dual objective ``b^T y`` plus the bound terms priced by reduced costs."""
    val = float(lp.rhs @ duals) if lp.num_rows else 0.0
    for r, lo, hi in zip(reduced_costs, lp.bounds[:, 0], lp.bounds[:, 1]):
        if r > tol:
            if not np.isfinite(lo):
                return -np.inf
            val += r * lo
        elif r < -tol:
            if not np.isfinite(hi):
                return -np.inf
            val += r * hi
        elif np.isfinite(lo) or np.isfinite(hi):
            val += r * (lo if np.isfinite(lo) else hi)
    return val


@dataclass
class FeasibilityResult:
    feasible: bool
    point: np.ndarray | None = None
    farkas: np.ndarray | None = None


# ---------------------------------------------------------------------------
# standard form


@dataclass
class _StandardForm:
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    const: float
    basis: np.ndarray
    n_struct: int
    artificial: np.ndarray  # bool mask over columns
    # mapping back to original variables: x = shift + sum coef * x'[col]
    col_var: np.ndarray
    col_coef: np.ndarray
    shift: np.ndarray
    # per standard row: index of original row (-1 for bound rows) and sign flip
    row_orig: np.ndarray
    row_flip: np.ndarray
    infeasible_empty_row: int = -1


def _standard_form(lp: LinearProgram) -> _StandardForm:
    n = lp.num_vars
    A0, b0 = lp.constraint_matrix, lp.rhs.copy()
    lb, ub = lp.bounds[:, 0], lp.bounds[:, 1]

    cols, col_var, col_coef = [], [], []
    shift = np.zeros(n)
    ub_rows = []  # (column index, bound)
    for j in range(n):
        lo, hi = lb[j], ub[j]
        if np.isfinite(lo):
            shift[j] = lo
            cols.append(A0[:, j])
            col_var.append(j)
            col_coef.append(1.0)
            if np.isfinite(hi):
                ub_rows.append((len(cols) - 1, hi - lo))
        elif np.isfinite(hi):
            shift[j] = hi
            cols.append(-A0[:, j])
            col_var.append(j)
            col_coef.append(-1.0)
        else:
            cols.append(A0[:, j])
            col_var.append(j)
            col_coef.append(1.0)
            cols.append(-A0[:, j])
            col_var.append(j)
            col_coef.append(-1.0)
    n_struct = len(cols)
    A_struct = np.column_stack(cols) if cols else np.zeros((lp.num_rows, 0))
    b_adj = b0 - A0 @ shift if lp.num_rows else b0
    col_var = np.array(col_var, dtype=int)
    col_coef = np.array(col_coef)
    c_struct = lp.objective[col_var] * col_coef
    const = float(lp.objective @ shift)

    rows, rhs, senses, row_orig = [], [], [], []
    empty_bad = -1
    for i in range(lp.num_rows):
        a = A_struct[i]
        if not np.any(a):
            r, s = b_adj[i], lp.senses[i]
            ok = (s == "<=" and r >= -1e-9) or (s == ">=" and r <= 1e-9) or (s == "=" and abs(r) <= 1e-9)
            if not ok and empty_bad < 0:
                empty_bad = i
            continue
        rows.append(a)
        rhs.append(b_adj[i])
        senses.append(lp.senses[i])
        row_orig.append(i)
    for col, bound in ub_rows:
        a = np.zeros(n_struct)
        a[col] = 1.0
        rows.append(a)
        rhs.append(bound)
        senses.append("<=")
        row_orig.append(-1)
    m = len(rows)
    A_rows = np.array(rows).reshape(m, n_struct)
    rhs = np.array(rhs, dtype=float)

    n_slack = sum(s != "=" for s in senses)
    A = np.zeros((m, n_struct + n_slack))
    A[:, :n_struct] = A_rows
    slack_col = np.full(m, -1)
    k = n_struct
    for i, s in enumerate(senses):
        if s == "<=":
            A[i, k] = 1.0
        elif s == ">=":
            A[i, k] = -1.0
        else:
            continue
        slack_col[i] = k
        k += 1
    flip = np.where(rhs < 0, -1.0, 1.0)
    A *= flip[:, None]
    rhs = rhs * flip

    basis = np.full(m, -1)
    art_rows = []
    for i in range(m):
        sc = slack_col[i]
        if sc >= 0 and A[i, sc] > 0:
            basis[i] = sc
        else:
            art_rows.append(i)
    n_total = A.shape[1] + len(art_rows)
    A_full = np.zeros((m, n_total))
    A_full[:, : A.shape[1]] = A
    artificial = np.zeros(n_total, dtype=bool)
    for t, i in enumerate(art_rows):
        col = A.shape[1] + t
        A_full[i, col] = 1.0
        basis[i] = col
        artificial[col] = True
    c_full = np.zeros(n_total)
    c_full[:n_struct] = c_struct
    return _StandardForm(
        A=A_full, b=rhs, c=c_full, const=const, basis=basis, n_struct=n_struct,
        artificial=artificial, col_var=col_var, col_coef=col_coef, shift=shift,
        row_orig=np.array(row_orig, dtype=int), row_flip=flip, infeasible_empty_row=empty_bad,
    )


# ---------------------------------------------------------------------------
# tableau


class _Tableau:
    def __init__(self, A, b, basis):
        self.A = A
        self.b = b
        self.basis = basis.copy()
        self.T = A.copy()
        self.beta = b.copy()
        self.pivots = 0
        self.reinvert()

    def reinvert(self):
        if self.basis.size == 0:
            self.T = self.A.copy()
            self.beta = self.b.copy()
            return
        B = self.A[:, self.basis]
        try:
            self.T = np.linalg.solve(B, self.A)
            self.beta = np.linalg.solve(B, self.b)
        except np.linalg.LinAlgError as exc:
            raise NumericalBreakdown("basis matrix became singular") from exc
        self.beta[np.abs(self.beta) < 1e-13] = 0.0

    def pivot(self, r, j):
        piv = self.T[r, j]
        if abs(piv) < 1e-12:
            raise NumericalBreakdown(f"pivot magnitude {abs(piv):.3g} below 1e-12")
        self.T[r] /= piv
        self.beta[r] /= piv
        col = self.T[:, j].copy()
        col[r] = 0.0
        self.T -= np.outer(col, self.T[r])
        self.beta -= col * self.beta[r]
        self.T[:, j] = 0.0
        self.T[r, j] = 1.0
        self.basis[r] = j
        self.pivots += 1
        if self.pivots % _REINVERT_EVERY == 0:
            self.reinvert()

    def drop_row(self, r):
        keep = np.arange(self.T.shape[0]) != r
        self.A, self.b = self.A[keep], self.b[keep]
        self.T, self.beta = self.T[keep], self.beta[keep]
        self.basis = self.basis[keep]

    def run(self, cost, allowed, tol, max_iter):
        """Primal simplex from the current feasible basis.

        Returns ``("optimal", None)`` or ``("unbounded", column)``.
        """
        stalled = 0
        for _ in range(max_iter):
            d = cost - cost[self.basis] @ self.T
            d[~allowed] = 0.0
            d[self.basis] = 0.0
            bland = stalled >= _BLAND_AFTER
            candidates = np.flatnonzero(d < -tol)
            if candidates.size == 0:
                return "optimal", None
            j = candidates[0] if bland else candidates[np.argmin(d[candidates])]
            col = self.T[:, j]
            rows = np.flatnonzero(col > _PIVOT_TOL)
            if rows.size == 0:
                return "unbounded", j
            ratios = np.maximum(self.beta[rows], 0.0) / col[rows]
            best = ratios.min()
            ties = rows[ratios <= best + 1e-12 * max(1.0, abs(best))]
            if bland:
                r = ties[np.argmin(self.basis[ties])]
            else:
                r = ties[np.argmax(col[ties])]
            stalled = stalled + 1 if best <= 1e-12 else 0
            self.pivot(r, j)
        raise NumericalBreakdown("simplex iteration limit reached")


def solve_lp(lp: LinearProgram, tol: float = 1e-9, max_iter: int | None = None) -> LpSolution:
    """Solve ``lp`` with the two-phase primal simplex method."""
    sf = _standard_form(lp)
    m_orig = lp.num_rows
    if sf.infeasible_empty_row >= 0:
        farkas = np.zeros(m_orig)
        farkas[sf.infeasible_empty_row] = 1.0
        return LpSolution(LpStatus.INFEASIBLE, farkas=farkas)
    m, n_total = sf.A.shape
    if max_iter is None:
        max_iter = 50 * (m + n_total) + 1000
    tab = _Tableau(sf.A, sf.b, sf.basis)
    structural = ~sf.artificial
    row_ids = np.arange(m)  # standard rows still present

    # phase 1
    if sf.artificial.any():
        c1 = sf.artificial.astype(float)
        tab.run(c1, np.ones(n_total, dtype=bool), tol, max_iter)
        tab.reinvert()
        w = float(c1[tab.basis] @ tab.beta)
        if w > 1e-7 * max(1.0, float(np.abs(sf.b).max(initial=0.0))):
            y1 = np.linalg.solve(tab.A[:, tab.basis].T, c1[tab.basis])
            farkas = np.zeros(m_orig)
            for y, i in zip(y1, row_ids):
                o = sf.row_orig[i]
                if o >= 0:
                    farkas[o] = y * sf.row_flip[i]
            return LpSolution(LpStatus.INFEASIBLE, farkas=farkas, iterations=tab.pivots)
        # drive remaining artificials out of the basis
        r = 0
        while r < tab.basis.size:
            if sf.artificial[tab.basis[r]]:
                row = np.abs(tab.T[r]) * structural
                j = int(np.argmax(row))
                if row[j] > 1e-7:
                    tab.pivot(r, j)
                    r += 1
                else:
                    tab.drop_row(r)
                    row_ids = np.delete(row_ids, r)
            else:
                r += 1
        tab.reinvert()

    status, enter = tab.run(sf.c, structural, tol, max_iter)
    tab.reinvert()
    if status == "unbounded":
        direction = np.zeros(n_total)
        direction[enter] = 1.0
        direction[tab.basis] = -tab.T[:, enter]
        ray = np.zeros(lp.num_vars)
        np.add.at(ray, sf.col_var, sf.col_coef * direction[: sf.n_struct])
        return LpSolution(LpStatus.UNBOUNDED, ray=ray, iterations=tab.pivots)

    xs = np.zeros(n_total)
    xs[tab.basis] = np.maximum(tab.beta, 0.0)
    x = sf.shift.copy()
    np.add.at(x, sf.col_var, sf.col_coef * xs[: sf.n_struct])
    x = np.clip(x, lp.bounds[:, 0], lp.bounds[:, 1])

    duals = np.zeros(m_orig)
    if tab.basis.size:
        B = tab.A[:, tab.basis].T
        try:
            y = np.linalg.solve(B, sf.c[tab.basis])
        except np.linalg.LinAlgError:
            y = np.linalg.lstsq(B, sf.c[tab.basis], rcond=None)[0]
        for yi, i in zip(y, row_ids):
            o = sf.row_orig[i]
            if o >= 0:
                duals[o] = yi * sf.row_flip[i]
    rc = lp.objective - (lp.constraint_matrix.T @ duals if m_orig else 0.0)
    return LpSolution(
        LpStatus.OPTIMAL,
        primal=x,
        duals=duals,
        objective_value=float(lp.objective @ x),
        reduced_costs=rc,
        iterations=tab.pivots,
    )


def check_feasible(lp: LinearProgram) -> FeasibilityResult:
    """Phase-1 feasibility check; returns a point or Farkas-style multipliers."""
    probe = LinearProgram(np.zeros(lp.num_vars), lp.constraint_matrix, lp.rhs, lp.senses, lp.bounds)
    sol = solve_lp(probe)
    if sol.status is LpStatus.INFEASIBLE:
        return FeasibilityResult(False, farkas=sol.farkas)
    return FeasibilityResult(True, point=sol.primal)


def vertex_oracle(lp: LinearProgram, tol: float = 1e-9) -> tuple[LpStatus, float, np.ndarray | None]:
    """Brute-force LP optimum over all basic solutions.

    Only meaningful for LPs with a bounded feasible region and a handful of
    variables; every choice of ``n`` active constraints (rows or finite bounds)
    is intersected and the best feasible point is kept.
    """
    n = lp.num_vars
    if n > 6:
        raise ValueError("vertex oracle is limited to 6 variables")
    rows, rhs = [], []
    for a, b in zip(lp.constraint_matrix, lp.rhs):
        rows.append(a)
        rhs.append(b)
    for j in range(n):
        for bound in lp.bounds[j]:
            if np.isfinite(bound):
                e = np.zeros(n)
                e[j] = 1.0
                rows.append(e)
                rhs.append(bound)
    rows, rhs = np.array(rows).reshape(-1, n), np.array(rhs)
    best_val, best_x = np.inf, None
    for combo in itertools.combinations(range(len(rhs)), n):
        M = rows[list(combo)]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        x = np.linalg.solve(M, rhs[list(combo)])
        if lp.max_violation(x) <= 1e-7 * max(1.0, np.abs(x).max()):
            val = float(lp.objective @ x)
            if val < best_val - tol:
                best_val, best_x = val, x
    if best_x is None:
        return LpStatus.INFEASIBLE, np.nan, None
    return LpStatus.OPTIMAL, best_val, best_x
