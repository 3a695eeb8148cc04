"""Bounded-variable dual simplex used to re-solve branch-and-bound nodes.

Children differ from their parent only in variable bounds, so the parent's
optimal basis stays dual feasible and a few dual pivots usually restore
primal feasibility. Anything this solver cannot certify (unbounded rays,
stalls, singular bases) is reported as ``None`` so the caller can fall back
to the two-phase primal solver.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lp import LinearProgram

_BIG = 1e7  # stand-in bound for dual-infeasible nonbasics with an infinite bound
_PIV_TOL = 1e-9
_REINVERT_EVERY = 40
_BLAND_AFTER = 20


@dataclass
class NodeResult:
    status: str  # "optimal" or "infeasible"
    x: np.ndarray | None
    objective: float
    basis: np.ndarray | None


class DualSimplex:
    def __init__(self, lp: LinearProgram, tol: float = 1e-9):
        A = lp.constraint_matrix
        m, n = A.shape
        self.n, self.m = n, m
        self.M = np.hstack([A, np.eye(m)])
        self.b = lp.rhs.astype(float)
        self.c = np.concatenate([lp.objective, np.zeros(m)])
        s_lo = np.array([-np.inf if s == ">=" else 0.0 for s in lp.senses])
        s_hi = np.array([0.0 if s in (">=", "=") else np.inf for s in lp.senses])
        self.slack_lo, self.slack_hi = s_lo, s_hi
        self.tol_d = tol
        self.tol_p = 1e-9 * max(1.0, float(np.abs(self.b).max(initial=0.0)))
        # row activity tolerance for the final check, scaled by row size
        self._tol_rows = 1e-7 * (1.0 + np.abs(A).sum(axis=1) + np.abs(self.b))

    def factor(self, basis: np.ndarray | None):
        """Tableau, basic right-hand side and reduced costs for ``basis``."""
        n, m = self.n, self.m
        basis = np.arange(n, n + m) if basis is None else basis.copy()
        if np.array_equal(basis, np.arange(n, n + m)):
            T, beta = self.M.copy(), self.b.copy()
        else:
            Tb = np.linalg.solve(self.M[:, basis], np.column_stack([self.M, self.b]))
            T, beta = Tb[:, :-1], Tb[:, -1].copy()
        d = self.c - self.c[basis] @ T
        d[basis] = 0.0
        return basis, T, beta, d

    def solve(self, bounds: np.ndarray, start=None) -> NodeResult | None:
        """Solve under ``bounds`` from a basis or a state returned by ``factor``."""
        lo = np.concatenate([bounds[:, 0], self.slack_lo])
        hi = np.concatenate([bounds[:, 1], self.slack_hi])
        if np.any(lo > hi + 1e-12):
            return NodeResult("infeasible", None, np.inf, None)
        try:
            if start is None or isinstance(start, np.ndarray):
                start = self.factor(start)
            basis, T, beta, d = start
            return self._run(lo, hi, basis.copy(), T.copy(), beta.copy(), d.copy())
        except np.linalg.LinAlgError:
            return None

    def _run(self, lo, hi, basis, T, beta, d):
        n, m = self.n, self.m
        ntot = n + m
        c = self.c
        max_iter = 4 * ntot + 100
        degenerate = 0
        nonbasic = np.ones(ntot, dtype=bool)
        nonbasic[basis] = False
        side = self._initial_side(d, lo, hi, nonbasic)
        fresh = True  # tableau was just computed from scratch
        for it in range(max_iter):
            self.iterations = it
            if it and it % _REINVERT_EVERY == 0 and not fresh:
                basis, T, beta, d = self.factor(basis)
                fresh = True
            x = np.where(side < 0, lo, np.where(side > 0, hi, 0.0))
            x[~nonbasic] = 0.0
            artificial = nonbasic & ~np.isfinite(x)
            x[artificial] = np.sign(x[artificial]) * _BIG
            xb = beta - T[:, nonbasic] @ x[nonbasic]
            below = lo[basis] - xb
            above = xb - hi[basis]
            viol = np.maximum(below, above)
            bland = degenerate >= _BLAND_AFTER
            r = int(np.argmax(viol)) if m else 0
            if m and bland and viol[r] > self.tol_p:
                rows = np.flatnonzero(viol > self.tol_p)
                r = int(rows[np.argmin(basis[rows])])
            if m == 0 or viol[r] <= self.tol_p:
                if not fresh:  # confirm on a freshly factored tableau
                    basis, T, beta, d = self.factor(basis)
                    fresh = True
                    continue
                if np.any(artificial):
                    return None
                x[basis] = xb
                xs = np.clip(x[:n], lo[:n], hi[:n])
                resid = self.M[:, :n] @ xs - self.b
                if np.any(resid > -self.slack_lo + self._tol_rows) or np.any(resid < -self.slack_hi - self._tol_rows):
                    return None
                return NodeResult("optimal", xs, float(c[:n] @ xs), basis)
            alpha = T[r]
            movable = nonbasic & (hi > lo)
            inc = movable & (side <= 0)
            dec = movable & (side >= 0)
            to_lower = below[r] > above[r]
            if to_lower:  # basic var must rise to its lower bound
                cand = (inc & (alpha < -_PIV_TOL)) | (dec & (alpha > _PIV_TOL))
            else:
                cand = (inc & (alpha > _PIV_TOL)) | (dec & (alpha < -_PIV_TOL))
            idx = np.flatnonzero(cand)
            if idx.size == 0:
                return NodeResult("infeasible", None, np.inf, None)
            ratios = np.abs(d[idx]) / np.abs(alpha[idx])
            best = ratios.min()
            ties = idx[ratios <= best + 1e-12]
            j = int(ties[0]) if bland else int(ties[np.argmax(np.abs(alpha[ties]))])
            degenerate = degenerate + 1 if best <= 1e-12 else 0
            # pivot
            piv = T[r, j]
            T[r] /= piv
            beta[r] /= piv
            col = T[:, j].copy()
            col[r] = 0.0
            T -= np.outer(col, T[r])
            beta -= col * beta[r]
            d = d - d[j] * T[r]
            leaving = basis[r]
            basis[r] = j
            d[basis] = 0.0
            fresh = False
            nonbasic[j] = False
            nonbasic[leaving] = True
            side[j] = 0
            side[leaving] = -1 if to_lower else 1
        return None

    def _initial_side(self, d, lo, hi, nonbasic):
        """-1 (lower), +1 (upper) or 0 (free at zero) so reduced costs are dual feasible."""
        tol = self.tol_d
        side = np.zeros(d.size, dtype=int)
        up = nonbasic & (d < -tol)
        down = nonbasic & (d > tol)
        flat = nonbasic & ~up & ~down
        side[down] = -1
        side[up] = 1
        side[flat & np.isfinite(lo)] = -1
        side[flat & ~np.isfinite(lo) & np.isfinite(hi)] = 1
        return side
