"""Single-level MILPs for the worst-case recourse subproblems.

The inner problem ``min_y b^T y`` s.t. ``W y <= h - T x - M v``, ``y >= y_lower``
is replaced by its KKT system. Sign convention, used everywhere in the
package: ``lam >= 0`` multiplies the ``<=`` rows, so

    b + W^T lam = pi >= 0     (pi = 0 for free y entries)
    lam = -d(value)/d(rhs)

Equality rows get a free ``lam`` and no complementarity binary. Each
inequality row ``i`` gets a binary ``z_i`` with ``lam_i <= M_comp z_i`` and
``slack_i <= M_comp (1 - z_i)``; each finite lower bound on ``y_j`` does the
same with ``pi_j``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import RecourseInfeasible, RecourseUnbounded
from .lp import LinearProgram, LpStatus, solve_lp
from .mip import MilpSolution, MixedIntegerProgram, ProblemBuilder, solve_milp
from .model import TwoStageProblem
from .uncertainty import MonolithicEncoding, PolytopeSubset

VALIDATION_RTOL = 1e-6


@dataclass(frozen=True)
class KktReformConfig:
    M_comp: float = 1e4
    Delta: float | None = None
    validation_factor: float = 10.0
    backend: str = "bnb"
    gap_tol: float = 1e-9
    tighten: bool = True

    def __post_init__(self):
        if self.M_comp <= 0 or self.validation_factor <= 0 or (self.Delta is not None and self.Delta <= 0):
            raise ValueError("big-M constants must be positive")

    def scaled(self, factor: float, Delta: float) -> "KktReformConfig":
        return replace(self, M_comp=self.M_comp * factor, Delta=Delta * factor)


@dataclass
class KktSubproblem:
    """A built subproblem MILP plus what is needed to decode or rebuild it."""

    mip: MixedIntegerProgram
    layout: dict
    problem: TwoStageProblem
    x: np.ndarray
    uncertainty: object  # MonolithicEncoding or PolytopeSubset
    cfg: KktReformConfig
    Delta: float


@dataclass
class SubproblemResult:
    value: float
    v: np.ndarray
    y: np.ndarray
    lam: np.ndarray
    delta: np.ndarray | None
    solution: MilpSolution | None = field(default=None, repr=False)
    parts: int = 1

    def selected_subsets(self) -> tuple | None:
        """Index of the active subset at each step (SP2 only)."""
        if self.delta is None:
            return None
        return tuple(int(i) for i in np.argmax(self.delta, axis=1))


def _min_product(w, lo, hi):
    """Elementwise minimum of ``w * y`` over ``lo <= y <= hi`` (``-inf`` when unbounded)."""
    with np.errstate(invalid="ignore"):
        out = np.where(w > 0, w * lo, np.where(w < 0, w * hi, 0.0))
    return np.nan_to_num(out, nan=0.0, posinf=np.inf, neginf=-np.inf)


def implied_recourse_bounds(p: TwoStageProblem, x, v_box: np.ndarray, passes: int = 3):
    """Interval bounds on ``y`` and on the inequality slacks implied by primal feasibility.

    Each row ``W_i y <= h_i - T_i x - M_i v`` is read against the box for
    ``v`` and the current ``y`` intervals (both directions for equality
    rows); a few propagation passes usually settle. Returns ``(y_upper,
    slack_upper)``, with ``inf`` where nothing is implied.
    """
    rhs = p.h - p.T @ np.asarray(x, dtype=float)
    Mmin = _min_product(p.M, v_box[:, 0], v_box[:, 1]).sum(axis=1)
    Mmax = -_min_product(-p.M, v_box[:, 0], v_box[:, 1]).sum(axis=1)
    lo = np.where(np.isfinite(p.y_lower), p.y_lower, -np.inf)
    hi = np.full(p.num_y, np.inf)
    rows = [(p.W[i], rhs[i] - Mmin[i]) for i in range(p.num_rows)]
    rows += [(-p.W[i], -(rhs[i] - Mmax[i])) for i in np.flatnonzero(p.equality_rows)]
    for _ in range(passes):
        for w, r in rows:
            terms = _min_product(w, lo, hi)
            inf_count = np.count_nonzero(~np.isfinite(terms))
            finite_sum = terms[np.isfinite(terms)].sum()
            for j in np.flatnonzero(w):
                if inf_count - (not np.isfinite(terms[j])) > 0:
                    continue
                rest = finite_sum - (terms[j] if np.isfinite(terms[j]) else 0.0)
                cap = (r - rest) / w[j]
                if w[j] > 0:
                    hi[j] = min(hi[j], cap)
                else:
                    lo[j] = max(lo[j], cap)
    slack = rhs - Mmin - _min_product(p.W, lo, hi).sum(axis=1)
    return hi, slack


def _add_inner_kkt(bld: ProblemBuilder, p: TwoStageProblem, x, v: slice, Mc: float,
                   v_box: np.ndarray | None = None) -> dict:
    ny, nr = p.num_y, p.num_rows
    x = np.asarray(x, dtype=float)
    rhs = p.h - p.T @ x
    eq = p.equality_rows
    ineq = np.flatnonzero(~eq)
    bounded = np.flatnonzero(np.isfinite(p.y_lower))
    free_y = np.flatnonzero(~np.isfinite(p.y_lower))
    # primal-side constants: M_comp, or the implied bound when it is smaller
    M_slack = np.full(ineq.size, Mc)
    M_y = np.full(bounded.size, Mc)
    if v_box is not None:
        y_hi, slack_hi = implied_recourse_bounds(p, x, v_box)
        M_slack = np.minimum(Mc, np.maximum(slack_hi[ineq], 0.0) * (1 + 1e-9) + 1e-9)
        M_y = np.minimum(Mc, np.maximum(y_hi[bounded] - p.y_lower[bounded], 0.0) * (1 + 1e-9) + 1e-9)

    y = bld.add_vars("y", ny, p.y_lower, np.inf)
    lam_lb = np.where(eq, -np.inf, 0.0)
    lam = bld.add_vars("lam", nr, lam_lb, np.inf)
    z = bld.add_vars("z_row", ineq.size, 0.0, 1.0, binary=True)
    zb = bld.add_vars("z_bound", bounded.size, 0.0, 1.0, binary=True)

    # primal feasibility: W y + M v (<=|=) h - T x
    for i in range(nr):
        bld.add_rows([(y, p.W[i : i + 1]), (v, p.M[i : i + 1])], "=" if eq[i] else "<=", rhs[i : i + 1])
    # stationarity: W^T lam + b = pi, pi >= 0 on bounded y, pi = 0 on free y
    Wt = p.W.T
    if free_y.size:
        bld.add_rows([(lam, Wt[free_y])], "=", -p.b[free_y])
    if bounded.size:
        bld.add_rows([(lam, -Wt[bounded])], "<=", p.b[bounded])
        # pi_j <= Mc z_j ;  y_j - l_j <= Mc (1 - z_j)
        sel = np.zeros((bounded.size, ny))
        sel[np.arange(bounded.size), bounded] = 1.0
        bld.add_rows([(lam, Wt[bounded]), (zb, -Mc * np.eye(bounded.size))], "<=", -p.b[bounded])
        bld.add_rows([(y, sel), (zb, np.diag(M_y))], "<=", M_y + p.y_lower[bounded])
    if ineq.size:
        sel = np.zeros((ineq.size, nr))
        sel[np.arange(ineq.size), ineq] = 1.0
        # lam_i <= Mc z_i
        bld.add_rows([(lam, sel), (z, -Mc * np.eye(ineq.size))], "<=", np.zeros(ineq.size))
        # (h - T x - M v - W y)_i <= Mc (1 - z_i)
        bld.add_rows([(y, -p.W[ineq]), (v, -p.M[ineq]), (z, np.diag(M_slack))], "<=", M_slack - rhs[ineq])
    bld.set_objective([(y, p.b)])
    return dict(y=y, lam=lam, z_row=z, z_bound=zb, ineq=ineq, bounded=bounded)


def build_sp2(x, p: TwoStageProblem, enc: MonolithicEncoding, cfg: KktReformConfig | None = None) -> KktSubproblem:
    """Worst case over the whole product of unions as one MILP."""
    cfg = cfg or KktReformConfig()
    if enc.N * enc.step_dim != p.num_v:
        raise ValueError(f"encoding covers {enc.N * enc.step_dim} entries of v, problem has {p.num_v}")
    Delta = enc.Delta if cfg.Delta is None else cfg.Delta
    bld = ProblemBuilder()
    v, delta, w = enc.with_delta(Delta).add_to(bld)
    v_box = np.column_stack([np.asarray(bld._lb)[v], np.asarray(bld._ub)[v]]) if cfg.tighten else None
    layout = _add_inner_kkt(bld, p, x, v, cfg.M_comp, v_box)
    layout.update(v=v, delta=delta, w=w)
    return KktSubproblem(bld.build("max"), layout, p, np.asarray(x, float), enc, cfg, Delta)


def build_sp_dro_k(x, p: TwoStageProblem, subset: PolytopeSubset, cfg: KktReformConfig | None = None) -> KktSubproblem:
    """Worst case over a single polytope ``{v | D v <= d}``."""
    cfg = cfg or KktReformConfig()
    if subset.dim != p.num_v:
        raise ValueError(f"subset dimension {subset.dim} differs from {p.num_v}")
    box = subset.bounding_box
    Delta = max(1.1 * float(np.max(np.abs(box))), 1.0) if cfg.Delta is None else cfg.Delta
    bld = ProblemBuilder()
    lo = np.maximum(box[:, 0], -Delta)
    hi = np.minimum(box[:, 1], Delta)
    v = bld.add_vars("v", subset.dim, np.minimum(lo, hi), hi)
    bld.add_rows([(v, subset.D)], "<=", subset.d)
    layout = _add_inner_kkt(bld, p, x, v, cfg.M_comp, np.column_stack([lo, hi]) if cfg.tighten else None)
    layout.update(v=v)
    return KktSubproblem(bld.build("max"), layout, p, np.asarray(x, float), subset, cfg, Delta)


def solve_subproblem(sub: KktSubproblem) -> SubproblemResult:
    sol = solve_milp(sub.mip, gap_tol=sub.cfg.gap_tol, backend=sub.cfg.backend)
    if sol.status is not LpStatus.OPTIMAL:
        raise RecourseInfeasible(f"worst-case subproblem is {sol.status.value}; recourse is not relatively complete")
    lay = sub.layout
    z = sol.primal
    delta = None
    if "delta" in lay:
        enc = sub.uncertainty
        delta = np.round(z[lay["delta"]]).reshape(enc.N, enc.K)
    return SubproblemResult(float(sol.objective_value), z[lay["v"]].copy(), z[lay["y"]].copy(),
                            z[lay["lam"]].copy(), delta, sol)


def independent_blocks(p: TwoStageProblem, subset: PolytopeSubset) -> list[dict]:
    """Split rows, ``y``, ``v`` and subset rows into groups that share no coefficient.

    The worst case over a subset whose rows also split this way is the sum
    of the worst cases of the groups, each a much smaller MILP.
    """
    nr, ny, nv, nd = p.num_rows, p.num_y, p.num_v, subset.num_rows
    offsets = np.cumsum([0, nr, ny, nv])
    edges = []
    for mat, a, b in ((p.W, 0, offsets[1]), (p.M, 0, offsets[2]), (subset.D, offsets[3], offsets[2])):
        r, c = np.nonzero(mat)
        edges.append((r + a, c + b))
    rows = np.concatenate([e[0] for e in edges]).astype(int)
    cols = np.concatenate([e[1] for e in edges]).astype(int)
    n = offsets[3] + nd
    graph = coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
    count, labels = connected_components(graph, directed=False)
    groups = []
    for g in range(count):
        members = np.flatnonzero(labels == g)
        groups.append(dict(rows=members[members < offsets[1]],
                           y=members[(members >= offsets[1]) & (members < offsets[2])] - offsets[1],
                           v=members[(members >= offsets[2]) & (members < offsets[3])] - offsets[2],
                           d_rows=members[members >= offsets[3]] - offsets[3]))
    return groups


def solve_worst_case(x, p: TwoStageProblem, subset: PolytopeSubset,
                     cfg: KktReformConfig | None = None) -> SubproblemResult:
    """``max_{v in subset} min_y b^T y``, solved block by block when the data decouple."""
    cfg = cfg or KktReformConfig()
    groups = independent_blocks(p, subset)
    if sum(1 for g in groups if g["rows"].size and g["v"].size) <= 1:
        return solve_subproblem(build_sp_dro_k(x, p, subset, cfg))
    x = np.asarray(x, dtype=float)
    box = subset.bounding_box
    v_out, y_out, lam_out = np.zeros(p.num_v), np.zeros(p.num_y), np.zeros(p.num_rows)
    value, parts = 0.0, 0
    rhs = p.h - p.T @ x
    for g in groups:
        R, Y, V, Dr = g["rows"], g["y"], g["v"], g["d_rows"]
        if R.size and not Y.size and not V.size:  # rows that only involve x
            r, eq = rhs[R], p.equality_rows[R]
            if np.any(r < -1e-9) or np.any(np.abs(r[eq]) > 1e-9):
                raise RecourseInfeasible("a first-stage-only row of the recourse is violated")
            continue
        if not R.size and Y.size:  # unconstrained recourse entries
            lo, b = p.y_lower[Y], p.b[Y]
            if np.any(b < 0) or np.any((b != 0) & ~np.isfinite(lo)):
                raise RecourseUnbounded("a recourse entry appears in no row and lowers the cost without limit")
            y_out[Y] = np.where(np.isfinite(lo), lo, 0.0)
            value += float(b @ y_out[Y])
            continue
        if not R.size:  # uncertainty the recourse does not see: any feasible point
            if V.size:
                D = subset.D[np.ix_(Dr, V)]
                sol = solve_lp(LinearProgram(np.zeros(V.size), D, subset.d[Dr], ["<="] * Dr.size, box[V]))
                v_out[V] = sol.primal
            continue
        sub_p = p.replace(b=p.b[Y], T=p.T[R], W=p.W[np.ix_(R, Y)], M=p.M[np.ix_(R, V)], h=p.h[R],
                          y_lower=p.y_lower[Y], equality_rows=p.equality_rows[R], blocks=None)
        sub_s = PolytopeSubset(subset.D[np.ix_(Dr, V)], subset.d[Dr], subset.label, check=False)
        object.__setattr__(sub_s, "_box", box[V])
        res = solve_subproblem(build_sp_dro_k(x, sub_p, sub_s, cfg))
        v_out[V], y_out[Y], lam_out[R] = res.v, res.y, res.lam
        value += res.value
        parts += 1
    return SubproblemResult(value, v_out, y_out, lam_out, None, None, parts)


def _rebuild(sub: KktSubproblem, cfg: KktReformConfig) -> KktSubproblem:
    if isinstance(sub.uncertainty, MonolithicEncoding):
        return build_sp2(sub.x, sub.problem, sub.uncertainty, cfg)
    return build_sp_dro_k(sub.x, sub.problem, sub.uncertainty, cfg)


@dataclass
class BigMCheck:
    status: str  # "ok" or "suspect"
    value: float
    relaxed_value: float
    shift: float


def _value_or_nan(sub: KktSubproblem) -> float:
    try:
        return solve_subproblem(sub).value
    except RecourseInfeasible:
        return np.nan


def validate_bigM(sub: KktSubproblem, cfg: KktReformConfig | None = None, value: float | None = None) -> BigMCheck:
    """Re-solve with both big-M constants scaled up and compare optima."""
    cfg = cfg or sub.cfg
    if value is None:
        value = _value_or_nan(sub)
    rv = _value_or_nan(_rebuild(sub, cfg.scaled(cfg.validation_factor, sub.Delta)))
    # an infeasible solve at the original constants means they cut off the true KKT point
    shift = abs(rv - value) / max(1.0, abs(value)) if np.isfinite(rv) and np.isfinite(value) else np.inf
    return BigMCheck("ok" if shift <= VALIDATION_RTOL else "suspect", value, rv, shift)


def kkt_residuals(sub: KktSubproblem, res: SubproblemResult) -> dict:
    """Largest violations of the inner LP optimality conditions at a solution."""
    p = sub.problem
    r = p.h - p.T @ sub.x - p.M @ res.v
    slack = r - p.W @ res.y
    eq = p.equality_rows
    pi = p.b + p.W.T @ res.lam
    bounded = np.isfinite(p.y_lower)
    ygap = np.where(bounded, res.y - np.where(bounded, p.y_lower, 0.0), 0.0)
    primal = max(float(np.max(-slack[~eq], initial=0.0)), float(np.max(np.abs(slack[eq]), initial=0.0)),
                 float(np.max(-ygap, initial=0.0)))
    dual = max(float(np.max(-res.lam[~eq], initial=0.0)), float(np.max(-pi[bounded], initial=0.0)),
               float(np.max(np.abs(pi[~bounded]), initial=0.0)))
    comp = max(float(np.max(np.abs(res.lam[~eq] * slack[~eq]), initial=0.0)),
               float(np.max(np.abs(pi[bounded] * ygap[bounded]), initial=0.0)))
    return dict(primal=primal, dual=dual, complementarity=comp)
