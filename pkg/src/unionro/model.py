"""Two-stage robust problem data and the predictive-control stacker.

The problem is

    min_x  c^T x + max_{v in V} min_y b^T y
    s.t.   A x <= q,
           T x + W y + M v <= h     (rows flagged in ``equality_rows`` hold with =)

with ``x`` inside ``x_bounds`` (binaries where ``x_binary`` is set) and
``y >= y_lower``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, RecourseInfeasible, RecourseUnbounded
from .lp import LinearProgram, LpStatus, solve_lp
from .mip import MixedIntegerProgram, ProblemBuilder, solve_milp


def _mat(a, rows=None, cols=None):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1 and rows is not None and cols is not None and a.size == rows * cols:
        a = a.reshape(rows, cols)
    if a.size == 0 and rows is not None and cols is not None:
        a = a.reshape(rows, cols)
    return a


@dataclass(frozen=True, eq=False)
class TwoStageProblem:
    c: np.ndarray
    b: np.ndarray
    A: np.ndarray
    q: np.ndarray
    T: np.ndarray
    W: np.ndarray
    M: np.ndarray
    h: np.ndarray
    x_binary: np.ndarray | None = None
    x_bounds: np.ndarray | None = None
    y_lower: np.ndarray | None = None
    equality_rows: np.ndarray | None = None
    blocks: tuple | None = None
    name: str = ""

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).ravel()
        b = np.asarray(self.b, dtype=float).ravel()
        h = np.asarray(self.h, dtype=float).ravel()
        q = np.asarray(self.q, dtype=float).ravel()
        p, ny, nr = c.size, b.size, h.size
        A = _mat(self.A, q.size, p)
        T = _mat(self.T, nr, p)
        W = _mat(self.W, nr, ny)
        M = np.asarray(self.M, dtype=float)
        if M.ndim == 1:
            M = M.reshape(nr, -1) if nr else M.reshape(0, M.size)
        xb = np.zeros(p, dtype=bool) if self.x_binary is None else np.asarray(self.x_binary, dtype=bool).ravel()
        if self.x_bounds is None:
            bounds = np.tile([0.0, np.inf], (p, 1))
            if xb.size == p:
                bounds[xb, 1] = 1.0
        else:
            bounds = np.array(self.x_bounds, dtype=float).reshape(-1, 2)
        yl = np.zeros(ny) if self.y_lower is None else np.broadcast_to(
            np.asarray(self.y_lower, dtype=float), (ny,)).copy()
        eq = np.zeros(nr, dtype=bool) if self.equality_rows is None else np.asarray(self.equality_rows, dtype=bool).ravel()
        blocks = None if self.blocks is None else tuple(int(w) for w in self.blocks)
        for name, val in dict(c=c, b=b, A=A, q=q, T=T, W=W, M=M, h=h, x_binary=xb, x_bounds=bounds,
                              y_lower=yl, equality_rows=eq, blocks=blocks).items():
            object.__setattr__(self, name, val)

    @property
    def num_x(self) -> int:
        return self.c.size

    @property
    def num_y(self) -> int:
        return self.b.size

    @property
    def num_v(self) -> int:
        return self.M.shape[1]

    @property
    def num_rows(self) -> int:
        return self.h.size

    def block_slices(self) -> list[slice]:
        widths = self.blocks if self.blocks else (self.num_v,)
        starts = np.concatenate([[0], np.cumsum(widths)])
        return [slice(int(a), int(b)) for a, b in zip(starts[:-1], starts[1:])]

    def row_senses(self) -> list[str]:
        return ["=" if e else "<=" for e in self.equality_rows]

    def replace(self, **changes) -> "TwoStageProblem":
        fields = dict(c=self.c, b=self.b, A=self.A, q=self.q, T=self.T, W=self.W, M=self.M, h=self.h,
                      x_binary=self.x_binary, x_bounds=self.x_bounds, y_lower=self.y_lower,
                      equality_rows=self.equality_rows, blocks=self.blocks, name=self.name)
        fields.update(changes)
        return TwoStageProblem(**fields)


def validate(p: TwoStageProblem) -> list[str]:
    """Return a list of dimension problems; empty when the data is consistent."""
    out = []
    nx, ny, nr = p.num_x, p.num_y, p.num_rows
    if p.A.ndim != 2 or p.A.shape != (p.q.size, nx):
        out.append(f"A has shape {p.A.shape}, expected ({p.q.size}, {nx})")
    if p.T.ndim != 2 or p.T.shape != (nr, nx):
        out.append(f"T has shape {p.T.shape}, expected ({nr}, {nx})")
    if p.W.ndim != 2 or p.W.shape != (nr, ny):
        out.append(f"W has shape {p.W.shape}, expected ({nr}, {ny})")
    if p.M.ndim != 2 or p.M.shape[0] != nr:
        out.append(f"M has shape {p.M.shape}, expected {nr} rows")
    if p.x_binary.size != nx:
        out.append(f"x_binary has length {p.x_binary.size}, expected {nx}")
    if p.x_bounds.shape != (nx, 2):
        out.append(f"x_bounds has shape {p.x_bounds.shape}, expected ({nx}, 2)")
    elif np.any(p.x_bounds[:, 0] > p.x_bounds[:, 1]):
        out.append("x_bounds has lower > upper")
    if p.equality_rows.size != nr:
        out.append(f"equality_rows has length {p.equality_rows.size}, expected {nr}")
    if p.blocks is not None and p.M.ndim == 2 and sum(p.blocks) != p.M.shape[1]:
        out.append(f"block widths sum to {sum(p.blocks)} but M has {p.M.shape[1]} columns (m)")
    return out


def _require_valid(p: TwoStageProblem):
    diag = validate(p)
    if diag:
        raise DimensionMismatch("; ".join(diag))


# ---------------------------------------------------------------------------
# recourse


@dataclass
class RecourseResult:
    value: float
    y: np.ndarray
    duals: np.ndarray


def recourse_lp(p: TwoStageProblem, x, v) -> LinearProgram:
    rhs = p.h - p.T @ np.asarray(x, dtype=float) - p.M @ np.asarray(v, dtype=float)
    bounds = np.column_stack([p.y_lower, np.full(p.num_y, np.inf)])
    return LinearProgram(p.b, p.W, rhs, p.row_senses(), bounds)


def solve_recourse(p: TwoStageProblem, x, v) -> RecourseResult:
    sol = solve_lp(recourse_lp(p, x, v))
    if sol.status is LpStatus.INFEASIBLE:
        raise RecourseInfeasible("recourse problem infeasible at the given (x, v)")
    if sol.status is LpStatus.UNBOUNDED:
        raise RecourseUnbounded("recourse problem unbounded at the given (x, v)")
    return RecourseResult(sol.objective_value, sol.primal, sol.duals)


def evaluate_recourse(p: TwoStageProblem, x, v) -> float:
    """Optimal value of ``min_y b^T y`` s.t. ``W y <= h - T x - M v``."""
    return solve_recourse(p, x, v).value


def fixed_scenario_mip(p: TwoStageProblem, v) -> MixedIntegerProgram:
    """The single-scenario problem over (x, y) with ``v`` fixed."""
    bld = ProblemBuilder()
    xs = bld.add_vars("x", p.num_x, p.x_bounds[:, 0], p.x_bounds[:, 1])
    ys = bld.add_vars("y", p.num_y, p.y_lower, np.inf)
    if p.A.shape[0]:
        bld.add_rows([(xs, p.A)], "<=", p.q)
    rhs = p.h - p.M @ np.asarray(v, dtype=float)
    for i in range(p.num_rows):
        bld.add_rows([(xs, p.T[i : i + 1]), (ys, p.W[i : i + 1])], p.row_senses()[i], rhs[i : i + 1])
    bld.set_objective([(xs, p.c), (ys, p.b)])
    mip = bld.build()
    mask = np.zeros(mip.lp.num_vars, dtype=bool)
    mask[xs] = p.x_binary
    return MixedIntegerProgram(mip.lp, mask)


def solve_fixed_scenario(p: TwoStageProblem, v, backend: str = "bnb"):
    return solve_milp(fixed_scenario_mip(p, v), gap_tol=1e-9, backend=backend)


# ---------------------------------------------------------------------------
# predictive control


@dataclass(frozen=True, eq=False)
class LinearDynamics:
    """``s_{t+1} = Phi s_t + Gamma_u u_t + Gamma_v v_t + offset_t``.

    Costs are linear: ``cost_u @ u_t + cost_s @ s_{t+1}`` per step. State and
    input bounds may be given per step as ``(N, dim)`` arrays or broadcast.
    """

    Phi: np.ndarray
    Gamma_u: np.ndarray
    Gamma_v: np.ndarray
    s0: np.ndarray
    cost_u: np.ndarray
    cost_s: np.ndarray | None = None
    s_lower: np.ndarray | float = -np.inf
    s_upper: np.ndarray | float = np.inf
    u_lower: np.ndarray | float = 0.0
    u_upper: np.ndarray | float = np.inf
    offset: np.ndarray | None = None
    violation_penalty: float | None = None

    def __post_init__(self):
        Phi = np.atleast_2d(np.asarray(self.Phi, dtype=float))
        ns = Phi.shape[0]
        Gu = np.asarray(self.Gamma_u, dtype=float).reshape(ns, -1)
        Gv = np.asarray(self.Gamma_v, dtype=float).reshape(ns, -1)
        if Phi.shape != (ns, ns):
            raise DimensionMismatch(f"Phi must be square, got {Phi.shape}")
        s0 = np.asarray(self.s0, dtype=float).ravel()
        if s0.size != ns:
            raise DimensionMismatch("s0 length differs from state dimension")
        cu = np.broadcast_to(np.asarray(self.cost_u, dtype=float), (Gu.shape[1],)).copy()
        cs = np.zeros(ns) if self.cost_s is None else np.broadcast_to(
            np.asarray(self.cost_s, dtype=float), (ns,)).copy()
        for name, val in dict(Phi=Phi, Gamma_u=Gu, Gamma_v=Gv, s0=s0, cost_u=cu, cost_s=cs).items():
            object.__setattr__(self, name, val)

    @property
    def num_states(self) -> int:
        return self.Phi.shape[0]

    @property
    def num_inputs(self) -> int:
        return self.Gamma_u.shape[1]

    @property
    def num_disturbances(self) -> int:
        return self.Gamma_v.shape[1]


def _per_step(val, N, dim):
    arr = np.asarray(val, dtype=float)
    if arr.ndim == 0:
        return np.full((N, dim), float(arr))
    if arr.ndim == 1:
        if arr.size == dim:
            return np.tile(arr, (N, 1))
        if arr.size == N and dim == 1:
            return arr.reshape(N, 1)
    arr = arr.reshape(-1, dim)
    if arr.shape[0] < N:
        raise DimensionMismatch(f"per-step data has {arr.shape[0]} steps, horizon is {N}")
    return arr[:N]


def prediction_matrices(dyn: LinearDynamics, N: int):
    """Stacked maps with ``S = free + Su @ U + Sv @ V`` for states ``s_2..s_{N+1}``."""
    ns, nu, nv = dyn.num_states, dyn.num_inputs, dyn.num_disturbances
    offset = np.zeros((N, ns)) if dyn.offset is None else _per_step(dyn.offset, N, ns)
    Su = np.zeros((N * ns, N * nu))
    Sv = np.zeros((N * ns, N * nv))
    free = np.zeros(N * ns)
    powers = [np.eye(ns)]
    for _ in range(N):
        powers.append(dyn.Phi @ powers[-1])
    for t in range(N):
        rows = slice(t * ns, (t + 1) * ns)
        acc = powers[t + 1] @ dyn.s0
        for tau in range(t + 1):
            P = powers[t - tau]
            Su[rows, tau * nu : (tau + 1) * nu] = P @ dyn.Gamma_u
            Sv[rows, tau * nv : (tau + 1) * nv] = P @ dyn.Gamma_v
            acc = acc + P @ offset[tau]
        free[rows] = acc
    return free, Su, Sv


def stack_mpc(dyn: LinearDynamics, N: int) -> TwoStageProblem:
    """Cast the robust open-loop control problem over ``N`` steps as a two-stage problem.

    The whole input sequence is the first stage. The recourse holds one
    epigraph variable for the state cost and, when ``violation_penalty`` is
    set, one nonnegative slack per finite state bound.
    """
    if N < 1:
        raise ValueError("horizon must be at least 1")
    ns, nu, nv = dyn.num_states, dyn.num_inputs, dyn.num_disturbances
    free, Su, Sv = prediction_matrices(dyn, N)
    s_lo = _per_step(dyn.s_lower, N, ns).ravel()
    s_hi = _per_step(dyn.s_upper, N, ns).ravel()
    u_lo = _per_step(dyn.u_lower, N, nu).ravel()
    u_hi = _per_step(dyn.u_upper, N, nu).ravel()

    T_rows, M_rows, h_rows, kinds = [], [], [], []
    for i in range(N * ns):
        if np.isfinite(s_hi[i]):  # S_i <= hi
            T_rows.append(Su[i])
            M_rows.append(Sv[i])
            h_rows.append(s_hi[i] - free[i])
            kinds.append("bound")
        if np.isfinite(s_lo[i]):  # -S_i <= -lo
            T_rows.append(-Su[i])
            M_rows.append(-Sv[i])
            h_rows.append(free[i] - s_lo[i])
            kinds.append("bound")
    n_bound = len(h_rows)
    cost_s = np.tile(dyn.cost_s, N)
    has_state_cost = bool(np.any(cost_s))
    penalty = dyn.violation_penalty
    n_slack = n_bound if penalty is not None else 0
    ny = n_slack + (1 if has_state_cost else 0)

    W = np.zeros((n_bound, ny))
    if n_slack:
        W[:, :n_slack] = -np.eye(n_bound)
    T = np.array(T_rows).reshape(n_bound, N * nu)
    M = np.array(M_rows).reshape(n_bound, N * nv)
    h = np.array(h_rows, dtype=float)
    b = np.concatenate([np.full(n_slack, penalty if penalty is not None else 0.0),
                        [1.0] if has_state_cost else []])
    y_lower = np.concatenate([np.zeros(n_slack), [-np.inf] if has_state_cost else []])
    if has_state_cost:  # cost_s @ S - e <= 0
        T = np.vstack([T, cost_s @ Su])
        M = np.vstack([M, cost_s @ Sv])
        h = np.append(h, -cost_s @ free)
        erow = np.zeros((1, ny))
        erow[0, -1] = -1.0
        W = np.vstack([W, erow])
    x_bounds = np.column_stack([u_lo, u_hi])
    return TwoStageProblem(
        c=np.tile(dyn.cost_u, N), b=b, A=np.zeros((0, N * nu)), q=np.zeros(0),
        T=T, W=W, M=M, h=h, x_bounds=x_bounds, y_lower=y_lower,
        blocks=(nv,) * N, name=f"mpc_N{N}",
    )


def deterministic_mpc_lp(dyn: LinearDynamics, N: int, v=None) -> LinearProgram:
    """Direct LP over (u_1..u_N, s_2..s_{N+1}) with the dynamics as equality rows."""
    ns, nu, nv = dyn.num_states, dyn.num_inputs, dyn.num_disturbances
    v = np.zeros((N, nv)) if v is None else np.asarray(v, dtype=float).reshape(N, nv)
    offset = np.zeros((N, ns)) if dyn.offset is None else _per_step(dyn.offset, N, ns)
    nvars = N * nu + N * ns
    rows, rhs = [], []
    for t in range(N):
        for i in range(ns):
            row = np.zeros(nvars)
            row[N * nu + t * ns + i] = 1.0
            row[t * nu : (t + 1) * nu] = -dyn.Gamma_u[i]
            r = dyn.Gamma_v[i] @ v[t] + offset[t, i]
            if t == 0:
                r += dyn.Phi[i] @ dyn.s0
            else:
                row[N * nu + (t - 1) * ns : N * nu + t * ns] = -dyn.Phi[i]
            rows.append(row)
            rhs.append(r)
    c = np.concatenate([np.tile(dyn.cost_u, N), np.tile(dyn.cost_s, N)])
    bounds = np.vstack([
        np.column_stack([_per_step(dyn.u_lower, N, nu).ravel(), _per_step(dyn.u_upper, N, nu).ravel()]),
        np.column_stack([_per_step(dyn.s_lower, N, ns).ravel(), _per_step(dyn.s_upper, N, ns).ravel()]),
    ])
    return LinearProgram(c, np.array(rows), np.array(rhs), ["="] * len(rhs), bounds)
