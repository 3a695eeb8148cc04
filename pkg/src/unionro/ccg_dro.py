"""Distributionally robust objective over subset probabilities with a KL ball.

The worst-case expectation of per-subset costs ``C`` over

    P = {p >= 0, sum p = 1, sum_k p_k log(p_k / pbar_k) <= rho}

equals ``min_{mu, nu >= 0} mu + rho nu + nu sum_k pbar_k exp((C_k - mu)/nu - 1)``.
``solve_algorithm2`` embeds that expression as convex rows of a master
problem handled by outer approximation.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import minimize, minimize_scalar
from scipy.special import logsumexp, rel_entr

from .bilevel import KktReformConfig, solve_worst_case
from .ccg_ro import ETA_FLOOR, CcgTrace, IterationRecord, is_repeat
from .errors import DimensionMismatch, IterationLimit, RecourseInfeasible
from .mip import ConvexConstraint, MixedIntegerProgram, ProblemBuilder, solve_convex_mip
from .model import TwoStageProblem, _require_valid, evaluate_recourse, solve_recourse
from .uncertainty import UnionSet

NU_GUARD = 1e-9
# ratios t/nu at which every exponential term gets a starting tangent
SEED_RATIOS = (-3.0, -1.0, 0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 5.0)
RATIO_CLIP = 15.0
RATIO_DROP = -40.0


class Variant(str, Enum):
    DIRECT_EXP = "DirectExp"
    PHI_REFORM = "PhiReform"


@dataclass(frozen=True, eq=False)
class AmbiguitySet:
    p_bar: np.ndarray
    rho: float

    def __post_init__(self):
        p = np.asarray(self.p_bar, dtype=float).ravel()
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("nominal probabilities must be nonnegative and sum to 1")
        if self.rho < 0:
            raise ValueError("KL radius must be nonnegative")
        object.__setattr__(self, "p_bar", p)
        object.__setattr__(self, "rho", float(self.rho))

    @property
    def K(self) -> int:
        return self.p_bar.size

    def contains(self, p, tol: float = 1e-12) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= -tol) and abs(p.sum() - 1) <= 1e-9 and kl_divergence(p, self.p_bar) <= self.rho + tol)


def kl_divergence(p, p_bar) -> float:
    """``sum_k p_k log(p_k / pbar_k)`` with ``0 log 0 = 0``; infinite if ``p`` leaves the support."""
    return float(np.sum(rel_entr(np.asarray(p, dtype=float), np.asarray(p_bar, dtype=float))))


# ---------------------------------------------------------------------------
# worst-case expectation


@dataclass
class DualValue:
    value: float
    mu: float
    nu: float


def exp_row_value(mu, nu, s, amb: AmbiguitySet) -> float:
    """``mu + rho nu + nu sum_k pbar_k exp((s_k - mu)/nu - 1)``; ``inf`` on overflow."""
    sup = amb.p_bar > 0
    if nu <= 0:
        return float(mu) if np.all(np.asarray(s)[sup] <= mu) else np.inf
    e = (np.asarray(s, dtype=float)[sup] - mu) / nu - 1.0
    with np.errstate(over="ignore"):
        return float(mu + amb.rho * nu + nu * np.sum(amb.p_bar[sup] * np.exp(e)))


def _value_at_nu(nu, C, logp, rho):
    return rho * nu + nu * logsumexp(logp + C / nu)


def worst_case_expectation_dual(C, amb: AmbiguitySet) -> DualValue:
    """Minimize the two-variable dual; ``mu`` is eliminated in closed form.

    For fixed ``nu`` the best ``mu`` is ``nu log sum pbar exp(C/nu) - nu``, which
    leaves ``rho nu + nu log sum pbar exp(C/nu)``: convex in ``nu``. That is
    minimized over ``log nu`` and compared with the ``nu -> 0`` limit
    ``max_k C_k`` (over the support of ``pbar``). ``rho = 0`` returns the
    nominal mean with ``nu = inf``.
    """
    C = np.asarray(C, dtype=float).ravel()
    if C.size != amb.K:
        raise DimensionMismatch(f"{C.size} costs for {amb.K} subsets")
    sup = amb.p_bar > 0
    Cs, ps = C[sup], amb.p_bar[sup]
    top = float(Cs.max())
    mean = float(ps @ Cs)
    if amb.rho == 0.0:
        return DualValue(mean, mean, np.inf)
    spread = top - float(Cs.min())
    if spread <= 1e-14 * max(1.0, abs(top)):
        return DualValue(top, top, 0.0)
    shifted = Cs - top  # value(nu) = top + value of the shifted problem
    logp = np.log(ps)
    lo, hi = np.log(spread * 1e-10), np.log(spread * 1e10 / max(amb.rho, 1e-12) + spread)
    f = lambda t: _value_at_nu(np.exp(t), shifted, logp, amb.rho)
    grid = np.linspace(lo, hi, 81)
    vals = np.array([f(t) for t in grid])
    i = int(np.argmin(vals))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    res = minimize_scalar(f, bounds=(a, b), method="bounded", options=dict(xatol=1e-12, maxiter=500))
    t = float(res.x) if res.fun <= vals[i] else float(grid[i])
    best = min(float(res.fun), float(vals[i]))
    if best >= 0.0:  # the nu -> 0 limit is at least as good
        return DualValue(top, top, 0.0)
    nu = float(np.exp(t))
    mu = top + nu * logsumexp(logp + shifted / nu) - nu
    return DualValue(top + best, float(mu), nu)


@dataclass
class PrimalValue:
    value: float
    p: np.ndarray


def worst_case_expectation_primal(C, amb: AmbiguitySet, starts: int = 6, seed: int = 0) -> PrimalValue:
    """Maximize ``p @ C`` over the KL ball directly with SLSQP from several starts.

    Point masses on a single subset are checked separately since they sit on
    the boundary where the KL gradient is unbounded.
    """
    C = np.asarray(C, dtype=float).ravel()
    p_bar = amb.p_bar
    sup = np.flatnonzero(p_bar > 0)
    Cs, ps = C[sup], p_bar[sup]
    best_p = p_bar.copy()
    best = float(p_bar @ C)
    # vertices of the simplex that lie inside the ball
    for j in range(sup.size):
        if -np.log(ps[j]) <= amb.rho + 1e-12 and Cs[j] > best:
            best = float(Cs[j])
            best_p = np.zeros_like(p_bar)
            best_p[sup[j]] = 1.0
    if amb.rho == 0.0 or sup.size == 1:
        return PrimalValue(best, best_p)
    scale = max(1.0, float(np.abs(Cs).max()))
    floor = 1e-300

    def kl(q):
        q = np.maximum(q, floor)
        return float(np.sum(q * np.log(q / ps)))

    def kl_grad(q):
        q = np.maximum(q, floor)
        return np.log(q / ps) + 1.0

    cons = [
        dict(type="eq", fun=lambda q: q.sum() - 1.0, jac=lambda q: np.ones_like(q)),
        dict(type="ineq", fun=lambda q: amb.rho - kl(q), jac=lambda q: -kl_grad(q)),
    ]
    rng = np.random.default_rng(seed)
    tops = np.argsort(-Cs)
    seeds = [ps.copy()]
    for lam in (0.5, 0.9):
        seeds.append((1 - lam) * ps + lam * np.eye(sup.size)[tops[0]])
    while len(seeds) < starts:
        seeds.append(rng.dirichlet(np.ones(sup.size)))
    for q0 in seeds:
        res = minimize(lambda q: -(q @ Cs) / scale, q0, jac=lambda q: -Cs / scale, method="SLSQP",
                       bounds=[(0.0, 1.0)] * sup.size, constraints=cons,
                       options=dict(ftol=1e-15, maxiter=500))
        q = np.clip(res.x, 0.0, 1.0)
        q = q / q.sum()
        # pull back inside the ball if the solver overshot slightly
        if kl(q) > amb.rho:
            lo_t, hi_t = 0.0, 1.0
            for _ in range(80):
                mid = 0.5 * (lo_t + hi_t)
                lo_t, hi_t = (lo_t, mid) if kl((1 - mid) * q + mid * ps) <= amb.rho else (mid, hi_t)
            q = (1 - hi_t) * q + hi_t * ps
        if kl(q) <= amb.rho + 1e-12 and q @ Cs > best:
            best = float(q @ Cs)
            best_p = np.zeros_like(p_bar)
            best_p[sup] = q
    return PrimalValue(best, best_p)


def perspective_exp_hessian(x: float, y: float) -> np.ndarray:
    """Hessian of ``f(x, y) = x exp(y/x - 1)`` for ``x > 0``."""
    u = y / x
    s = np.exp(u - 1.0) / x
    return s * np.array([[u * u, -u], [-u, 1.0]])


def perspective_exp_min_eigenvalue(x: float, y: float) -> float:
    """Smallest Hessian eigenvalue of ``x exp(y/x - 1)``, using ``H = s G`` with ``s > 0``.

    Factoring out the positive scale keeps the rounding error of the
    determinant independent of how large ``exp(y/x)`` gets.
    """
    u = y / x
    G = np.array([[u * u, -u], [-u, 1.0]])
    return float(np.exp(u - 1.0) / x) * min_eigenvalue_sym2(G)


def min_eigenvalue_sym2(H: np.ndarray) -> float:
    """Smallest eigenvalue of a symmetric 2x2 matrix, as ``det / lambda_max``."""
    a, b, c = H[0, 0], H[0, 1], H[1, 1]
    big = 0.5 * (a + c) + np.hypot(0.5 * (a - c), b)
    if big == 0.0:
        return 0.0
    return float((a * c - b * b) / big) if big > 0 else float(0.5 * (a + c) - np.hypot(0.5 * (a - c), b))


# ---------------------------------------------------------------------------
# master problem


def _tangent_terms(t, nu):
    """Per-term tangent coefficients of ``nu exp(t/nu - 1)`` at ratio ``t/nu``.

    The function is positively homogeneous, so ``a t + a (1 - r) nu`` with
    ``a = exp(r - 1)`` supports it everywhere for any ratio ``r``.
    """
    r = np.minimum(t / nu, RATIO_CLIP)
    a = np.where(r < RATIO_DROP, 0.0, np.exp(r - 1.0))
    return a, a * (1.0 - np.where(r < RATIO_DROP, 0.0, r))


class _ExpRow:
    """``mu + rho nu + nu sum_k pbar_k exp((s_k - mu)/nu - 1) - eta <= 0``.

    Local layout is ``[eta, mu, nu, u]`` with ``s = S @ u``: under the
    per-iteration variant ``u`` stacks the recourse copies and ``S`` applies
    ``b``; under the auxiliary variant ``u = phi`` and ``S = I``.
    """

    def __init__(self, amb: AmbiguitySet, S: np.ndarray):
        self.amb = amb
        self.sup = amb.p_bar > 0
        self.pk = amb.p_bar[self.sup]
        self.S = S[self.sup]

    def split(self, z):
        return z[0], z[1], z[2], self.S @ z[3:]

    def fun(self, z):
        eta, mu, nu, s = self.split(z)
        e = (s - mu) / nu - 1.0
        with np.errstate(over="ignore"):
            w = self.pk * np.exp(e)
        val = mu + self.amb.rho * nu + nu * w.sum() - eta
        g_mu = 1.0 - w.sum()
        if not np.all(np.isfinite(w)):
            return np.inf, np.full(z.size, np.nan)
        g_nu = self.amb.rho + np.sum(w * (1.0 - (s - mu) / nu))
        grad = np.concatenate([[-1.0, g_mu, g_nu], w @ self.S])
        return float(val), grad

    def cut(self, a, bnu):
        """Linear cut from per-term tangent coefficients (``coef @ z <= rhs``)."""
        w = self.pk * a
        coef = np.concatenate([[-1.0, 1.0 - w.sum(), self.amb.rho + self.pk @ bnu], w @ self.S])
        return coef, 0.0

    def seed_cuts(self):
        cuts = []
        for r in SEED_RATIOS:
            a = np.full(self.pk.size, np.exp(r - 1.0))
            cuts.append(self.cut(a, a * (1.0 - r)))
        # eta >= s_j + (rho + log pbar_j) nu, from keeping one term and minimizing over mu
        for j in range(self.pk.size):
            coef = np.concatenate([[-1.0, 0.0, self.amb.rho + np.log(self.pk[j])], self.S[j]])
            cuts.append((coef, 0.0))
        return cuts

    def cutter(self, z):
        eta, mu, nu, s = self.split(z)
        nu = max(nu, NU_GUARD)
        cuts = [self.cut(*_tangent_terms(s - mu, nu))]
        # supporting plane of the worst-case expectation at s: eta >= p* @ s
        dv = worst_case_expectation_dual(self._full(s), self.amb)
        p_star = self._tilted(s, dv)
        if p_star is not None:
            coef = np.concatenate([[-1.0, 0.0, 0.0], p_star @ self.S])
            cuts.append((coef, 0.0))
        return cuts

    def _full(self, s):
        C = np.zeros(self.amb.K)
        C[self.sup] = s
        C[~self.sup] = s.min() if s.size else 0.0
        return C

    def _tilted(self, s, dv: DualValue):
        if not np.isfinite(dv.nu):
            return self.pk.copy()
        if dv.nu <= 0:
            q = np.zeros(self.pk.size)
            q[int(np.argmax(s))] = 1.0
            return q if -np.log(self.pk[int(np.argmax(s))]) <= self.amb.rho + 1e-12 else None
        logw = np.log(self.pk) + (s - s.max()) / dv.nu
        q = np.exp(logw - logsumexp(logw))
        return q if kl_divergence(q, self.pk) <= self.amb.rho + 1e-10 else None


@dataclass
class DroMaster:
    mip: MixedIntegerProgram
    convex: list
    layout: dict
    rows: list = field(default_factory=list)
    amb: AmbiguitySet | None = None
    problem: TwoStageProblem | None = None
    scenarios: dict = field(default_factory=dict)

    def _least_recourse(self, z: np.ndarray) -> np.ndarray:
        """Replace each recourse copy by a cheapest one at the same ``x`` (and ``phi`` by its floor).

        The copies carry no cost and the exponential rows increase in
        ``b @ y``, so this only lowers the row values.
        """
        lay, p = self.layout, self.problem
        x = z[lay["x"]]
        for (k, i), y in lay["y"].items():
            z[y] = solve_recourse(p, x, self.scenarios[k, i]).y
        if lay["phi"] is not None:
            for k in range(self.amb.K):
                z[lay["phi"].start + k] = max(p.b @ z[y] for (kk, _), y in lay["y"].items() if kk == k)
        return z

    def repair(self, z: np.ndarray) -> np.ndarray:
        """Lower the recourse copies, then reset ``(mu, nu)`` to the best dual pair among the rows' exact optima.

        None of these variables has a cost, and any point satisfying the
        convex rows satisfies every cut, so this keeps the objective and
        feasibility.
        """
        if not self.rows:
            return z
        if self.problem is not None:
            try:
                z = self._least_recourse(z.copy())
            except RecourseInfeasible:
                pass
        mu_i, nu_i = self.layout["mu"].start, self.layout["nu"].start
        best, best_gap = None, np.inf
        for row, cons in zip(self.rows, self.convex):
            s = row.split(z[cons.indices])[3]
            dv = worst_case_expectation_dual(row._full(s), self.amb)
            nu = float(np.clip(dv.nu, NU_GUARD, 1e12))
            logw = np.log(row.pk) + s / nu
            mu = nu * float(logsumexp(logw)) - nu
            trial = z.copy()
            trial[mu_i], trial[nu_i] = mu, nu
            gap = max(c.fun(trial[c.indices])[0] for c in self.convex)
            if gap < best_gap:
                best, best_gap = trial, gap
        return z if best is None else best


def build_master_dro(scenario_sets, p: TwoStageProblem, amb: AmbiguitySet,
                     variant: Variant | str = Variant.PHI_REFORM) -> DroMaster:
    """Master over ``(x, eta, mu, nu, y_{k,i}[, phi_k])`` with exponential rows as convex constraints.

    ``scenario_sets[k]`` lists the scenarios generated so far for subset ``k``;
    all lists have the same length ``r``.
    """
    _require_valid(p)
    variant = Variant(variant)
    K = amb.K
    if len(scenario_sets) != K:
        raise DimensionMismatch(f"{len(scenario_sets)} scenario lists for {K} subsets")
    r = len(scenario_sets[0])
    if any(len(s) != r for s in scenario_sets):
        raise DimensionMismatch("every subset needs the same number of scenarios")
    bld = ProblemBuilder()
    x = bld.add_vars("x", p.num_x, p.x_bounds[:, 0], p.x_bounds[:, 1])
    eta = bld.add_vars("eta", 1, ETA_FLOOR if r == 0 else -np.inf, np.inf)
    mu = bld.add_vars("mu", 1, -np.inf, np.inf)
    nu = bld.add_vars("nu", 1, NU_GUARD, np.inf)
    if p.A.shape[0]:
        bld.add_rows([(x, p.A)], "<=", p.q)
    ys, scen = {}, {}
    for i in range(r):
        for k in range(K):
            v = np.asarray(scenario_sets[k][i], dtype=float).ravel()
            if v.size != p.num_v:
                raise DimensionMismatch(f"scenario ({k}, {i}) has {v.size} entries, expected {p.num_v}")
            y = bld.add_vars(f"y{k}_{i}", p.num_y, p.y_lower, np.inf)
            ys[k, i], scen[k, i] = y, v
            rhs = p.h - p.M @ v
            for s in ("<=", "="):
                rows = np.flatnonzero(p.equality_rows == (s == "="))
                if rows.size:
                    bld.add_rows([(x, p.T[rows]), (y, p.W[rows])], s, rhs[rows])
    phi = None
    if variant is Variant.PHI_REFORM and r:
        phi = bld.add_vars("phi", K, -np.inf, np.inf)
        for (k, i), y in ys.items():
            bld.add_rows([(y, p.b.reshape(1, -1)), (slice(phi.start + k, phi.start + k + 1), -np.ones((1, 1)))],
                         "<=", np.zeros(1))
    head = [eta.start, mu.start, nu.start]
    convex, exp_rows = [], []
    if r and amb.rho == 0.0:
        # the ball is the single point pbar: eta >= pbar @ s, linear
        groups = [[ys[k, i] for k in range(K)] for i in range(r)] if phi is None else None
        if phi is not None:
            bld.add_rows([(phi, amb.p_bar.reshape(1, -1)), (eta, -np.ones((1, 1)))], "<=", np.zeros(1))
        else:
            for grp in groups:
                terms = [(y, amb.p_bar[k] * p.b.reshape(1, -1)) for k, y in enumerate(grp)]
                bld.add_rows(terms + [(eta, -np.ones((1, 1)))], "<=", np.zeros(1))
    elif r:
        if phi is not None:
            row = _ExpRow(amb, np.eye(K))
            idx = np.array(head + list(range(phi.start, phi.stop)))
            convex.append(_convex(row, idx, "phi"))
            exp_rows.append(row)
        else:
            S = np.kron(np.eye(K), p.b.reshape(1, -1))
            for i in range(r):
                row = _ExpRow(amb, S)
                idx = np.array(head + [j for k in range(K) for j in range(ys[k, i].start, ys[k, i].stop)])
                convex.append(_convex(row, idx, f"iteration {i}"))
                exp_rows.append(row)
    bld.set_objective([(x, p.c), (eta, np.ones(1))])
    mip = bld.build()
    mask = np.zeros(mip.lp.num_vars, dtype=bool)
    mask[x] = p.x_binary
    layout = dict(x=x, eta=eta, mu=mu, nu=nu, phi=phi, y=ys)
    return DroMaster(MixedIntegerProgram(mip.lp, mask), convex, layout, exp_rows, amb, p, scen)


def _convex(row: _ExpRow, idx, name) -> ConvexConstraint:
    return ConvexConstraint(indices=idx, fun=row.fun, guard={2: NU_GUARD}, cutter=row.cutter,
                            initial_cuts=row.seed_cuts(), name=f"exp row ({name})")


# ---------------------------------------------------------------------------
# algorithm


@dataclass
class DroSolution:
    x: np.ndarray
    objective: float
    master_objective: float
    eta: float
    mu: float
    nu: float
    subset_costs: np.ndarray
    scenarios: list
    trace: CcgTrace
    variant: Variant
    oa_rounds: list = field(default_factory=list)


def solve_algorithm2(p: TwoStageProblem, u: UnionSet, amb: AmbiguitySet, eps: float = 1e-6,
                     variant: Variant | str = Variant.PHI_REFORM, cfg: KktReformConfig | None = None,
                     oa_tol: float = 1e-8, max_iter: int = 100) -> DroSolution:
    """CCG over subsets: one convex master and K worst-case MILPs per iteration.

    The reported ``objective`` is ``c @ x* + psi(C(x*))`` with ``psi`` the
    accurately evaluated worst-case expectation at the final subset costs;
    ``master_objective`` is the last lower bound ``c @ x* + eta*``.
    """
    _require_valid(p)
    variant = Variant(variant)
    cfg = cfg or KktReformConfig()
    if u.K != amb.K:
        raise DimensionMismatch(f"union has {u.K} subsets but the ambiguity set has {amb.K}")
    if u.dim != p.num_v:
        raise DimensionMismatch(f"union dimension {u.dim} differs from {p.num_v}")
    K = amb.K
    trace = CcgTrace()
    sets: list[list[np.ndarray]] = [[] for _ in range(K)]
    lb, ub = -np.inf, np.inf
    start = time.perf_counter()
    rounds = []
    for it in range(max_iter):
        master = build_master_dro(sets, p, amb, variant)
        sol = solve_convex_mip(master.mip, master.convex, oa_tol=oa_tol, backend=cfg.backend, repair=master.repair)
        if not sol.optimal:
            raise RuntimeError(f"DRO master problem is {sol.status.value}")
        rounds.append(sol.oa_rounds)
        z = sol.primal
        lay = master.layout
        x = z[lay["x"]].copy()
        x[p.x_binary] = np.round(x[p.x_binary])
        eta, mu, nu = float(z[lay["eta"]][0]), float(z[lay["mu"]][0]), float(z[lay["nu"]][0])
        lb = max(lb, float(p.c @ x + eta))

        costs = np.zeros(K)
        worst = []
        for k, sub in enumerate(u.subsets):
            res = solve_worst_case(x, p, sub, cfg)
            worst.append(res.v)
            costs[k] = evaluate_recourse(p, x, res.v)
        if amb.rho == 0.0:
            bound = float(amb.p_bar @ costs)
        else:
            bound = exp_row_value(mu, nu, costs, amb)
        ub = min(ub, float(p.c @ x) + bound)
        trace.records.append(IterationRecord(it, lb, ub, np.concatenate(worst), K,
                                             time.perf_counter() - start, it == 0))
        if variant is Variant.PHI_REFORM:
            repeat = it > 0 and all(is_repeat(worst[k], sets[k]) for k in range(K))
        else:
            repeat = any(all(np.max(np.abs(worst[k] - sets[k][i]), initial=0.0) <= 1e-9 for k in range(K))
                         for i in range(len(sets[0])))
        if ub - lb <= eps or repeat:
            trace.status = "converged" if ub - lb <= eps else "repeat"
            dv = worst_case_expectation_dual(costs, amb)
            return DroSolution(x, float(p.c @ x) + dv.value, float(p.c @ x + eta), eta, dv.mu, dv.nu,
                               costs, worst, trace, variant, rounds)
        for k in range(K):
            sets[k].append(worst[k])
    trace.status = "iteration_limit"
    raise IterationLimit(f"no convergence within {max_iter} iterations (gap {ub - lb:.3g})")
