"""Benchmark problem builders: random instances, facility location, process network planning, building climate control."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..ccg_dro import AmbiguitySet
from ..errors import DimensionMismatch, GraphInconsistent
from ..lp import LinearProgram, LpStatus, solve_lp
from ..model import LinearDynamics, TwoStageProblem, stack_mpc
from ..uncertainty import MonolithicEncoding, PolytopeSubset, ProductUnionSet, UnionSet, encode_monolithic


@dataclass
class Case:
    """A problem with its uncertainty and, for distributionally robust runs, an ambiguity set."""

    name: str
    problem: TwoStageProblem
    union: UnionSet | ProductUnionSet
    ambiguity: AmbiguitySet | None = None
    params: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# random instances with relatively complete recourse


def random_subset(rng: np.random.Generator, m: int, label: int) -> PolytopeSubset:
    """A box of half-widths in [0.3, 1] centred in [-2, 2]^m, sometimes cut by one halfspace (m = 2)."""
    c = rng.uniform(-2, 2, m)
    r = rng.uniform(0.3, 1.0, m)
    D = [np.eye(m), -np.eye(m)]
    d = [c + r, r - c]
    if m == 2 and rng.random() < 0.5:
        a = rng.normal(size=(1, 2))
        D.append(a)
        d.append(a @ c + rng.uniform(0.1, 0.5, 1))
    return PolytopeSubset(np.vstack(D), np.concatenate(d), label)


def random_instance(seed: int, m: int = 2, K: int = 2, N: int = 2, ny: int = 2, nrows: int = 3,
                    nx: int = 2) -> tuple[TwoStageProblem, ProductUnionSet, np.ndarray]:
    """Random problem, product union and a sample first-stage point.

    Recourse rows read ``G y >= g0 + F v - E x`` with ``G >= 0`` and one
    boosted entry per row, so some ``y >= 0`` always exists and ``b > 0``
    keeps the recourse bounded.
    """
    rng = np.random.default_rng(seed)
    G = rng.uniform(0, 1, (nrows, ny))
    G[np.arange(nrows), rng.integers(0, ny, nrows)] += 0.5
    F = rng.normal(size=(nrows, N * m))
    E = rng.uniform(0, 1, (nrows, nx))
    g0 = rng.uniform(0, 2, nrows)
    prob = TwoStageProblem(
        c=rng.uniform(0.5, 2, nx), b=rng.uniform(0.5, 2, ny), A=np.ones((1, nx)), q=[4.0],
        T=-E, W=-G, M=F, h=-g0, x_bounds=np.tile([0, 3.0], (nx, 1)), blocks=(m,) * N,
        name=f"random_s{seed}_m{m}_K{K}_N{N}",
    )
    u = UnionSet([random_subset(rng, m, k) for k in range(K)])
    return prob, ProductUnionSet(u, N), rng.uniform(0, 1.5, nx)


# ---------------------------------------------------------------------------
# facility location with transportation recourse

LOCATION_FIXED_COST = np.array([400.0, 414.0, 326.0])
LOCATION_CAPACITY_COST = np.array([18.0, 25.0, 20.0])
LOCATION_TRANSPORT_COST = np.array([[22.0, 33.0, 24.0], [33.0, 23.0, 30.0], [20.0, 25.0, 27.0]])
LOCATION_DEMAND = np.array([206.0, 274.0, 220.0])
LOCATION_DEMAND_SCALE = 40.0
LOCATION_MAX_CAPACITY = 800.0
LOCATION_P_BAR = (0.7, 0.1, 0.1, 0.1)
LOCATION_RHO = 0.5


def location_subsets(seed: int = 7, K: int = 4) -> UnionSet:
    """K boxes in the unit cube, each trimmed by a total-deviation budget."""
    rng = np.random.default_rng(seed)
    subs = []
    for k in range(K):
        lo = rng.uniform(0.0, 0.6, 3)
        hi = lo + rng.uniform(0.2, 0.6, 3)
        budget = float(lo.sum() + rng.uniform(0.4, 0.8) * (hi - lo).sum())
        base = PolytopeSubset.box(lo, hi)
        subs.append(PolytopeSubset(np.vstack([base.D, np.ones((1, 3))]), np.append(base.d, budget), k))
    return UnionSet(subs)


def _max_linear(u: UnionSet, w: np.ndarray) -> float:
    best = -np.inf
    for s in u.subsets:
        sol = solve_lp(LinearProgram(-w, s.D, s.d, ["<="] * s.num_rows, np.tile([-np.inf, np.inf], (s.dim, 1))))
        if sol.status is not LpStatus.OPTIMAL:
            raise ValueError("subset LP did not solve")
        best = max(best, -sol.objective_value)
    return best


def build_location_transportation(uncertainty: UnionSet | None = None) -> TwoStageProblem:
    """Open facilities (binary), size them, then ship to uncertain demands ``d + 40 v``.

    First stage ``x = [open_1..3, capacity_1..3]`` with
    ``0 <= capacity_i <= 800 open_i``. A first-stage row requires total
    capacity to cover the largest total demand over the union, which is
    exactly what keeps every shipment subproblem feasible.
    """
    u = location_subsets() if uncertainty is None else uncertainty
    if u.dim != 3:
        raise DimensionMismatch(f"location demand uncertainty must be 3-D, got {u.dim}")
    peak = LOCATION_DEMAND.sum() + LOCATION_DEMAND_SCALE * _max_linear(u, np.ones(3))
    A = np.vstack([
        np.hstack([-LOCATION_MAX_CAPACITY * np.eye(3), np.eye(3)]),
        np.concatenate([np.zeros(3), -np.ones(3)]),
    ])
    q = np.concatenate([np.zeros(3), [-peak]])
    # y_ij at position 3 i + j
    supply = np.kron(np.eye(3), np.ones((1, 3)))
    demand = np.kron(np.ones((1, 3)), np.eye(3))
    T = np.vstack([np.hstack([np.zeros((3, 3)), -np.eye(3)]), np.zeros((3, 6))])
    W = np.vstack([supply, -demand])
    M = np.vstack([np.zeros((3, 3)), LOCATION_DEMAND_SCALE * np.eye(3)])
    h = np.concatenate([np.zeros(3), -LOCATION_DEMAND])
    x_bounds = np.vstack([np.tile([0.0, 1.0], (3, 1)), np.tile([0.0, LOCATION_MAX_CAPACITY], (3, 1))])
    return TwoStageProblem(
        c=np.concatenate([LOCATION_FIXED_COST, LOCATION_CAPACITY_COST]), b=LOCATION_TRANSPORT_COST.ravel(),
        A=A, q=q, T=T, W=W, M=M, h=h, x_binary=np.array([True] * 3 + [False] * 3), x_bounds=x_bounds,
        name="location_transportation",
    )


def location_case(seed: int = 7, K: int = 4) -> Case:
    u = location_subsets(seed, K)
    p_bar = np.array(LOCATION_P_BAR) if K == 4 else np.full(K, 1.0 / K)
    return Case("location", build_location_transportation(u), u, AmbiguitySet(p_bar, LOCATION_RHO),
                dict(seed=seed, K=K, reference_v=[0.0] * 3))


# ---------------------------------------------------------------------------
# chemical process network planning

CHEMICALS = ("A", "B", "C", "D", "E", "F", "G")
RAW = ("A", "E")
PRODUCTS = ("D", "G")
# process -> {chemical: kappa}; kappa > 0 is consumed per unit of operation, kappa < 0 is produced
DEFAULT_NETWORK = (
    {"A": 1.1, "B": -1.0},
    {"A": 1.2, "C": -1.0},
    {"B": 1.05, "D": -1.0},
    {"C": 1.1, "D": -1.0},
    {"E": 1.1, "F": -1.0},
    {"F": 1.05, "G": -1.0},
    {"E": 1.3, "G": -1.0},
    {"B": 0.5, "F": 0.6, "G": -1.0},
)
CPNP_P_BAR = (0.5, 0.1, 0.2, 0.2)
CPNP_RHO = 0.5


@dataclass
class CpnpParams:
    """Network, horizon and seeded economic data for the planning model."""

    network: tuple = DEFAULT_NETWORK
    T: int = 5
    discount: float = 0.08
    budget: float | None = None
    expansion_limit: int = 2
    qe_lower: float = 5.0
    qe_upper: float = 40.0
    nominal_supply: float = 45.0
    nominal_demand: float = 40.0

    def __post_init__(self):
        self.network = tuple(dict(p) for p in self.network)


def check_network(network) -> None:
    """Every process consumes and produces; raw materials are never produced; products never consumed."""
    produced, consumed = set(), set()
    for i, proc in enumerate(network):
        unknown = set(proc) - set(CHEMICALS)
        if unknown:
            raise GraphInconsistent(f"process {i} uses unknown chemicals {sorted(unknown)}")
        ins = {c for c, k in proc.items() if k > 0}
        outs = {c for c, k in proc.items() if k < 0}
        if not ins or not outs:
            raise GraphInconsistent(f"process {i} needs at least one input and one output")
        if outs & set(RAW):
            raise GraphInconsistent(f"process {i} produces a raw material")
        if ins & set(PRODUCTS):
            raise GraphInconsistent(f"process {i} consumes a final product")
        produced |= outs
        consumed |= ins
    for c in CHEMICALS:
        if c in RAW or c in PRODUCTS:
            continue
        if (c in produced) != (c in consumed):
            raise GraphInconsistent(f"intermediate {c} is only {'produced' if c in produced else 'consumed'}")


@dataclass
class CpnpData:
    alpha: np.ndarray  # (I, T) variable expansion cost
    beta: np.ndarray  # (I, T) fixed expansion cost
    gamma: np.ndarray  # (I, T) operating cost
    purchase: np.ndarray  # (len(RAW), T)
    price: np.ndarray  # (len(PRODUCTS), T)
    initial_capacity: np.ndarray  # (I,)
    budget: np.ndarray  # (T,)


def cpnp_data(params: CpnpParams, seed: int) -> CpnpData:
    rng = np.random.default_rng(seed)
    I, T = len(params.network), params.T
    disc = 1.0 / (1.0 + params.discount) ** np.arange(T)
    alpha = rng.uniform(0.8, 1.6, (I, 1)) * disc
    beta = rng.uniform(8.0, 16.0, (I, 1)) * disc
    gamma = rng.uniform(0.2, 0.6, (I, 1)) * disc
    purchase = rng.uniform(1.0, 1.8, (len(RAW), 1)) * disc
    price = rng.uniform(5.0, 7.0, (len(PRODUCTS), 1)) * disc
    Q0 = rng.uniform(0.0, 25.0, I)
    budget = np.full(T, 120.0 if params.budget is None else float(params.budget))
    return CpnpData(alpha, beta, gamma, purchase, price, Q0, budget)


def cpnp_subsets(params: CpnpParams, seed: int, K: int = 4) -> UnionSet:
    """Market regimes over ``v = [su_A, su_E, du_D, du_G]`` per period (period-major).

    Each regime is a box scaled around the nominal limits with a per-period
    budget on the total shortfall below the box top.
    """
    rng = np.random.default_rng(seed + 1)
    T = params.T
    nom = np.tile([params.nominal_supply] * len(RAW) + [params.nominal_demand] * len(PRODUCTS), T)
    regimes = [(0.9, 1.1), (0.5, 0.8), (0.7, 1.0), (0.6, 0.9)]
    subs = []
    for k in range(K):
        a, b = regimes[k % len(regimes)]
        lo = nom * (a + rng.uniform(-0.03, 0.03, nom.size))
        hi = nom * (b + rng.uniform(-0.03, 0.03, nom.size))
        base = PolytopeSubset.box(lo, hi)
        # per period: sum_j (hi_j - v_j)/(hi_j - lo_j) <= half the entries
        per = nom.size // T
        rows = np.kron(np.eye(T), np.ones((1, per))) / (hi - lo)
        budget = np.full(T, 0.5 * per)
        subs.append(PolytopeSubset(np.vstack([base.D, -rows]), np.concatenate([base.d, budget - rows @ hi]), k,
                                   check=False))
    return UnionSet(subs)


def build_cpnp(params: CpnpParams | None = None, seed: int = 0) -> TwoStageProblem:
    """Capacity expansion planning over a process network, as a cost minimization.

    First stage per period ``t`` and process ``i``: expansion ``QE`` and the
    binary ``Y`` (period-major blocks ``[QE_t, Y_t]``). Capacity is
    ``Q0 + cumulative QE``, so operating limits become ``W <= Q0 + sum QE``
    rows linking the stages. Recourse per period holds raw purchases
    ``P``, product sales ``S`` and operating levels ``W``; mass balance
    rows are equalities. The net present value is negated.
    """
    params = params or CpnpParams()
    check_network(params.network)
    data = cpnp_data(params, seed)
    net = params.network
    I, T = len(net), params.T
    nR, nP = len(RAW), len(PRODUCTS)
    kappa = np.zeros((len(CHEMICALS), I))
    for i, proc in enumerate(net):
        for c, k in proc.items():
            kappa[CHEMICALS.index(c), i] = k

    nx = 2 * I * T
    qe = lambda t: np.arange(t * 2 * I, t * 2 * I + I)
    yb = lambda t: np.arange(t * 2 * I + I, (t + 1) * 2 * I)
    c = np.zeros(nx)
    for t in range(T):
        c[qe(t)] = data.alpha[:, t]
        c[yb(t)] = data.beta[:, t]
    A_rows, q = [], []
    for t in range(T):
        for i in range(I):
            lo_row = np.zeros(nx)
            lo_row[qe(t)[i]], lo_row[yb(t)[i]] = -1.0, params.qe_lower  # qe^L Y <= QE
            hi_row = np.zeros(nx)
            hi_row[qe(t)[i]], hi_row[yb(t)[i]] = 1.0, -params.qe_upper  # QE <= qe^U Y
            A_rows += [lo_row, hi_row]
            q += [0.0, 0.0]
        bud = np.zeros(nx)
        bud[qe(t)], bud[yb(t)] = data.alpha[:, t], data.beta[:, t]
        A_rows.append(bud)
        q.append(data.budget[t])
    for i in range(I):
        row = np.zeros(nx)
        row[[yb(t)[i] for t in range(T)]] = 1.0
        A_rows.append(row)
        q.append(params.expansion_limit)

    # recourse per period: [P (nR), S (nP), W (I)]
    per = nR + nP + I
    ny = per * T
    Pi = lambda t: np.arange(t * per, t * per + nR)
    Si = lambda t: np.arange(t * per + nR, t * per + nR + nP)
    Wi = lambda t: np.arange(t * per + nR + nP, (t + 1) * per)
    b = np.zeros(ny)
    for t in range(T):
        b[Pi(t)] = data.purchase[:, t]
        b[Si(t)] = -data.price[:, t]
        b[Wi(t)] = data.gamma[:, t]
    nv_t = nR + nP
    nv = nv_t * T
    T_rows, W_rows, M_rows, h, eq = [], [], [], [], []

    def add(trow, wrow, mrow, rhs, is_eq=False):
        T_rows.append(trow)
        W_rows.append(wrow)
        M_rows.append(mrow)
        h.append(rhs)
        eq.append(is_eq)

    raw_idx = [CHEMICALS.index(ch) for ch in RAW]
    prod_idx = [CHEMICALS.index(ch) for ch in PRODUCTS]
    for t in range(T):
        for i in range(I):  # W_it - sum_{tau <= t} QE_i,tau <= Q0_i
            trow, wrow = np.zeros(nx), np.zeros(ny)
            wrow[Wi(t)[i]] = 1.0
            trow[[qe(tau)[i] for tau in range(t + 1)]] = -1.0
            add(trow, wrow, np.zeros(nv), data.initial_capacity[i])
        for j in range(len(CHEMICALS)):  # P_j - sum_i kappa_ij W_i - S_j = 0
            wrow = np.zeros(ny)
            wrow[Wi(t)] = -kappa[j]
            if j in raw_idx:
                wrow[Pi(t)[raw_idx.index(j)]] = 1.0
            if j in prod_idx:
                wrow[Si(t)[prod_idx.index(j)]] = -1.0
            add(np.zeros(nx), wrow, np.zeros(nv), 0.0, True)
        for r in range(nR):  # P <= su
            wrow, mrow = np.zeros(ny), np.zeros(nv)
            wrow[Pi(t)[r]] = 1.0
            mrow[t * nv_t + r] = -1.0
            add(np.zeros(nx), wrow, mrow, 0.0)
        for r in range(nP):  # S <= du
            wrow, mrow = np.zeros(ny), np.zeros(nv)
            wrow[Si(t)[r]] = 1.0
            mrow[t * nv_t + nR + r] = -1.0
            add(np.zeros(nx), wrow, mrow, 0.0)
    binary = np.zeros(nx, dtype=bool)
    for t in range(T):
        binary[yb(t)] = True
    x_bounds = np.column_stack([np.zeros(nx), np.where(binary, 1.0, params.qe_upper)])
    return TwoStageProblem(
        c=c, b=b, A=np.array(A_rows), q=np.array(q), T=np.array(T_rows), W=np.array(W_rows),
        M=np.array(M_rows), h=np.array(h), x_binary=binary, x_bounds=x_bounds, equality_rows=np.array(eq),
        name=f"cpnp_T{T}_s{seed}",
    )


def cpnp_case(params: CpnpParams | None = None, seed: int = 0, K: int = 4) -> Case:
    params = params or CpnpParams()
    p_bar = np.array(CPNP_P_BAR) if K == 4 else np.full(K, 1.0 / K)
    data = cpnp_data(params, seed)
    nominal = np.tile([params.nominal_supply] * len(RAW) + [params.nominal_demand] * len(PRODUCTS), params.T)
    record = dict(seed=seed, K=K, T=params.T, network=[dict(p) for p in params.network],
                  reference_v=nominal.tolist(),
                  data={k: np.asarray(v).tolist() for k, v in vars(data).items()})
    return Case("cpnp", build_cpnp(params, seed), cpnp_subsets(params, seed, K), AmbiguitySet(p_bar, CPNP_RHO),
                record)


# ---------------------------------------------------------------------------
# building climate control

WORK_HOURS = (7, 18)
COMFORT_WORK = 21.0
COMFORT_OFF = 15.0
HEAT_MAX = 150.0
COMFORT_PENALTY = 1e3


def climate_dynamics(seed: int = 0, N: int = 4, start_hour: int = 6, step_hours: int = 1,
                     penalty: float | None = COMFORT_PENALTY) -> LinearDynamics:
    """Seeded stable 4-state thermal model (indoor, roof, wall, floor) driven by heating and ambient error.

    Coupling weights are drawn per seed and the transition matrix is rescaled
    to spectral radius 0.9. A constant offset places the unheated
    equilibrium near a 5 C ambient.
    """
    rng = np.random.default_rng(seed)
    couple = rng.uniform(0.05, 0.15, 3)
    Phi = np.diag(np.concatenate([[1.0 - couple.sum()], 1.0 - couple - rng.uniform(0.02, 0.08, 3)]))
    Phi[0, 1:] = couple
    Phi[1:, 0] = couple
    Phi *= 0.9 / np.max(np.abs(np.linalg.eigvals(Phi)))
    Gamma_u = np.array([0.02, 0.0, 0.0, 0.005]) * rng.uniform(0.9, 1.1)
    to_ambient = np.array([0.05, 0.1, 0.08, 0.02])
    # unheated equilibrium: envelope near the 5 C ambient, indoor at 10 C
    offset = (np.eye(4) - Phi) @ np.array([10.0, 6.0, 7.0, 9.0])
    hours = (start_hour + step_hours * np.arange(1, N + 1)) % 24
    work = (hours >= WORK_HOURS[0]) & (hours < WORK_HOURS[1])
    s_lower = np.full((N, 4), -np.inf)
    s_lower[:, 0] = np.where(work, COMFORT_WORK, COMFORT_OFF)
    s0 = np.array([19.0, 12.0, 15.0, 17.0])
    return LinearDynamics(Phi=Phi, Gamma_u=Gamma_u.reshape(4, 1), Gamma_v=to_ambient.reshape(4, 1), s0=s0,
                          cost_u=np.ones(1), s_lower=s_lower, u_lower=0.0, u_upper=HEAT_MAX, offset=offset,
                          violation_penalty=penalty)


def climate_subsets(K: int, seed: int = 0) -> UnionSet:
    """K disjoint intervals for the per-step ambient forecast error, spread over [-3, 3]."""
    rng = np.random.default_rng(seed + 100)
    edges = np.linspace(-3.0, 3.0, K + 1)
    subs = []
    for k in range(K):
        w = edges[k + 1] - edges[k]
        lo = edges[k] + rng.uniform(0.05, 0.25) * w
        hi = edges[k + 1] - rng.uniform(0.05, 0.25) * w
        subs.append(PolytopeSubset.box([lo], [hi], k))
    return UnionSet(subs)


def build_climate_mpc(seed: int = 0, N: int = 4, K: int = 2,
                      penalty: float | None = COMFORT_PENALTY) -> tuple[TwoStageProblem, MonolithicEncoding]:
    """Open-loop robust heating schedule over ``N`` hourly steps with a K-interval ambient error per step.

    Comfort bounds are softened with a per-degree violation penalty so every
    input schedule has a finite worst case.
    """
    if N < 1 or K < 1:
        raise ValueError("horizon and subset count must be positive")
    dyn = climate_dynamics(seed, N, penalty=penalty)
    prob = stack_mpc(dyn, N).replace(name=f"climate_s{seed}_N{N}_K{K}")
    return prob, encode_monolithic(ProductUnionSet(climate_subsets(K, seed), N))


def climate_case(seed: int = 0, N: int = 4, K: int = 2) -> Case:
    """Climate problem with its product union; no ambiguity set (robust control only)."""
    prob, enc = build_climate_mpc(seed, N, K)
    return Case("climate", prob, ProductUnionSet(climate_subsets(K, seed), N), None,
                dict(seed=seed, N=N, K=K, reference_v=[0.0] * N))


CASES = dict(location=location_case, cpnp=cpnp_case, climate=climate_case)


def get_case(name: str, **kwargs) -> Case:
    if name not in CASES:
        raise ValueError(f"unknown case {name!r}; choose from {sorted(CASES)}")
    return CASES[name](**kwargs)
