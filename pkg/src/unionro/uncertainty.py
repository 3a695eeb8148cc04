"""Polytope unions, their N-fold products and the selector-binary encoding."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import (
    DimensionMismatch,
    DimensionTooLarge,
    EmptySubset,
    ExplosionCapExceeded,
    NoSamplesInUnion,
    UnboundedSubset,
)
from .lp import LinearProgram, LpStatus, solve_lp
from .mip import MixedIntegerProgram, ProblemBuilder

MEMBERSHIP_TOL = 1e-9
VERTEX_DEDUP_TOL = 1e-9
MAX_VERTEX_DIM = 4
DEFAULT_SUBSET_CAP = 4096


@dataclass(frozen=True, eq=False)
class PolytopeSubset:
    """``{v | D v <= d}``; checked nonempty and bounded when built."""

    D: np.ndarray
    d: np.ndarray
    label: int = 0
    check: bool = True

    def __post_init__(self):
        D = np.atleast_2d(np.asarray(self.D, dtype=float))
        d = np.asarray(self.d, dtype=float).ravel()
        if D.shape[0] != d.size:
            raise DimensionMismatch(f"D has {D.shape[0]} rows but d has {d.size} entries")
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "_box", self._bounding_box() if self.check else None)

    @classmethod
    def box(cls, lower, upper, label: int = 0) -> "PolytopeSubset":
        lo = np.asarray(lower, dtype=float).ravel()
        hi = np.asarray(upper, dtype=float).ravel()
        eye = np.eye(lo.size)
        return cls(np.vstack([eye, -eye]), np.concatenate([hi, -lo]), label)

    @property
    def dim(self) -> int:
        return self.D.shape[1]

    @property
    def num_rows(self) -> int:
        return self.D.shape[0]

    def _coordinate_lp(self, sign: float, i: int) -> LinearProgram:
        obj = np.zeros(self.dim)
        obj[i] = sign
        free = np.tile([-np.inf, np.inf], (self.dim, 1))
        return LinearProgram(obj, self.D, self.d, ["<="] * self.num_rows, free)

    def _bounding_box(self) -> np.ndarray:
        box = np.zeros((self.dim, 2))
        for i in range(self.dim):
            for col, sign in ((0, 1.0), (1, -1.0)):
                sol = solve_lp(self._coordinate_lp(sign, i))
                if sol.status is LpStatus.INFEASIBLE:
                    raise EmptySubset(f"subset {self.label} is empty")
                if sol.status is LpStatus.UNBOUNDED:
                    raise UnboundedSubset(f"subset {self.label} is unbounded along coordinate {i}")
                box[i, col] = sign * sol.objective_value
        return box

    @property
    def bounding_box(self) -> np.ndarray:
        """``(dim, 2)`` array of per-coordinate minima and maxima."""
        if self._box is None:
            object.__setattr__(self, "_box", self._bounding_box())
        return self._box

    def contains(self, v, tol: float = MEMBERSHIP_TOL) -> bool:
        v = np.asarray(v, dtype=float).ravel()
        return bool(np.all(self.D @ v <= self.d + tol))

    def relaxed(self, eps: float) -> "PolytopeSubset":
        return PolytopeSubset(self.D, self.d + eps, self.label)


@dataclass(frozen=True, eq=False)
class UnionSet:
    subsets: tuple

    def __post_init__(self):
        subs = tuple(self.subsets)
        if not subs:
            raise ValueError("a union needs at least one subset")
        dims = {s.dim for s in subs}
        if len(dims) != 1:
            raise DimensionMismatch(f"subset dimensions differ: {sorted(dims)}")
        object.__setattr__(self, "subsets", subs)

    @property
    def K(self) -> int:
        return len(self.subsets)

    @property
    def dim(self) -> int:
        return self.subsets[0].dim


@dataclass(frozen=True, eq=False)
class ProductUnionSet:
    """The N-fold product of a K-way union; ``v = [v_1, ..., v_N]``."""

    base: UnionSet
    N: int = 1

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("horizon must be at least 1")

    @property
    def K(self) -> int:
        return self.base.K

    @property
    def dim(self) -> int:
        return self.base.dim * self.N

    @property
    def explicit_count(self) -> int:
        return self.K**self.N


def as_product(u) -> ProductUnionSet:
    return u if isinstance(u, ProductUnionSet) else ProductUnionSet(u, 1)


# ---------------------------------------------------------------------------
# monolithic encoding


@dataclass(frozen=True, eq=False)
class MonolithicEncoding:
    """Selector-binary description of a product of unions.

    ``D_pad[k]`` and ``d_pad[k]`` are the subset rows padded to a common
    row count with ``0 v <= 1``. For each step ``t`` the rows are

        sum_k D_pad[k] w[t,k] <= sum_k delta[t,k] d_pad[k]
        -Delta (1 - delta[t,k]) <= v[t] - w[t,k] <= Delta (1 - delta[t,k])
        -Delta delta[t,k] <= w[t,k] <= Delta delta[t,k]
        sum_k delta[t,k] = 1
    """

    D_pad: np.ndarray  # (K, R, dim)
    d_pad: np.ndarray  # (K, R)
    N: int
    Delta: float
    source: ProductUnionSet

    @property
    def K(self) -> int:
        return self.D_pad.shape[0]

    @property
    def step_dim(self) -> int:
        return self.D_pad.shape[2]

    @property
    def num_binaries(self) -> int:
        return self.N * self.K

    def with_delta(self, Delta: float) -> "MonolithicEncoding":
        return MonolithicEncoding(self.D_pad, self.d_pad, self.N, float(Delta), self.source)

    def add_to(self, bld: ProblemBuilder, v: slice | None = None):
        """Add the encoding rows to ``bld``; returns slices ``(v, delta, w)``.

        ``delta`` is ordered step-major (``t * K + k``) and ``w`` as
        ``(t * K + k) * dim + i``.
        """
        K, N, m, Dl = self.K, self.N, self.step_dim, self.Delta
        # implied bounds from the subset boxes, clipped to [-Delta, Delta]
        boxes = np.clip(np.array([s.bounding_box for s in self.source.base.subsets]), -Dl, Dl)
        if v is None:
            v_lo = np.tile(boxes[:, :, 0].min(axis=0), N)
            v_hi = np.tile(boxes[:, :, 1].max(axis=0), N)
            v = bld.add_vars("v", N * m, np.minimum(v_lo, v_hi), v_hi)
        delta = bld.add_vars("delta", N * K, 0.0, 1.0, binary=True, priority=1)
        w_lo = np.tile(np.minimum(boxes[:, :, 0], 0.0).ravel(), N)
        w_hi = np.tile(np.maximum(boxes[:, :, 1], 0.0).ravel(), N)
        w = bld.add_vars("w", N * K * m, w_lo, w_hi)
        # per-coordinate constants: no larger than Delta, no larger than the boxes require
        up = np.minimum(np.maximum(boxes[:, :, 1].max(axis=0), 0.0), Dl)  # v - w when delta = 0
        dn = np.minimum(np.maximum(-boxes[:, :, 0].min(axis=0), 0.0), Dl)  # w - v when delta = 0
        w_up = np.minimum(np.maximum(boxes[:, :, 1], 0.0), Dl)  # (K, m)
        w_dn = np.minimum(np.maximum(-boxes[:, :, 0], 0.0), Dl)
        I = np.eye(m)
        for t in range(N):
            vt = slice(v.start + t * m, v.start + (t + 1) * m)
            dt = slice(delta.start + t * K, delta.start + (t + 1) * K)
            wt = slice(w.start + t * K * m, w.start + (t + 1) * K * m)
            bld.add_rows([(wt, np.hstack(list(self.D_pad))), (dt, -self.d_pad.T)], "<=", np.zeros(self.d_pad.shape[1]))
            bld.add_rows([(dt, np.ones((1, K)))], "=", np.ones(1))
            for k in range(K):
                wk = slice(wt.start + k * m, wt.start + (k + 1) * m)
                dk = slice(dt.start + k, dt.start + k + 1)
                # v - w <= Delta (1 - delta);  w - v <= Delta (1 - delta)
                bld.add_rows([(vt, I), (wk, -I), (dk, up[:, None])], "<=", up)
                bld.add_rows([(vt, -I), (wk, I), (dk, dn[:, None])], "<=", dn)
                # w <= Delta delta;  -w <= Delta delta
                bld.add_rows([(wk, I), (dk, -w_up[k][:, None])], "<=", np.zeros(m))
                bld.add_rows([(wk, -I), (dk, -w_dn[k][:, None])], "<=", np.zeros(m))
        return v, delta, w

    def satisfied_by(self, v, delta, tol: float = MEMBERSHIP_TOL) -> bool:
        """Check the rows at ``v`` with a fixed 0/1 ``delta`` and ``w = delta * v``."""
        v = np.asarray(v, dtype=float).reshape(self.N, self.step_dim)
        delta = np.asarray(delta, dtype=float).reshape(self.N, self.K)
        if np.any(np.abs(delta.sum(axis=1) - 1) > tol) or np.any(np.abs(v) > self.Delta + tol):
            return False
        for t in range(self.N):
            lhs = sum(self.D_pad[k] @ (delta[t, k] * v[t]) for k in range(self.K))
            if np.any(lhs > delta[t] @ self.d_pad + tol):
                return False
        return True

    def membership_mip(self, v) -> MixedIntegerProgram:
        """Feasibility MILP over (delta, w) with ``v`` pinned."""
        v = np.asarray(v, dtype=float).ravel()
        bld = ProblemBuilder()
        vs = bld.add_vars("v", v.size, v, v)
        self.add_to(bld, vs)
        bld.set_objective([])
        return bld.build()


def union_delta(pu: ProductUnionSet) -> float:
    peak = max(float(np.max(np.abs(s.bounding_box))) for s in pu.base.subsets)
    return max(1.1 * peak, 1.0)


def encode_monolithic(pu, Delta: float | None = None) -> MonolithicEncoding:
    pu = as_product(pu)
    subs = pu.base.subsets
    R = max(s.num_rows for s in subs)
    m = pu.base.dim
    D_pad = np.zeros((len(subs), R, m))
    d_pad = np.ones((len(subs), R))
    for k, s in enumerate(subs):
        s.bounding_box  # raises EmptySubset / UnboundedSubset
        D_pad[k, : s.num_rows] = s.D
        d_pad[k, : s.num_rows] = s.d
    return MonolithicEncoding(D_pad, d_pad, pu.N, union_delta(pu) if Delta is None else float(Delta), pu)


# ---------------------------------------------------------------------------
# vertices, membership, frequencies


def enumerate_vertices(p: PolytopeSubset, tol: float = VERTEX_DEDUP_TOL) -> list[np.ndarray]:
    """All vertices by solving every square subsystem of ``dim`` rows."""
    n = p.dim
    if n > MAX_VERTEX_DIM:
        raise DimensionTooLarge(f"vertex enumeration limited to dimension {MAX_VERTEX_DIM}, got {n}")
    scale = max(1.0, float(np.max(np.abs(p.d)))) if p.d.size else 1.0
    out: list[np.ndarray] = []
    for rows in itertools.combinations(range(p.num_rows), n):
        sub = p.D[list(rows)]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        pt = np.linalg.solve(sub, p.d[list(rows)])
        if np.any(p.D @ pt > p.d + 1e-9 * scale):
            continue
        if any(np.max(np.abs(pt - q)) <= tol * scale for q in out):
            continue
        out.append(pt + 0.0)
    return out


@dataclass(frozen=True)
class Membership:
    inside: bool
    index: int | tuple | None

    def __bool__(self) -> bool:
        return self.inside


def contains(u, v, tol: float = MEMBERSHIP_TOL) -> Membership:
    """Membership with the lowest matching subset index (a tuple for products)."""
    v = np.asarray(v, dtype=float).ravel()
    if isinstance(u, ProductUnionSet):
        if v.size != u.dim:
            raise DimensionMismatch(f"point has {v.size} entries, set has dimension {u.dim}")
        idx = []
        for vt in v.reshape(u.N, u.base.dim):
            hit = contains(u.base, vt, tol)
            if not hit:
                return Membership(False, None)
            idx.append(hit.index)
        return Membership(True, tuple(idx))
    if v.size != u.dim:
        raise DimensionMismatch(f"point has {v.size} entries, set has dimension {u.dim}")
    for k, s in enumerate(u.subsets):
        if s.contains(v, tol):
            return Membership(True, k)
    return Membership(False, None)


@dataclass(frozen=True)
class NominalEstimate:
    probs: np.ndarray
    counts: np.ndarray
    outliers: int


def estimate_nominal_probs(samples, u: UnionSet) -> NominalEstimate:
    """Frequency of each subset among samples; samples outside the union are outliers."""
    counts = np.zeros(u.K, dtype=int)
    outliers = 0
    for s in np.atleast_2d(np.asarray(samples, dtype=float)):
        hit = contains(u, s)
        if hit:
            counts[hit.index] += 1
        else:
            outliers += 1
    total = counts.sum()
    if total == 0:
        raise NoSamplesInUnion(f"none of the {outliers} samples lies in the union")
    return NominalEstimate(counts / total, counts, outliers)


def product_subset(pu: ProductUnionSet, index: tuple) -> PolytopeSubset:
    """Block-diagonal polytope for one choice of subset per step."""
    parts = [pu.base.subsets[k] for k in index]
    m = pu.base.dim
    D = np.zeros((sum(s.num_rows for s in parts), m * len(parts)))
    r = 0
    for t, s in enumerate(parts):
        D[r : r + s.num_rows, t * m : (t + 1) * m] = s.D
        r += s.num_rows
    return PolytopeSubset(D, np.concatenate([s.d for s in parts]), label=0, check=False)


def enumerate_explicit_subsets(pu, cap: int = DEFAULT_SUBSET_CAP) -> Iterator[tuple[tuple, PolytopeSubset]]:
    """Yield ``(index_tuple, polytope)`` for all K^N products in lexicographic order."""
    pu = as_product(pu)
    if pu.explicit_count > cap:
        raise ExplosionCapExceeded(f"K^N = {pu.explicit_count} exceeds the cap of {cap}")
    for index in itertools.product(range(pu.K), repeat=pu.N):
        yield index, product_subset(pu, index)
