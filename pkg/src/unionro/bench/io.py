"""Problem files (versioned JSON) and result records (CSV or JSON)."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..ccg_dro import AmbiguitySet
from ..model import TwoStageProblem
from ..uncertainty import PolytopeSubset, ProductUnionSet, UnionSet

SCHEMA = "unionro.problem/1"
RESULT_COLUMNS = ("scheme", "objective", "x", "cpu_s", "iterations")

_MATRICES = ("A", "T", "W", "M")
_VECTORS = ("c", "b", "q", "h")


def _num(a):
    """Nested lists of floats with non-finite entries spelled as strings."""
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        v = float(a)
        return v if np.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    return [_num(r) for r in a]


def _arr(obj, shape=None) -> np.ndarray:
    def conv(o):
        if isinstance(o, list):
            return [conv(e) for e in o]
        return float(o)  # float("inf") and float("-inf") parse the strings

    a = np.array(conv(obj), dtype=float)
    return a.reshape(shape) if shape is not None else a


@dataclass
class SolverConfig:
    """Tolerances and seeds applied when a problem file is solved."""

    eps: float = 1e-6
    Delta: float | None = None
    M_comp: float = 1e4
    oa_tol: float = 1e-8
    backend: str = "bnb"
    variant: str = "PhiReform"
    seed: int = 0
    max_iter: int = 100


@dataclass
class ProblemFile:
    problem: TwoStageProblem
    uncertainty: UnionSet | ProductUnionSet
    ambiguity: AmbiguitySet | None = None
    config: SolverConfig = field(default_factory=SolverConfig)
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        p = self.problem
        prob = dict(name=p.name, dims=dict(x=p.num_x, y=p.num_y, v=p.num_v, rows=p.num_rows, a_rows=p.q.size))
        for k in _VECTORS + _MATRICES:
            prob[k] = _num(getattr(p, k))
        prob.update(x_binary=[bool(b) for b in p.x_binary], x_bounds=_num(p.x_bounds), y_lower=_num(p.y_lower),
                    equality_rows=[bool(e) for e in p.equality_rows],
                    blocks=None if p.blocks is None else list(p.blocks))
        u = self.uncertainty
        if isinstance(u, ProductUnionSet):
            unc = dict(kind="product", N=int(u.N), subsets=_subsets(u.base))
        else:
            unc = dict(kind="union", subsets=_subsets(u))
        amb = None if self.ambiguity is None else dict(p_bar=_num(self.ambiguity.p_bar), rho=float(self.ambiguity.rho))
        return dict(schema=SCHEMA, problem=prob, uncertainty=unc, ambiguity=amb,
                    config=asdict(self.config), params=self.params)

    @classmethod
    def from_dict(cls, d: dict) -> "ProblemFile":
        if d.get("schema") != SCHEMA:
            raise ValueError(f"unsupported problem file schema {d.get('schema')!r}; expected {SCHEMA!r}")
        pr = d["problem"]
        n = pr["dims"]
        shapes = dict(A=(n["a_rows"], n["x"]), T=(n["rows"], n["x"]), W=(n["rows"], n["y"]), M=(n["rows"], n["v"]))
        kw = {k: _arr(pr[k]) for k in _VECTORS}
        kw.update({k: _arr(pr[k], shapes[k]) for k in _MATRICES})
        problem = TwoStageProblem(
            **kw, x_binary=np.array(pr["x_binary"], dtype=bool).reshape(n["x"]),
            x_bounds=_arr(pr["x_bounds"], (n["x"], 2)), y_lower=_arr(pr["y_lower"], (n["y"],)),
            equality_rows=np.array(pr["equality_rows"], dtype=bool).reshape(n["rows"]),
            blocks=None if pr["blocks"] is None else tuple(pr["blocks"]), name=pr["name"])
        un = d["uncertainty"]
        base = UnionSet([PolytopeSubset(_arr(s["D"], (len(s["d"]), s["dim"])), _arr(s["d"]), s["label"])
                         for s in un["subsets"]])
        unc = ProductUnionSet(base, un["N"]) if un["kind"] == "product" else base
        amb = None if d["ambiguity"] is None else AmbiguitySet(_arr(d["ambiguity"]["p_bar"]), d["ambiguity"]["rho"])
        known = {f.name for f in fields(SolverConfig)}
        cfg = SolverConfig(**{k: v for k, v in d.get("config", {}).items() if k in known})
        return cls(problem, unc, amb, cfg, d.get("params", {}))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, allow_nan=False)

    @classmethod
    def loads(cls, text: str) -> "ProblemFile":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps() + "\n")

    @classmethod
    def load(cls, path) -> "ProblemFile":
        with open(path) as fh:
            return cls.loads(fh.read())


def _subsets(u: UnionSet) -> list[dict]:
    return [dict(label=int(s.label), dim=int(s.dim), D=_num(s.D), d=_num(s.d)) for s in u.subsets]


@dataclass
class ResultRecord:
    """One row of a results table."""

    scheme: str
    objective: float
    x: np.ndarray
    cpu_s: float
    iterations: int

    def to_dict(self) -> dict:
        return dict(scheme=self.scheme, objective=float(self.objective),
                    x=[float(v) for v in np.asarray(self.x).ravel()],
                    cpu_s=round(float(self.cpu_s), 2), iterations=int(self.iterations))


def records_to_json(records) -> str:
    return json.dumps([r.to_dict() for r in records], indent=1)


def records_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in records:
        d = r.to_dict()
        w.writerow([d["scheme"], repr(d["objective"]), " ".join(repr(v) for v in d["x"]),
                    f"{d['cpu_s']:.2f}", d["iterations"]])
    return buf.getvalue()


def table_to_csv(rows: list[dict]) -> str:
    """CSV for a list of flat dicts, columns in first-row order."""
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def case_file(case, config: SolverConfig | None = None) -> ProblemFile:
    """Problem file for a benchmark case; process network cases default to the HiGHS backend."""
    if config is None:
        config = SolverConfig(backend="highs" if case.name == "cpnp" else "bnb")
    return ProblemFile(case.problem, case.union, case.ambiguity, config, dict(case=case.name, **case.params))
