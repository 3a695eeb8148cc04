"""Command line entry point: ``unionro <verb> ...``."""
from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace

from .cases import CASES, cpnp_case, get_case
from .experiments import MAXIMIZED, run_case, runtime_scaling, solve_dro, solve_ro, sweep_rho
from .io import ProblemFile, ResultRecord, case_file, records_to_csv, records_to_json, table_to_csv
from .oracles import verify_problem_file

RHO_GRID = (0.01, 0.1, 0.5, 1.0, 5.0, 50.0)


def _emit(rows, fmt: str, out=None):
    out = out or sys.stdout
    if rows and isinstance(rows[0], ResultRecord):
        out.write(records_to_json(rows) + "\n" if fmt == "json" else records_to_csv(rows))
    else:
        out.write(json.dumps(rows, indent=1) + "\n" if fmt == "json" else table_to_csv(rows))


def _format_flag(p: argparse.ArgumentParser):
    p.add_argument("--format", choices=["json", "csv"], default="json", help="output format")


def _config_flags(p: argparse.ArgumentParser):
    _format_flag(p)
    p.add_argument("--eps", type=float, help="CCG gap tolerance")
    p.add_argument("--M-comp", dest="M_comp", type=float, help="complementarity big-M")
    p.add_argument("--Delta", type=float, help="selector big-M override")
    p.add_argument("--oa-tol", dest="oa_tol", type=float, help="outer-approximation tolerance")
    p.add_argument("--backend", choices=["bnb", "highs"], help="MILP backend")
    p.add_argument("--seed", type=int, help="random seed")


def _apply(pf: ProblemFile, args) -> ProblemFile:
    changes = {k: getattr(args, k) for k in ("eps", "M_comp", "Delta", "oa_tol", "backend", "seed")
               if getattr(args, k, None) is not None}
    return replace(pf, config=replace(pf.config, **changes))


def _record(pf, scheme, sol, cpu) -> ResultRecord:
    sign = -1.0 if pf.params.get("case") in MAXIMIZED else 1.0
    return ResultRecord(scheme, sign * sol.objective, sol.x, cpu, sol.trace.iterations)


def cmd_solve_ro(args):
    pf = _apply(ProblemFile.load(args.file), args)
    t = time.process_time()
    sol = solve_ro(pf, args.scheme)
    return [_record(pf, args.scheme, sol, time.process_time() - t)]


def cmd_solve_dro(args):
    pf = _apply(ProblemFile.load(args.file), args)
    t = time.process_time()
    sol = solve_dro(pf, args.rho, args.variant)
    return [_record(pf, f"DRO-{sol.variant.value}", sol, time.process_time() - t)]


def cmd_bench_run(args):
    kwargs = {} if args.seed is None else dict(seed=args.seed)
    pf = _apply(case_file(get_case(args.case, **kwargs)), args)
    return run_case(pf, args.schemes)


def cmd_bench_export(args):
    kwargs = {} if args.seed is None else dict(seed=args.seed)
    case_file(get_case(args.case, **kwargs)).save(args.out)
    return [dict(case=args.case, path=args.out)]


def cmd_bench_scaling(args):
    return runtime_scaling(args.seed or 0, args.K, args.N, args.eps or 1e-6)


def cmd_bench_sweep(args):
    case = cpnp_case(seed=args.seed or 0)
    pf = _apply(case_file(case), args)
    res = sweep_rho(case.problem, case.union, case.ambiguity.p_bar, args.rho, args.samples, args.seed or 0,
                    pf.config, sign=-1.0)
    return res.rows


def cmd_oracle_verify(args):
    return verify_problem_file(_apply(ProblemFile.load(args.file), args))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="unionro", description="Two-stage robust optimization over unions of polytopes")
    verbs = parser.add_subparsers(dest="verb", required=True)

    p = verbs.add_parser("solve-ro", help="robust solve of a problem file")
    p.add_argument("file")
    p.add_argument("--scheme", choices=["algorithm1", "conventional"], default="algorithm1")
    _config_flags(p)
    p.set_defaults(fn=cmd_solve_ro)

    p = verbs.add_parser("solve-dro", help="worst-case expectation solve of a problem file")
    p.add_argument("file")
    p.add_argument("--rho", type=float, help="KL radius (default: the file's)")
    p.add_argument("--variant", choices=["DirectExp", "PhiReform"])
    _config_flags(p)
    p.set_defaults(fn=cmd_solve_dro)

    bench = verbs.add_parser("bench", help="benchmark cases and experiments").add_subparsers(dest="bench_verb",
                                                                                            required=True)
    p = bench.add_parser("run", help="all schemes on one shipped case")
    p.add_argument("case", choices=sorted(CASES))
    p.add_argument("--schemes", nargs="+")
    _config_flags(p)
    p.set_defaults(fn=cmd_bench_run)

    p = bench.add_parser("export", help="write a shipped case as a problem file")
    p.add_argument("case", choices=sorted(CASES))
    p.add_argument("out")
    p.add_argument("--seed", type=int)
    _format_flag(p)
    p.set_defaults(fn=cmd_bench_export)

    p = bench.add_parser("scaling", help="encoded vs explicit CCG runtime over horizons (climate case)")
    p.add_argument("--K", type=int, default=2)
    p.add_argument("--N", type=int, nargs="+", default=[2, 3, 4, 5, 6])
    p.add_argument("--eps", type=float)
    p.add_argument("--seed", type=int)
    _format_flag(p)
    p.set_defaults(fn=cmd_bench_scaling)

    p = bench.add_parser("sweep-rho", help="sampled objective spread over KL radii (process network case)")
    p.add_argument("--rho", type=float, nargs="+", default=list(RHO_GRID))
    p.add_argument("--samples", type=int, default=1000)
    _config_flags(p)
    p.set_defaults(fn=cmd_bench_sweep)

    p = verbs.add_parser("oracle", help="reference-solution checks").add_subparsers(dest="oracle_verb", required=True)
    p = p.add_parser("verify", help="compare solvers with reference solutions on a problem file")
    p.add_argument("file")
    _config_flags(p)
    p.set_defaults(fn=cmd_oracle_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    rows = args.fn(args)
    _emit(rows, args.format)
    if args.fn is cmd_oracle_verify and any(r["status"] != "ok" for r in rows):
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
