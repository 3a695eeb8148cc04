import csv
import io
import json
from contextlib import redirect_stdout
from pathlib import Path

import numpy as np
import pytest

from unionro.bench.cases import (CHEMICALS, CpnpParams, build_climate_mpc, build_cpnp, build_location_transportation,
                                 climate_dynamics, cpnp_case, get_case, location_case, location_subsets)
from unionro.bench import experiments
from unionro.bench.cli import main
from unionro.bench.experiments import runtime_scaling, sample_ambiguity, sweep_rho
from unionro.bench.io import RESULT_COLUMNS, ProblemFile, ResultRecord, case_file, records_to_csv, records_to_json
from unionro.bench.oracles import brute_force_fixed_scenario, linprog_value
from unionro.ccg_dro import kl_divergence
from unionro.errors import GraphInconsistent, SamplerStarved
from unionro.model import deterministic_mpc_lp, solve_fixed_scenario

PROBLEMS = Path(__file__).resolve().parents[1] / "problems"


@pytest.mark.parametrize("name", ["location", "cpnp", "climate"])
def test_shipped_files_round_trip(name):
    text = (PROBLEMS / f"{name}.json").read_text()
    pf = ProblemFile.loads(text)
    assert pf.dumps() + "\n" == text
    assert ProblemFile.loads(pf.dumps()).to_dict() == pf.to_dict()


@pytest.mark.parametrize("name", ["location", "cpnp", "climate"])
def test_shipped_files_match_builders(name):
    built = case_file(get_case(name)).to_dict()
    assert ProblemFile.load(PROBLEMS / f"{name}.json").to_dict() == json.loads(json.dumps(built))


def test_unknown_case():
    with pytest.raises(ValueError):
        get_case("nope")


def test_result_formats():
    recs = [ResultRecord("algorithm1", 1.5, np.array([1.0, 0.0]), 0.1234, 3)]
    rows = list(csv.reader(io.StringIO(records_to_csv(recs))))
    assert tuple(rows[0]) == RESULT_COLUMNS
    assert rows[1] == ["algorithm1", "1.5", "1.0 0.0", "0.12", "3"]
    assert list(json.loads(records_to_json(recs))[0]) == list(RESULT_COLUMNS)


def test_location_coefficients():
    p = build_location_transportation(location_subsets())
    assert np.array_equal(p.c, [400, 414, 326, 18, 25, 20])
    assert np.array_equal(p.b, [22, 33, 24, 33, 23, 30, 20, 25, 27])
    assert np.array_equal(-p.h[3:], [206, 274, 220])
    assert np.all(p.x_bounds[3:, 0] == 0.0)  # capacities are nonnegative


def test_location_deterministic_limit():
    case = location_case()
    ref = brute_force_fixed_scenario(case.problem, np.zeros(3))
    assert ref.evaluated <= 8
    assert solve_fixed_scenario(case.problem, np.zeros(3)).objective_value == pytest.approx(ref.value, abs=1e-6)


def _nominal(params):
    return np.tile([params.nominal_supply] * 2 + [params.nominal_demand] * 2, params.T)


def test_cpnp_zero_budget_builds_nothing():
    params = CpnpParams(T=2, budget=0.0)
    p = build_cpnp(params)
    sol = solve_fixed_scenario(p, _nominal(params), backend="highs")
    assert np.all(np.round(sol.primal[: p.num_x][p.x_binary]) == 0)
    assert np.allclose(sol.primal[: p.num_x], 0.0, atol=1e-9)


def test_cpnp_single_chain_links_purchase_and_sales():
    params = CpnpParams(network=({"A": 1.1, "D": -1.0},), T=1)
    p = build_cpnp(params)
    z = solve_fixed_scenario(p, _nominal(params)).primal[p.num_x:]
    purchase_A, sale_D, level = z[0], z[2], z[4]
    assert level > 0
    assert purchase_A == pytest.approx(1.1 * level)
    assert sale_D == pytest.approx(level)


@pytest.mark.parametrize("network", [({"A": 1.0, "E": -1.0},), ({"D": 1.0, "G": -1.0},), ({"A": 1.0, "B": -1.0},),
                                     ({"A": 1.0, "Z": -1.0},)])
def test_cpnp_rejects_bad_graphs(network):
    with pytest.raises(GraphInconsistent):
        build_cpnp(CpnpParams(network=network, T=1))


def test_cpnp_small_horizon_enumeration():
    case = cpnp_case(CpnpParams(T=1))
    v = np.asarray(case.params["reference_v"])
    ref = brute_force_fixed_scenario(case.problem, v)
    assert solve_fixed_scenario(case.problem, v).objective_value == pytest.approx(ref.value, abs=1e-6)
    assert len(CHEMICALS) == 7 and case.problem.num_x == 16


def test_climate_counts_and_heating_bound():
    prob, enc = build_climate_mpc(0, N=4, K=2)
    assert enc.num_binaries == 8 and enc.source.explicit_count == 16
    assert np.all(prob.x_bounds == [0.0, 150.0])
    assert prob.blocks == (1, 1, 1, 1)


def test_climate_deterministic_schedule():
    prob, _ = build_climate_mpc(0, N=6, K=2)
    ref, _ = linprog_value(deterministic_mpc_lp(climate_dynamics(0, 6, penalty=None), 6))
    assert np.isfinite(ref)
    assert solve_fixed_scenario(prob, np.zeros(6)).objective_value == pytest.approx(ref, abs=1e-6)


def test_sampler_zero_radius_and_membership():
    p = np.array([0.5, 0.3, 0.2])
    P, rate = sample_ambiguity(p, 0.0, 5, np.random.default_rng(0))
    assert rate == 1.0 and np.allclose(P, p)
    P, rate = sample_ambiguity(p, 0.2, 200, np.random.default_rng(0))
    assert P.shape == (200, 3) and 0 < rate <= 1
    assert all(kl_divergence(q, p) <= 0.2 for q in P)


def test_sampler_reports_starvation(monkeypatch):
    monkeypatch.setattr(experiments, "MIN_ACCEPTANCE", 0.999)
    with pytest.raises(SamplerStarved):
        sample_ambiguity(np.full(4, 0.25), 0.05, 10, np.random.default_rng(0))


def test_sweep_is_deterministic():
    case = location_case()
    runs = [sweep_rho(case.problem, case.union, case.ambiguity.p_bar, [0.0, 0.5], n_samples=100, seed=3).rows
            for _ in range(2)]
    assert json.dumps(runs[0]) == json.dumps(runs[1])
    zero = runs[0][0]
    assert zero["min"] == zero["mean"] == zero["max"]
    wide = runs[0][1]
    assert wide["min"] <= wide["mean"] <= wide["max"]
    assert wide["max"] <= wide["objective"] + 1e-6  # the solved value is the worst case over the ball


def test_runtime_scaling_counts():
    rows = runtime_scaling(N_list=(2, 3))
    assert [r["baseline_subproblems"].split()[0] for r in rows] == ["4", "8"]
    for r in rows:
        assert set(r["algo1_subproblems"].split()) == {"1"}
        assert r["algo1_obj"] == pytest.approx(r["baseline_obj"], abs=2e-6)


def _run_cli(argv):
    buf = io.StringIO()
    with redirect_stdout(buf):
        code = main(argv)
    return code, buf.getvalue()


def test_cli_oracle_verify():
    code, out = _run_cli(["oracle", "verify", str(PROBLEMS / "location.json")])
    assert code == 0
    assert all(r["status"] == "ok" for r in json.loads(out))


def test_cli_solve_ro_csv():
    code, out = _run_cli(["solve-ro", str(PROBLEMS / "climate.json"), "--format", "csv"])
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0 and tuple(rows[0]) == RESULT_COLUMNS
    assert rows[0]["scheme"] == "algorithm1"


def test_cli_solve_dro_radius_flag():
    _, zero = _run_cli(["solve-dro", str(PROBLEMS / "location.json"), "--rho", "0"])
    _, wide = _run_cli(["solve-dro", str(PROBLEMS / "location.json"), "--rho", "50"])
    assert json.loads(zero)[0]["objective"] <= json.loads(wide)[0]["objective"] + 1e-6
