"""Acceptance criteria A1-A8.

Each test records one PASS/FAIL line that ``conftest.py`` prints in the
terminal summary. Criteria are asserted at their stated tolerances; a
criterion that the implementation does not meet fails here.

Monte Carlo scale is set by ``TIMBER_ACCEPTANCE_REPS`` (default 100, the
desk-scale setting with widened dynamic tolerances; 500 is the full design)
and ``TIMBER_ACCEPTANCE_JOBS`` (default 1).
"""
import json
import os

import numpy as np
import pytest

from oracles import dp_tree_v0, symmetric_fpsb_bid
from test_auction_estimation import MC_TRUE, density_vs_simulation
from timber_auction.auction_estimation import ValuationParams
from timber_auction.bidsolver import (ValueDistribution, bid, chebyshev_nodes, foc_residual, from_unit, gamma_support,
                                      solve_bid_system)
from timber_auction.cli import main
from timber_auction.counterfactual import (default_config, draw_valuations, revenue_oral, revenue_sealed,
                                           scenarios_from_config, solve_scenario_bids, sweep)
from timber_auction.dp import ccp, simulate_paths, solve_dp
from timber_auction.model import ACTION_GRID, BidderType, CuttingState, DynamicParams, build_gaussian_transition
from timber_auction.montecarlo import McConfig, run_mc

L, S = BidderType.LOGGER, BidderType.SAWMILL
REPS = int(os.environ.get("TIMBER_ACCEPTANCE_REPS", "100"))
JOBS = int(os.environ.get("TIMBER_ACCEPTANCE_JOBS", "1"))

RESULTS = {}


def record(key, ok, detail):
    RESULTS[key] = f"{key} {'PASS' if ok else 'FAIL'}  {detail}"
    return ok


@pytest.fixture(scope="module")
def mc_report():
    return run_mc(McConfig(reps=REPS), n_jobs=JOBS)


def test_A1_dynamic_monte_carlo(mc_report):
    # reference bias and RMSE of (gamma, c1, c2) over 500 replications
    ref_bias = {"gamma": -0.109, "c1": -0.072, "c2": -0.005}
    ref_rmse = {"gamma": 0.144, "c1": 0.075, "c2": 0.007}
    widen = 2.0 if REPS >= 500 else 3.0
    bias_tol = 1.0 if REPS >= 500 else 3.0
    parts, ok = [], True
    for k in ref_rmse:
        r, b = mc_report.rmse[k], mc_report.bias[k]
        good = ref_rmse[k] / widen <= r <= widen * ref_rmse[k] and abs(b - ref_bias[k]) <= bias_tol * ref_rmse[k]
        ok &= good
        parts.append(f"{k}: bias {b:+.4f} rmse {r:.4f} (ref {ref_bias[k]:+.3f}/{ref_rmse[k]:.3f}){'' if good else ' x'}")
    record("A1", ok, f"reps={REPS} rmse within x{widen:g}, bias within {bias_tol:g} ref rmse; " + "; ".join(parts))
    assert ok


def test_A2_auction_monte_carlo(mc_report):
    ref_rmse = {"mu_l": 0.392, "sigma_l": 0.153, "mu_s": 0.994, "sigma_s": 0.699, "lambda_l": 0.028, "lambda_s": 0.030}
    ref_bias = {"lambda_l": 0.001, "lambda_s": -0.001}
    parts, ok = [], True
    for k, ref in ref_rmse.items():
        r = mc_report.rmse[k]
        good = ref / 2 <= r <= 2 * ref
        if k in ref_bias:
            good &= abs(mc_report.bias[k] - ref_bias[k]) <= 0.01
        ok &= good
        parts.append(f"{k}: bias {mc_report.bias[k]:+.4f} rmse {r:.4f} (ref {ref:.3f}){'' if good else ' x'}")
    record("A2", ok, f"reps={REPS}; " + "; ".join(parts))
    assert ok


def test_A3_bid_solver_oracle():
    U = {m: ValueDistribution.uniform(m) for m in (L, S)}
    uni = solve_bid_system(U[L], U[S], 1, 1)
    v = np.linspace(0, 1, 2001)
    err_uni = max(np.max(np.abs(bid(uni, m, v) - v / 2)) for m in uni.types)

    lo, hi = gamma_support([(1, 3.0, 1.0)])
    G = {m: ValueDistribution.gamma(m, 3.0, 1.0, lo, hi) for m in (L, S)}
    gam = solve_bid_system(G[L], G[S], 1, 1)
    vg = np.linspace(lo, hi, 301)
    ref = np.array([symmetric_fpsb_bid(G[L].cdf, lo, x, 2) for x in vg])
    err_gam = max(np.max(np.abs(bid(gam, m, vg) - ref)) for m in gam.types)

    foc = 0.0
    for s in (uni, gam):
        nodes = from_unit(chebyshev_nodes(s.nodes), s.v_lo, s.b_hi)
        foc = max(foc, max(np.max(np.abs(foc_residual(s, m, nodes))) for m in s.types))
    ok = err_uni <= 1e-2 and err_gam <= 1e-2 and foc <= 1e-4
    record("A3", ok, f"uniform sup err {err_uni:.2e} (<=1e-2); gamma sup err {err_gam:.2e} (<=1e-2); "
                     f"max FOC residual at collocation nodes {foc:.2e} (<=1e-4)")
    assert ok


def test_A4_revenue_equivalence():
    cfg = default_config()
    worst, cells = 0.0, 0
    for sc in scenarios_from_config(cfg):
        if len(set(sc.participants)) != 1:
            continue
        for i, T in enumerate(cfg["lengths"]):
            cell = sc.at_length(T)
            system = solve_scenario_bids(cell)
            vals = draw_valuations(cell, np.random.default_rng([0, cells]), 100_000)
            sealed = revenue_sealed(cell, system, values=vals).mean
            oral = revenue_oral(cell, values=vals).mean
            worst = max(worst, abs(sealed - oral) / oral)
            cells += 1
    ok = cells > 0 and worst <= 0.01
    record("A4", ok, f"{cells} symmetric cells, max |sealed - oral| / oral = {worst:.4%} (<=1%)")
    assert ok


def test_A5_transaction_density():
    worst = {}
    for name, params in (("asym", MC_TRUE), ("sym", ValuationParams(1.5, 2.0, 1.5, 2.0))):
        for n in (2, 3):
            worst[f"{name} n={n}"] = density_vs_simulation(n, params, 0.4, 1_000_000, seed=10 + n)
    ok = max(worst.values()) <= 3.0
    record("A5", ok, "max |empirical - model| / se per case: " +
           ", ".join(f"{k} {v:.2f}" for k, v in worst.items()) + " (<=3)")
    assert ok


def test_A6_dp_invariants():
    prices = build_gaussian_transition(np.arange(1, 11, dtype=float), 1.0)
    par = DynamicParams(1.0, 0.5, 0.05, 0.95)
    sol = solve_dp(par, prices, 8, 1.0)
    norm = float(np.max(np.abs(sol.ccps.sum(axis=-1) - 1.0)))
    forced = all(ccp(sol, CuttingState(8, p, rem))[r] == 1.0 for p in range(10) for r, rem in enumerate(ACTION_GRID))
    paths = simulate_paths(sol, prices, 10_000, seed=1, p0_idx=3)
    harvest = all(p.actions.sum() == 1.0 for p in paths)
    tree = 0.0
    for T in (1, 2, 3):
        for P in (2, 3):
            grid = np.linspace(1.0, 4.0, P)
            pp = build_gaussian_transition(grid, 1.5)
            s = solve_dp(par, pp, T, 1.5)
            for p0 in range(P):
                ref = dp_tree_v0(grid, pp.transition.tolist(), *par.as_array(), par.beta, T, 1.5, p0)
                tree = max(tree, abs(s.v0[p0] - ref))
    ok = norm <= 1e-12 and forced and harvest and tree <= 1e-9
    record("A6", ok, f"CCP sum error {norm:.1e}; terminal forced {forced}; 10^4 paths sum to one {harvest}; "
                     f"tree max diff {tree:.1e} (<=1e-9)")
    assert ok


def test_A7_directional_counterfactuals():
    cfg = default_config()
    table = sweep(scenarios_from_config(cfg), cfg["lengths"], draws=100_000, seed=0)
    rev = {(r.tract_size, r.format, r.participants, r.length): r.revenue for r in table.rows}
    sizes, lengths = list(cfg["tract_sizes"]), cfg["lengths"]
    inc = all(np.all(np.diff([rev[(z, "oral", "(S, S)", T)] for T in lengths]) > 0) for z in sizes)
    third = all(rev[(z, "oral", "(S, S, S)", T)] > rev[(z, "oral", "(S, S)", T)] for z in sizes for T in lengths)
    sealed = all(rev[(z, "sealed", "(S, L)", T)] >= rev[(z, "oral", "(S, L)", T)] for z in sizes for T in lengths)
    ok = inc and third and sealed
    record("A7", ok, f"(S,S) oral increasing {inc}; third sawmill raises revenue {third}; "
                     f"(S,L) sealed >= oral {sealed}; {len(sizes)} tract sizes x {len(lengths)} lengths")
    assert ok


def _outputs(d):
    files = {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "run.json"}
    manifest = json.loads((d / "run.json").read_text())
    for k in ("output_dir", "n_jobs"):
        manifest["config"].pop(k)
    files["run.json"] = json.dumps(manifest, sort_keys=True).encode()
    return files


def test_A8_determinism(tmp_path):
    cf = tmp_path / "cf.json"
    small_cf = {**{k: v for k, v in default_config().items() if k != "compositions"},
                "compositions": [{"participants": ["sawmill", "logger"], "formats": ["oral", "sealed"]}],
                "tract_sizes": {"Small": 10.0}, "lengths": [4, 8]}
    cf.write_text(json.dumps(small_cf))
    mc = ["--set", "auction_count=200", "--set", "agent_count=200", "--set", "dynamic_starts=1",
          "--set", "valuation_starts=1"]
    pipelines = {
        "solve-dp": ["solve-dp", "--set", "lengths=[2,4,8]"],
        "solve-bids": ["solve-bids", "--n-logger", "1", "--n-sawmill", "2"],
        "montecarlo": ["montecarlo", "--reps", "3", "--write-data", *mc],
        "counterfactual": ["counterfactual", "--config", str(cf), "--draws", "20000"],
    }
    same, names = True, []
    for name, argv in pipelines.items():
        runs = {}
        for tag, jobs in (("a", 1), ("b", 1), ("c", 8)):
            out = tmp_path / f"{name}-{tag}"
            assert main([*argv, "--seed", "17", "--n-jobs", str(jobs), "--output-dir", str(out)]) == 0
            runs[tag] = _outputs(out)
        ok = runs["a"] == runs["b"] == runs["c"]
        same &= ok
        names.append(f"{name} {'identical' if ok else 'DIFFERS'} ({len(runs['a'])} files)")
    data = tmp_path / "montecarlo-a"
    est = ["estimate", "--cutting-csv", str(data / "cutting.csv"), "--entry-csv", str(data / "entry.csv"),
           "--bids-csv", str(data / "bids.csv"), "--set", "bootstrap_reps=4", "--set", "dynamic_starts=1",
           "--set", "valuation_starts=1", "--seed", "17"]
    runs = []
    for tag, jobs in (("a", 1), ("b", 1), ("c", 8)):
        out = tmp_path / f"estimate-{tag}"
        assert main([*est, "--n-jobs", str(jobs), "--output-dir", str(out)]) == 0
        runs.append(_outputs(out))
    ok = runs[0] == runs[1] == runs[2]
    same &= ok
    names.append(f"estimate {'identical' if ok else 'DIFFERS'} ({len(runs[0])} files)")
    record("A8", same, "two runs and n_jobs 1 vs 8: " + "; ".join(names))
    assert same
