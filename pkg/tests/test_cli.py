import csv
import json

import pytest

from timber_auction.cli import main
from timber_auction.config import ConfigError, load_config
from timber_auction.montecarlo import McConfig, estimate_rep, simulate_rep

MC_SMALL = ["--set", "auction_count=200", "--set", "agent_count=200", "--set", "dynamic_starts=1",
            "--set", "valuation_starts=1"]


def run(argv, capsys):
    code = main(argv)
    err = capsys.readouterr().err.strip()
    return code, (json.loads(err.splitlines()[-1]) if code else None)


def artifacts(d):
    """Contents of every artifact except the manifest, which records the output path."""
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "run.json"}


def test_malformed_csv_row_exits_nonzero_and_names_row(tmp_path, capsys):
    ok = tmp_path / "ok"
    assert main(["montecarlo", "--reps", "1", "--write-data", "--no-plots", "--output-dir", str(ok), *MC_SMALL]) == 0
    lines = (ok / "entry.csv").read_text().splitlines()
    lines[4] = ",".join(lines[4].split(",")[:-2])
    bad = tmp_path / "bad_entry.csv"
    bad.write_text("\n".join(lines) + "\n")
    code, err = run(["estimate", "--cutting-csv", str(ok / "cutting.csv"), "--entry-csv", str(bad),
                     "--bids-csv", str(ok / "bids.csv"), "--output-dir", str(tmp_path / "e")], capsys)
    assert code != 0
    assert err["row"] == 5 and err["file"] == str(bad) and err["command"] == "estimate"
    assert "row 5" in err["message"]


def test_missing_input_file_reported(tmp_path, capsys):
    code, err = run(["estimate", "--cutting-csv", str(tmp_path / "nope.csv"), "--entry-csv", "x", "--bids-csv", "y",
                     "--output-dir", str(tmp_path)], capsys)
    assert code != 0 and err["file"] is not None


def test_montecarlo_two_reps_emits_artifacts(tmp_path):
    out = tmp_path / "mc"
    assert main(["montecarlo", "--reps", "2", "--seed", "9", "--output-dir", str(out), *MC_SMALL]) == 0
    for name in ("mc.csv", "mc.json", "mc.png", "run.json"):
        assert (out / name).exists()
    report = json.loads((out / "mc.json").read_text())
    assert report["seed"] == 9 and report["config"]["reps"] == 2 and len(report["replications"]) == 2
    manifest = json.loads((out / "run.json").read_text())
    assert manifest["seed"] == 9 and manifest["config"]["reps"] == 2
    with (out / "mc.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 9 and all(r["seed"] == "9" for r in rows)


def test_estimate_on_montecarlo_data_reproduces_in_process(tmp_path):
    # the CLI path through CSV files must give bit-identical estimates to the in-process rep
    data = tmp_path / "data"
    assert main(["montecarlo", "--reps", "1", "--seed", "4", "--write-data", "--no-plots", "--output-dir", str(data),
                 *MC_SMALL]) == 0
    est_dir = tmp_path / "est"
    assert main(["estimate", "--seed", "4", "--cutting-csv", str(data / "cutting.csv"),
                 "--entry-csv", str(data / "entry.csv"), "--bids-csv", str(data / "bids.csv"),
                 "--set", "dynamic_starts=1", "--set", "valuation_starts=1", "--output-dir", str(est_dir)]) == 0
    cli = json.loads((est_dir / "estimates.json").read_text())
    cfg = McConfig(reps=1, seed=4, auction_count=200, agent_count=200, dynamic_starts=1, valuation_starts=1)
    rep = estimate_rep(cfg, *simulate_rep(cfg, 0), seed=cfg.seed)["estimates"]
    dyn, val, entry = cli["dynamic"]["params"], cli["valuation"]["params"], cli["entry"]["oral"]
    got = {"gamma": dyn["gamma"], "c1": dyn["c1"], "c2": dyn["c2"],
           "lambda_l": entry["lambda_l"], "lambda_s": entry["lambda_s"],
           "mu_l": val["mu_l"], "sigma_l": val["sigma_l"], "mu_s": val["mu_s"], "sigma_s": val["sigma_s"]}
    assert got == rep


def test_unknown_config_key_rejected(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"lengths": [4], "colour": "red"}))
    code, err = run(["solve-dp", "--config", str(cfg), "--output-dir", str(tmp_path)], capsys)
    assert code != 0 and "colour" in err["message"] and err["file"] == str(cfg)


def test_invalid_json_config_names_line(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text('{\n  "lengths": [4],\n  "seed": ,\n}\n')
    code, err = run(["solve-dp", "--config", str(cfg)], capsys)
    assert code != 0 and err["row"] == 3


def test_flags_override_config_file(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"seed": 1, "lengths": [4, 8], "dynamic": {"gamma": 2.0}}))
    cfg = load_config("solve-dp", path, {"seed": 5, "lengths": None})
    assert cfg["seed"] == 5 and cfg["lengths"] == [4, 8]
    assert cfg["dynamic"] == {"gamma": 2.0, "c1": 0.5, "c2": 0.05, "beta": 0.95}
    with pytest.raises(ConfigError):
        load_config("solve-dp", None, {"dynamic": {"delta": 1.0}})


def test_solve_dp_smoke(tmp_path):
    out = tmp_path / "dp"
    assert main(["solve-dp", "--seed", "3", "--set", "lengths=[2,4]", "--set", "tract_sizes=[1.0,2.0]",
                 "--output-dir", str(out)]) == 0
    with (out / "v0.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    # two lengths by two tract sizes by every starting price state
    assert len(rows) == 2 * 2 * 10 and all(r["seed"] == "3" for r in rows)
    assert (out / "v0.png").exists()
    assert json.loads((out / "run.json").read_text())["seed"] == 3


def test_solve_bids_smoke(tmp_path):
    out = tmp_path / "sb"
    assert main(["solve-bids", "--seed", "2", "--no-plots", "--output-dir", str(out)]) == 0
    doc = json.loads((out / "bid_system.json").read_text())
    assert doc["seed"] == 2
    with (out / "bids.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 201
    # bids never exceed values
    assert all(float(r[k]) <= float(r["value"]) + 1e-9 for r in rows for k in ("bid_logger", "bid_sawmill"))


def test_same_seed_byte_identical(tmp_path):
    argv = ["montecarlo", "--reps", "2", "--seed", "11", "--no-plots", "--write-data", *MC_SMALL]
    assert main([*argv, "--output-dir", str(tmp_path / "a")]) == 0
    assert main([*argv, "--output-dir", str(tmp_path / "b"), "--n-jobs", "2"]) == 0
    assert artifacts(tmp_path / "a") == artifacts(tmp_path / "b")
