"""Command-line front end.

    timber-auction <command> [--config FILE] [flags]

Commands: solve-dp, estimate, solve-bids, counterfactual, montecarlo. Each
writes its artifacts into ``--output-dir`` together with ``run.json``, which
records the resolved configuration and the master seed. Failures exit
nonzero and print one JSON object to stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import re
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .auction_estimation import fit_entry, fit_valuation, read_bid_csv, read_entry_csv, type_share, write_bid_csv, write_entry_csv
from .bidsolver import ValueDistribution, bid, check_inequalities, gamma_support, solve_bid_system
from .config import ConfigError, load_config
from .counterfactual import scenarios_from_config, sweep
from .dp import continuation_value_curve
from .dynamic_estimation import (CuttingData, bootstrap_dynamic, fit_dynamic, fit_dynamic_by_type, read_cutting_csv,
                                 write_cutting_csv)
from .model import (AuctionFormat, BidderType, DynamicParams, InvalidInput, build_gaussian_transition, estimate_transition,
                    json_safe, read_price_csv)
from .montecarlo import McConfig, run_mc, simulate_rep

log = logging.getLogger("timber_auction")

EXIT_INVALID = 2
EXIT_FAILURE = 1


# --- helpers

def _prices(cfg):
    grid = np.asarray(cfg["price_grid"], float)
    if cfg.get("price_csv"):
        return estimate_transition(read_price_csv(cfg["price_csv"]), grid, cfg["price_smoothing"])
    return build_gaussian_transition(grid, float(cfg["price_variance"]))


def _stamp_csv(path: Path, seed: int) -> Path:
    """Append a constant ``seed`` column to a CSV written without one."""
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if rows and "seed" not in rows[0]:
        rows = [rows[0] + ["seed"]] + [r + [str(seed)] for r in rows[1:]]
        with path.open("w", newline="") as fh:
            csv.writer(fh).writerows(rows)
    return path


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(json_safe(obj), indent=2, sort_keys=True, default=_json_default, allow_nan=False) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (BidderType, AuctionFormat)):
        return o.value
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _manifest(out: Path, command: str, cfg: dict, artifacts: list, extra: dict | None = None):
    _write_json(out / "run.json", {
        "command": command,
        "version": __version__,
        "seed": cfg["seed"],
        "config": cfg,
        "artifacts": sorted(p.name for p in artifacts),
        **(extra or {}),
    })


# --- commands

def cmd_solve_dp(cfg: dict, out: Path) -> list:
    prices = _prices(cfg)
    params = DynamicParams(**cfg["dynamic"])
    curve = continuation_value_curve(params, prices, cfg["lengths"], cfg["tract_sizes"], cfg["p0_idx"])
    arts = [_stamp_csv(curve.to_csv(out / "v0.csv"), cfg["seed"])]
    if cfg["plots"]:
        from .plotting import plot_value_curves

        arts.append(plot_value_curves(curve, out / "v0.png"))
    return arts


def cmd_estimate(cfg: dict, out: Path) -> list:
    """Harvest parameters first, then entry rates, then valuation parameters."""
    prices = _prices(cfg)
    seed = cfg["seed"]
    cutting = CuttingData(read_cutting_csv(cfg["cutting_csv"]), prices.size)
    entry = read_entry_csv(cfg["entry_csv"])
    bids = read_bid_csv(cfg["bids_csv"])
    init = DynamicParams(**cfg["dynamic_init"])
    result = {"seed": seed}
    if cfg["by_type"]:
        fits = fit_dynamic_by_type(cutting, prices, {m: init for m in BidderType},
                                   n_starts=cfg["dynamic_starts"], seed=seed)
        result["dynamic"] = {m.value: f.to_dict() for m, f in fits.items()}
    else:
        fit = fit_dynamic(cutting, prices, init, n_starts=cfg["dynamic_starts"], seed=seed)
        result["dynamic"] = fit.to_dict()
        if cfg["bootstrap_reps"]:
            boot = bootstrap_dynamic(cutting, prices, fit, reps=cfg["bootstrap_reps"], seed=seed, n_jobs=cfg["n_jobs"])
            result["dynamic"]["bootstrap"] = boot.to_dict()
    entry_fits = fit_entry(entry, init=tuple(cfg["entry_init"]), boot_reps=cfg["bootstrap_reps"], seed=seed,
                           n_jobs=cfg["n_jobs"])
    result["entry"] = {fmt.value: e.to_dict() for fmt, e in entry_fits.items()}
    fmt = AuctionFormat(cfg["valuation_format"])
    if fmt not in entry_fits:
        raise InvalidInput(f"no {fmt.value} auctions in {cfg['entry_csv']}; cannot form the type share")
    p_hat = type_share(entry_fits[fmt].lambda_l, entry_fits[fmt].lambda_s)
    val = fit_valuation(bids, p_hat, init=tuple(cfg["valuation_init"]), n_starts=cfg["valuation_starts"], seed=seed,
                        boot_reps=cfg["bootstrap_reps"], n_jobs=cfg["n_jobs"])
    result["valuation"] = val.to_dict()
    result["valuation"]["p_hat"] = p_hat
    return [_write_json(out / "estimates.json", result)]


def cmd_solve_bids(cfg: dict, out: Path) -> list:
    n = {BidderType.LOGGER: cfg["n_logger"], BidderType.SAWMILL: cfg["n_sawmill"]}
    spec = {m: cfg[m.value] for m in BidderType}
    comps = {m: (float(spec[m]["sigma"]), float(spec[m]["mu"]) * float(spec[m]["v0"])) for m in BidderType if n[m] > 0}
    if any(shape <= 0 or scale <= 0 for shape, scale in comps.values()):
        raise InvalidInput("mu, sigma and v0 must be positive for every type with bidders")
    lo, hi = gamma_support([(n[m], *comps[m]) for m in comps], cfg["tail"])
    dists = {m: ValueDistribution.gamma(m, *comps[m], lo, hi) for m in comps}
    system = solve_bid_system(dists.get(BidderType.LOGGER), dists.get(BidderType.SAWMILL), n[BidderType.LOGGER],
                              n[BidderType.SAWMILL], K=cfg["K"], n_starts=cfg["n_starts"], seed=cfg["seed"],
                              tol=cfg["tol"], scale=cfg["scale"])
    system.diagnostics["inequalities"] = {m.value: c for m, c in check_inequalities(system).items()}
    doc = system.to_dict()
    doc["seed"] = cfg["seed"]
    arts = [_write_json(out / "bid_system.json", doc)]
    v = np.linspace(lo, hi, cfg["grid_points"])
    path = out / "bids.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["value"] + [f"bid_{m.value}" for m in system.types] + ["seed"])
        cols = [bid(system, m, v) for m in system.types]
        for i, x in enumerate(v):
            w.writerow([repr(float(x))] + [repr(float(c[i])) for c in cols] + [cfg["seed"]])
    arts.append(path)
    if cfg["plots"]:
        from .plotting import plot_bid_functions

        arts.append(plot_bid_functions(system, out / "bids.png"))
    if not system.converged:
        log.warning("bid solver did not reach tolerance; see diagnostics in bid_system.json")
    return arts


def cmd_counterfactual(cfg: dict, out: Path) -> list:
    scenarios = scenarios_from_config(cfg)
    table = sweep(scenarios, cfg["lengths"], draws=cfg["draws"], seed=cfg["seed"], n_jobs=cfg["n_jobs"],
                  solver_kw={"K": cfg["K"], "n_starts": cfg["n_starts"], "tol": cfg["tol"]})
    arts = [_stamp_csv(table.to_csv(out / "revenue.csv"), cfg["seed"]),
            table.to_long_csv(out / "revenue_long.csv"),
            table.to_json(out / "revenue.json")]
    if cfg["plots"]:
        from .plotting import plot_revenue

        for size in dict.fromkeys(r.tract_size for r in table.rows):
            arts.append(plot_revenue(table, out / f"revenue_{size.lower()}.png", tract_size=size))
    return arts


def cmd_montecarlo(cfg: dict, out: Path) -> list:
    fields = {k: cfg[k] for k in McConfig.__dataclass_fields__ if k in cfg}
    mc = McConfig(**fields)
    arts = []
    if cfg["write_data"]:
        entry, bids, cutting = simulate_rep(mc, 0)
        arts += [write_entry_csv(entry, out / "entry.csv"), write_bid_csv(bids, out / "bids.csv"),
                 write_cutting_csv(cutting, out / "cutting.csv")]
        arts = [_stamp_csv(p, mc.seed) for p in arts]
    report = run_mc(mc, n_jobs=cfg["n_jobs"])
    arts += [_stamp_csv(report.to_csv(out / "mc.csv"), mc.seed), report.to_json(out / "mc.json")]
    if cfg["plots"]:
        from .plotting import plot_mc_errors

        arts.append(plot_mc_errors(report, out / "mc.png"))
    return arts


COMMANDS = {
    "solve-dp": cmd_solve_dp,
    "estimate": cmd_estimate,
    "solve-bids": cmd_solve_bids,
    "counterfactual": cmd_counterfactual,
    "montecarlo": cmd_montecarlo,
}


# --- argument parsing

def _json_value(text):
    """Flags accept JSON literals (numbers, lists, objects) and fall back to plain strings."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="timber-auction", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--n-jobs", dest="n_jobs", type=int, help="parallel workers")
    common.add_argument("--output-dir", dest="output_dir", help="artifact directory")
    common.add_argument("--no-plots", dest="plots", action="store_const", const=False, help="skip figures")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key; VALUE is parsed as JSON when possible")
    common.add_argument("-v", "--verbose", action="store_true")
    sub.add_parser("solve-dp", parents=[common], help="continuation values across lengths and tract sizes")
    p = sub.add_parser("estimate", parents=[common], help="harvest, entry and valuation estimates from CSV data")
    p.add_argument("--cutting-csv", dest="cutting_csv")
    p.add_argument("--entry-csv", dest="entry_csv")
    p.add_argument("--bids-csv", dest="bids_csv")
    p = sub.add_parser("solve-bids", parents=[common], help="sealed-bid equilibrium for one composition")
    p.add_argument("--n-logger", dest="n_logger", type=int)
    p.add_argument("--n-sawmill", dest="n_sawmill", type=int)
    p = sub.add_parser("counterfactual", parents=[common], help="revenue table across formats and lengths")
    p.add_argument("--draws", type=int)
    p = sub.add_parser("montecarlo", parents=[common], help="simulate-and-reestimate study")
    p.add_argument("--reps", type=int)
    p.add_argument("--write-data", dest="write_data", action="store_const", const=True)
    return parser


def _overrides(args) -> dict:
    skip = {"command", "config", "set", "verbose"}
    out = {k: v for k, v in vars(args).items() if k not in skip}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = _json_value(value)
    return out


# data-layer messages read "<path>: row <n>: ..." or "<path>: ..."
_LOCATION = re.compile(r"^(?P<file>[^:\s]+):(?: row (?P<row>\d+):)?")


def _error_payload(exc: Exception, command: str | None) -> dict:
    msg = str(exc)
    payload = {"error": type(exc).__name__, "message": msg, "command": command, "file": None, "row": None}
    if isinstance(exc, ConfigError):
        payload["file"], payload["row"] = exc.file, exc.row
    else:
        m = _LOCATION.match(msg)
        if m:
            payload["file"] = m.group("file")
            payload["row"] = int(m.group("row")) if m.group("row") else None
        elif isinstance(exc, OSError) and exc.filename:
            payload["file"] = str(exc.filename)
    return payload


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.command, args.config, _overrides(args))
        out = Path(cfg["output_dir"])
        out.mkdir(parents=True, exist_ok=True)
        log.info("%s: master seed %d", args.command, cfg["seed"])
        t0 = time.perf_counter()
        arts = COMMANDS[args.command](cfg, out)
        _manifest(out, args.command, cfg, arts)
        log.info("%s finished in %.1fs", args.command, time.perf_counter() - t0)
    except (InvalidInput, OSError, ValueError) as exc:
        print(json.dumps(_error_payload(exc, args.command)), file=sys.stderr)
        return EXIT_INVALID if isinstance(exc, (InvalidInput, ValueError)) else EXIT_FAILURE
    except Exception as exc:  # noqa: BLE001 - reported as JSON rather than a traceback
        log.debug("unhandled error", exc_info=True)
        print(json.dumps(_error_payload(exc, args.command)), file=sys.stderr)
        return EXIT_FAILURE
    return 0


if __name__ == "__main__":
    sys.exit(main())
