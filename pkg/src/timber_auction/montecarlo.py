"""Simulate-and-reestimate study of the entry, valuation and harvesting estimators."""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from .auction_estimation import BidObservation, EntryObservation, fit_entry, fit_valuation, type_share
from .dp import simulate_arrays, solve_dp
from .dynamic_estimation import CuttingData, CuttingObservation, fit_dynamic
from .model import ACTION_GRID, json_safe, AuctionFormat, BidderType, DynamicParams, InvalidInput, build_gaussian_transition

log = logging.getLogger(__name__)

AUCTION_PARAMS = ("mu_l", "sigma_l", "mu_s", "sigma_s", "lambda_l", "lambda_s")
DYNAMIC_PARAMS = ("gamma", "c1", "c2")

_MAX_ENTRY_DRAWS = 10_000


@dataclass(frozen=True)
class McConfig:
    reps: int = 500
    auction_count: int = 500
    agent_count: int = 1000
    mu_l: float = 1.0
    sigma_l: float = 1.0
    mu_s: float = 2.0
    sigma_s: float = 3.0
    lambda_l: float = 0.1
    lambda_s: float = 0.15
    gamma: float = 1.0
    c1: float = 0.5
    c2: float = 0.05
    beta: float = 0.95
    price_min: int = 1
    price_max: int = 10
    price_variance: float = 1.0
    potential_min: int = 5
    potential_max: int = 15
    T: int = 8
    u0: float = 1.0
    dynamic_starts: int = 5
    valuation_starts: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.reps < 1 or self.auction_count < 1 or self.agent_count < 1:
            raise InvalidInput("reps, auction_count and agent_count must be positive")
        if self.potential_min < 0 or self.potential_max < self.potential_min:
            raise InvalidInput("invalid potential bidder range")

    @property
    def truth(self) -> dict:
        return {
            "mu_l": self.mu_l, "sigma_l": self.sigma_l, "mu_s": self.mu_s, "sigma_s": self.sigma_s,
            "lambda_l": self.lambda_l, "lambda_s": self.lambda_s,
            "gamma": self.gamma, "c1": self.c1, "c2": self.c2,
        }

    @property
    def dynamic_params(self) -> DynamicParams:
        return DynamicParams(self.gamma, self.c1, self.c2, self.beta)

    def price_process(self):
        return build_gaussian_transition(np.arange(self.price_min, self.price_max + 1, dtype=float), self.price_variance)


def _rep_rngs(seed: int, rep: int):
    auction_ss, cutting_ss = np.random.SeedSequence([seed, rep]).spawn(2)
    return np.random.default_rng(auction_ss), np.random.default_rng(cutting_ss)


def simulate_auction_dataset(config: McConfig, rep_seed, rng=None):
    """Oral auctions with Poisson entry by type and gamma values with V0 = 1.

    Auctions with a single entrant add an entry record only, since their
    price carries no information on the value distributions.
    """
    rng = np.random.default_rng(rep_seed) if rng is None else rng
    entry, bids = [], []
    for k in range(config.auction_count):
        N_l = int(rng.integers(config.potential_min, config.potential_max + 1))
        N_s = int(rng.integers(config.potential_min, config.potential_max + 1))
        rate_l, rate_s = config.lambda_l * N_l, config.lambda_s * N_s
        if rate_l + rate_s <= 0:
            raise InvalidInput("entry rates are zero; no auction can have an entrant")
        for _ in range(_MAX_ENTRY_DRAWS):
            n_l, n_s = int(rng.poisson(rate_l)), int(rng.poisson(rate_s))
            if n_l + n_s >= 1:
                break
        else:
            raise InvalidInput("could not draw an auction with at least one entrant")
        aid = f"a{k:05d}"
        entry.append(EntryObservation(aid, n_l + n_s, N_l, N_s, AuctionFormat.ORAL))
        xi_l = rng.gamma(config.sigma_l, config.mu_l, size=n_l)
        xi_s = rng.gamma(config.sigma_s, config.mu_s, size=n_s)
        if n_l + n_s < 2:
            continue
        values = np.concatenate([xi_l, xi_s])
        order = np.argsort(values)
        winner = BidderType.LOGGER if order[-1] < n_l else BidderType.SAWMILL
        bids.append(BidObservation(aid, n_l + n_s, winner, float(values[order[-2]]), 1.0, 1.0))
    return entry, bids


def simulate_cutting_dataset(config: McConfig, rep_seed, rng=None) -> list[CuttingObservation]:
    """Harvest spells of ``agent_count`` loggers sharing one (T, u0); initial prices uniform on the grid."""
    rng = np.random.default_rng(rep_seed) if rng is None else rng
    prices = config.price_process()
    sol = solve_dp(config.dynamic_params, prices, config.T, config.u0)
    p0 = rng.integers(0, prices.size, size=config.agent_count)
    p, _, a = simulate_arrays(sol, prices, config.agent_count, int(rng.integers(2**63 - 1)), p0)
    q = ACTION_GRID[a]
    return [CuttingObservation.from_actions(f"c{i:05d}", BidderType.LOGGER, config.T, config.u0, p[i], q[i])
            for i in range(config.agent_count)]


def simulate_rep(config: McConfig, rep: int):
    """Both datasets of replication ``rep``, from streams keyed on (seed, rep)."""
    arng, crng = _rep_rngs(config.seed, rep)
    entry, bids = simulate_auction_dataset(config, None, rng=arng)
    cutting = simulate_cutting_dataset(config, None, rng=crng)
    return entry, bids, cutting


def estimate_rep(config: McConfig, entry, bids, cutting, seed: int = 0) -> dict:
    """Entry, valuation and harvesting estimates for one simulated replication."""
    prices = config.price_process()
    ent = fit_entry(entry, init=(0.2, 0.2))[AuctionFormat.ORAL]
    p_hat = type_share(ent.lambda_l, ent.lambda_s)
    val = fit_valuation(bids, p_hat, n_starts=config.valuation_starts, seed=seed)
    dyn = fit_dynamic(CuttingData(cutting, prices.size), prices, config.dynamic_params,
                      n_starts=config.dynamic_starts, seed=seed, compute_se=False)
    est = dict(zip(("mu_l", "sigma_l", "mu_s", "sigma_s"), val.params.as_array().tolist()))
    est.update(lambda_l=ent.lambda_l, lambda_s=ent.lambda_s)
    est.update(zip(DYNAMIC_PARAMS, dyn.params.as_array().tolist()))
    return {
        "estimates": est,
        "converged": {"entry": ent.converged, "valuation": val.converged, "dynamic": dyn.converged},
        "n_bid_obs": len(bids),
    }


def _run_rep(config: McConfig, rep: int) -> dict:
    entry, bids, cutting = simulate_rep(config, rep)
    out = estimate_rep(config, entry, bids, cutting, seed=config.seed + rep)
    out["rep"] = rep
    return out


@dataclass
class McReport:
    config: McConfig
    bias: dict
    rmse: dict
    estimates: list
    n_excluded: int
    runtime_s: float = 0.0
    meta: dict = field(default_factory=dict)

    def table_rows(self):
        truth = self.config.truth
        for name in AUCTION_PARAMS + DYNAMIC_PARAMS:
            yield name, truth[name], self.bias[name], self.rmse[name]

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["parameter", "truth", "bias", "rmse", "reps_used"])
            used = len(self.estimates) - self.n_excluded
            for name, t, b, r in self.table_rows():
                w.writerow([name, repr(t), repr(b), repr(r), used])
        return path

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "seed": self.config.seed,
            "bias": self.bias,
            "rmse": self.rmse,
            "n_excluded": self.n_excluded,
            "replications": self.estimates,
        }

    def to_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(json_safe(self.to_dict()), indent=2, sort_keys=True, allow_nan=False))
        return path


def aggregate(config: McConfig, reps: list) -> McReport:
    """Bias and RMSE over converged replications."""
    truth = config.truth
    ok = [r for r in reps if all(r["converged"].values())]
    n_excluded = len(reps) - len(ok)
    if n_excluded:
        log.warning("%d of %d replications excluded for non-convergence", n_excluded, len(reps))
    bias, rmse = {}, {}
    for name in AUCTION_PARAMS + DYNAMIC_PARAMS:
        err = np.array([r["estimates"][name] - truth[name] for r in ok])
        bias[name] = float(err.mean()) if err.size else float("nan")
        rmse[name] = float(np.sqrt(np.mean(err ** 2))) if err.size else float("nan")
    return McReport(config, bias, rmse, reps, n_excluded)


def run_mc(config: McConfig, n_jobs: int = 1) -> McReport:
    """Simulate, re-estimate and summarize ``config.reps`` replications."""
    t0 = time.perf_counter()
    reps = Parallel(n_jobs=n_jobs)(delayed(_run_rep)(config, r) for r in range(config.reps))
    report = aggregate(config, sorted(reps, key=lambda r: r["rep"]))
    report.runtime_s = time.perf_counter() - t0
    return report
