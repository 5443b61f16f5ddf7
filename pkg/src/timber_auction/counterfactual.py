"""Expected seller revenue across formats, contract lengths, tract sizes and compositions.

A bidder of type m values the contract at ``xi * V0_m``, where ``V0_m`` is the
type's continuation value from the harvesting problem at the scenario's
(T, u0, p0) and ``xi ~ Gamma(shape=sigma_m, scale=mu_m)``. Oral sales pay the
second-highest value; sealed sales pay the highest equilibrium bid. Revenue is
a Monte Carlo mean over common valuation shocks: one draw of ``xi`` per cell is
reused at every contract length, so differences across lengths are not
polluted by sampling noise.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from .bidsolver import BidSystem, ValueDistribution, bid, gamma_support, solve_bid_system
from .dp import solve_dp
from .model import (AuctionConfig, AuctionFormat, BidderType, DynamicParams, InvalidInput, PriceProcess, TypeSpec,
                    build_gaussian_transition, json_safe)

log = logging.getLogger(__name__)

DEFAULT_LENGTHS = (4, 8, 12, 16)
CLAMP_WARN_SHARE = 0.01


@dataclass(frozen=True)
class Scenario:
    """One table cell family: a composition, format and tract size, swept over lengths."""

    config: AuctionConfig
    type_specs: dict
    dynamic: dict
    prices: PriceProcess
    lengths: tuple = DEFAULT_LENGTHS
    tract_label: str = ""

    def __post_init__(self):
        present = set(self.config.participants)
        for m in present:
            if m not in self.type_specs or m not in self.dynamic:
                raise InvalidInput(f"scenario {self.config.label} lacks primitives for {m.value}")
        if not 0 <= self.config.p0_idx < self.prices.size:
            raise InvalidInput(f"initial price index {self.config.p0_idx} outside the grid")
        object.__setattr__(self, "lengths", tuple(int(T) for T in self.lengths))
        if any(T < 1 for T in self.lengths):
            raise InvalidInput("contract lengths must be at least one period")

    @property
    def participants(self) -> tuple:
        return self.config.participants

    def at_length(self, T: int) -> "Scenario":
        return dataclasses.replace(self, config=dataclasses.replace(self.config, T=int(T)))

    def v0(self) -> dict:
        """Continuation value of each present type at the scenario's (T, u0, p0)."""
        c = self.config
        return {m: float(solve_dp(self.dynamic[m], self.prices, c.T, c.u0).v0[c.p0_idx])
                for m in sorted(set(c.participants), key=lambda t: t.value)}


@dataclass(frozen=True)
class RevenueEstimate:
    mean: float
    se: float
    draws: int
    clamped: int = 0
    rationality_violations: int = 0


def draw_shocks(scenario: Scenario, rng: np.random.Generator, draws: int) -> np.ndarray:
    """Gamma shocks ``xi``, one column per participant in participant order."""
    if draws < 1:
        raise InvalidInput("need at least one draw")
    cols = [rng.gamma(scenario.type_specs[m].sigma, scenario.type_specs[m].mu, size=draws)
            for m in scenario.participants]
    return np.column_stack(cols)


def draw_valuations(scenario: Scenario, rng: np.random.Generator, draws: int = 100_000,
                    v0: dict | None = None, shocks: np.ndarray | None = None) -> np.ndarray:
    """Values ``xi * V0`` of shape (draws, participants)."""
    v0 = scenario.v0() if v0 is None else v0
    if any(v < 0 for v in v0.values()):
        raise InvalidInput(f"negative continuation value {v0}; values would be negative")
    xi = draw_shocks(scenario, rng, draws) if shocks is None else shocks
    scale = np.array([v0[m] for m in scenario.participants])
    return xi * scale


def _summary(x: np.ndarray) -> tuple[float, float]:
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0


def revenue_oral(scenario: Scenario, draws: int = 100_000, seed: int = 0, values: np.ndarray | None = None) -> RevenueEstimate:
    """Mean second-highest value over the participants."""
    if len(scenario.participants) < 2:
        raise InvalidInput("oral revenue needs at least two participants")
    if values is None:
        values = draw_valuations(scenario, np.random.default_rng(seed), draws)
    price = np.sort(values, axis=1)[:, -2]
    mean, se = _summary(price)
    return RevenueEstimate(mean, se, price.size)


def value_distributions(scenario: Scenario, v0: dict | None = None, tail: float = 1e-4) -> dict:
    """Truncated value distributions of the present types on their common support."""
    v0 = scenario.v0() if v0 is None else v0
    n_l, n_s = scenario.config.counts()
    counts = {BidderType.LOGGER: n_l, BidderType.SAWMILL: n_s}
    comps = {m: (scenario.type_specs[m].sigma, scenario.type_specs[m].mu * v0[m]) for m in counts if counts[m]}
    if any(scale <= 0 for _, scale in comps.values()):
        raise InvalidInput(f"continuation values must be positive for a sealed-bid solve, got {v0}")
    lo, hi = gamma_support([(counts[m], *comps[m]) for m in comps], tail)
    return {m: ValueDistribution.gamma(m, shape, scale, lo, hi) for m, (shape, scale) in comps.items()}


def solve_scenario_bids(scenario: Scenario, v0: dict | None = None, seed: int = 0, **solver_kw) -> BidSystem:
    dists = value_distributions(scenario, v0)
    n_l, n_s = scenario.config.counts()
    return solve_bid_system(dists.get(BidderType.LOGGER), dists.get(BidderType.SAWMILL), n_l, n_s,
                            seed=seed, **solver_kw)


def revenue_sealed(scenario: Scenario, system: BidSystem, draws: int = 100_000, seed: int = 0,
                   values: np.ndarray | None = None) -> RevenueEstimate:
    """Mean highest equilibrium bid.

    Values outside the solver's support are clamped to it and counted; more
    than 1% clamped raises a warning. Draws in which a bid exceeds its value
    are counted as rationality violations of the approximate solution.
    """
    if len(scenario.participants) < 2:
        raise InvalidInput("sealed revenue needs at least two participants")
    if values is None:
        values = draw_valuations(scenario, np.random.default_rng(seed), draws)
    clipped = np.clip(values, system.v_lo, system.v_hi)
    n_clamped = int(np.count_nonzero(clipped != values))
    if n_clamped > CLAMP_WARN_SHARE * values.size:
        warnings.warn(f"{n_clamped} of {values.size} values clamped to the bid-solver support")
    bids = np.empty_like(clipped)
    types = scenario.participants
    for m in set(types):
        cols = [j for j, t in enumerate(types) if t is m]
        bids[:, cols] = bid(system, m, clipped[:, cols])
    violations = int(np.count_nonzero(np.any(bids > clipped + 1e-9 * (system.v_hi - system.v_lo), axis=1)))
    mean, se = _summary(bids.max(axis=1))
    return RevenueEstimate(mean, se, values.shape[0], n_clamped, violations)


@dataclass(frozen=True)
class RevenueRow:
    tract_size: str
    format: str
    participants: str
    length: int
    revenue: float
    se: float
    v0: dict = field(default_factory=dict)
    flag: str = ""


@dataclass
class RevenueTable:
    rows: list
    seed: int = 0
    draws: int = 0
    systems: dict = field(default_factory=dict, repr=False)

    @property
    def lengths(self) -> tuple:
        return tuple(sorted({r.length for r in self.rows}))

    def wide(self) -> list:
        """Rows of (tract_size, format, participants, revenue at each length) in first-seen order."""
        keys, cells = [], {}
        for r in self.rows:
            k = (r.tract_size, r.format, r.participants)
            if k not in cells:
                keys.append(k)
                cells[k] = {}
            cells[k][r.length] = r.revenue
        return [(*k, *(cells[k].get(T, float("nan")) for T in self.lengths)) for k in keys]

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tract_size", "format", "participants"] + [f"q{T}" for T in self.lengths])
            for row in self.wide():
                w.writerow(list(row[:3]) + [repr(float(x)) for x in row[3:]])
        return path

    def to_long_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tract_size", "format", "participants", "length", "revenue", "se", "flag", "seed"])
            for r in self.rows:
                w.writerow([r.tract_size, r.format, r.participants, r.length, repr(r.revenue), repr(r.se), r.flag, self.seed])
        return path

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "draws": self.draws,
            "rows": [dataclasses.asdict(r) for r in self.rows],
            "bid_systems": {k: s.to_dict() for k, s in self.systems.items()},
        }

    def to_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(json_safe(self.to_dict()), indent=2, sort_keys=True, allow_nan=False))
        return path


def _cell(scenario: Scenario, index: int, seed: int, draws: int, solver_kw: dict):
    """All lengths of one scenario from a shared shock draw keyed on (seed, index)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, index]))
    shocks = draw_shocks(scenario, rng, draws)
    rows, systems = [], {}
    fmt = scenario.config.format
    for T in scenario.lengths:
        sc = scenario.at_length(T)
        flag = ""
        try:
            v0 = sc.v0()
            values = draw_valuations(sc, rng, draws, v0=v0, shocks=shocks)
            if fmt is AuctionFormat.ORAL:
                est = revenue_oral(sc, values=values)
            else:
                system = solve_scenario_bids(sc, v0, seed=seed, **solver_kw)
                systems[f"{scenario.tract_label}|{sc.config.label}|{T}"] = system
                est = revenue_sealed(sc, system, values=values)
                notes = []
                if not system.converged:
                    notes.append("bid_solver_not_converged")
                if est.clamped > CLAMP_WARN_SHARE * values.size:
                    notes.append(f"clamped={est.clamped}")
                if est.rationality_violations:
                    notes.append(f"bid_above_value={est.rationality_violations}")
                flag = ";".join(notes)
            rows.append(RevenueRow(scenario.tract_label, fmt.value, sc.config.label, T, est.mean, est.se,
                                   {m.value: v for m, v in v0.items()}, flag))
        except InvalidInput as exc:
            log.warning("cell %s %s T=%d failed: %s", scenario.tract_label, sc.config.label, T, exc)
            rows.append(RevenueRow(scenario.tract_label, fmt.value, sc.config.label, T, float("nan"), float("nan"),
                                   {}, f"error: {exc}"))
    return rows, systems


def sweep(scenarios, lengths=DEFAULT_LENGTHS, draws: int = 100_000, seed: int = 0, n_jobs: int = 1,
          solver_kw: dict | None = None) -> RevenueTable:
    """Revenue for every scenario at every length; per-cell failures become flagged rows."""
    lengths = tuple(int(T) for T in lengths)
    scenarios = [dataclasses.replace(s, lengths=lengths) for s in scenarios]
    if not lengths or not scenarios:
        return RevenueTable([], seed, draws)
    out = Parallel(n_jobs=n_jobs)(delayed(_cell)(s, i, seed, draws, solver_kw or {}) for i, s in enumerate(scenarios))
    rows, systems = [], {}
    for r, s in out:
        rows.extend(r)
        systems.update(s)
    return RevenueTable(rows, seed, draws, systems)


# --- configuration

def scenarios_from_config(cfg: dict) -> list:
    """Build scenarios from a counterfactual config mapping (see ``default_config``)."""
    try:
        grid = np.asarray(cfg["price_grid"], float)
        prices = build_gaussian_transition(grid, float(cfg["price_variance"]))
        types = {BidderType.parse(k): TypeSpec(k, **v) for k, v in cfg["valuation"].items()}
        dynamic = {BidderType.parse(k): DynamicParams(**v) for k, v in cfg["dynamic"].items()}
        p0 = int(cfg.get("p0_idx", 0))
        lengths = tuple(cfg.get("lengths", DEFAULT_LENGTHS))
        out = []
        for label, u0 in cfg["tract_sizes"].items():
            for comp in cfg["compositions"]:
                for fmt in comp["formats"]:
                    ac = AuctionConfig(lengths[0] if lengths else 1, float(u0), p0, fmt, tuple(comp["participants"]))
                    out.append(Scenario(ac, types, dynamic, prices, lengths, label))
        return out
    except KeyError as exc:
        raise InvalidInput(f"counterfactual config missing key {exc}") from None
    except (TypeError, ValueError) as exc:
        raise InvalidInput(f"invalid counterfactual config: {exc}") from None


def default_config() -> dict:
    """Point estimates of the structural parameters with the shipped price grid and tract sizes."""
    return json.loads((Path(__file__).parent / "data" / "counterfactual_default.json").read_text())
