"""Domain types shared across the package and the discretized lumber-price process."""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import norm

#: Feasible cut fractions of the initial tract.
ACTION_GRID = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
N_ACTIONS = len(ACTION_GRID)


class InvalidInput(ValueError):
    """Raised when a constructor or operation receives data it cannot accept."""


def json_safe(obj):
    """Copy of ``obj`` with non-finite floats replaced by None, so dumps stay valid JSON."""
    if isinstance(obj, dict):
        return {k: json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [json_safe(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    return obj


class BidderType(str, enum.Enum):
    LOGGER = "logger"
    SAWMILL = "sawmill"

    @classmethod
    def parse(cls, value) -> "BidderType":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {"l": "logger", "s": "sawmill"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise InvalidInput(f"unknown bidder type {value!r}") from None

    @property
    def short(self) -> str:
        return "L" if self is BidderType.LOGGER else "S"


class AuctionFormat(str, enum.Enum):
    ORAL = "oral"
    SEALED = "sealed"


@dataclass(frozen=True)
class PriceProcess:
    """Price grid with a row-stochastic transition matrix.

    ``transition[r, c]`` is the probability of moving to ``grid[c]`` next
    period when the current price is ``grid[r]``.
    """

    grid: np.ndarray
    transition: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        trans = np.asarray(self.transition, dtype=float)
        if grid.ndim != 1 or grid.size < 2:
            raise InvalidInput("price grid needs at least two levels")
        if np.any(np.diff(grid) <= 0):
            raise InvalidInput("price grid must be strictly increasing")
        if trans.shape != (grid.size, grid.size):
            raise InvalidInput(f"transition shape {trans.shape} does not match grid size {grid.size}")
        if np.any(trans < 0):
            raise InvalidInput("transition probabilities must be non-negative")
        if np.any(np.abs(trans.sum(axis=1) - 1.0) > 1e-12):
            raise InvalidInput("transition rows must sum to one")
        grid.setflags(write=False)
        trans.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "transition", trans)

    @property
    def size(self) -> int:
        return self.grid.size

    def to_dict(self) -> dict:
        return {"grid": self.grid.tolist(), "transition": self.transition.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PriceProcess":
        return cls(np.asarray(d["grid"], float), np.asarray(d["transition"], float))


@dataclass(frozen=True)
class DynamicParams:
    """Flow-payoff parameters of the harvesting problem.

    gamma: payoff per price unit per volume unit; c1, c2: linear and
    quadratic cutting costs; beta: per-period discount factor.
    """

    gamma: float
    c1: float
    c2: float
    beta: float = 0.95

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise InvalidInput(f"beta must lie in (0, 1], got {self.beta}")

    def as_array(self) -> np.ndarray:
        return np.array([self.gamma, self.c1, self.c2])


@dataclass(frozen=True)
class CuttingState:
    t: int
    price_idx: int
    remaining: float

    def __post_init__(self):
        if self.t < 1:
            raise InvalidInput("periods are indexed from 1")
        if abs(self.remaining * 4 - round(self.remaining * 4)) > 1e-12 or not 0 <= self.remaining <= 1:
            raise InvalidInput(f"remaining must be a multiple of 0.25 in [0, 1], got {self.remaining}")

    @property
    def remaining_idx(self) -> int:
        return int(round(self.remaining * 4))


@dataclass(frozen=True)
class TypeSpec:
    """Valuation and entry primitives of one bidder type.

    Values are ``xi * V0`` with ``xi ~ Gamma(shape=sigma, scale=mu)``.
    """

    type: BidderType
    mu: float
    sigma: float
    lam: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "type", BidderType.parse(self.type))
        if self.mu <= 0 or self.sigma <= 0 or self.lam < 0:
            raise InvalidInput(f"invalid type primitives mu={self.mu}, sigma={self.sigma}, lambda={self.lam}")


@dataclass(frozen=True)
class AuctionConfig:
    T: int
    u0: float
    p0_idx: int
    format: AuctionFormat
    participants: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "format", AuctionFormat(self.format))
        object.__setattr__(self, "participants", tuple(BidderType.parse(p) for p in self.participants))
        if self.T < 1 or self.u0 <= 0 or not self.participants:
            raise InvalidInput("need T >= 1, u0 > 0 and at least one participant")

    def counts(self) -> tuple[int, int]:
        n_l = sum(p is BidderType.LOGGER for p in self.participants)
        return n_l, len(self.participants) - n_l

    @property
    def label(self) -> str:
        return "(" + ", ".join(p.short for p in self.participants) + ")"


def _check_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise InvalidInput("price grid must be a nonempty 1-d sequence")
    if np.any(np.diff(grid) <= 0):
        raise InvalidInput("price grid must be strictly increasing")
    return grid


def build_gaussian_transition(grid, variance: float = 1.0) -> PriceProcess:
    """Transition matrix whose rows are normal densities centred on the current price.

    Row ``r`` evaluates ``N(grid[r], variance)`` at every grid point and is
    renormalized to a probability vector.
    """
    grid = _check_grid(grid)
    if variance <= 0:
        raise InvalidInput("variance must be positive")
    dens = norm.pdf(grid[None, :], loc=grid[:, None], scale=np.sqrt(variance))
    return PriceProcess(grid, dens / dens.sum(axis=1, keepdims=True))


def snap_to_grid(values, grid) -> np.ndarray:
    """Index of the nearest grid level for every value; ties go to the lower level."""
    grid = np.asarray(grid, float)
    values = np.asarray(values, float)
    right = np.clip(np.searchsorted(grid, values), 1, grid.size - 1)
    left = right - 1
    take_right = (grid[right] - values) < (values - grid[left])
    return np.where(take_right, right, left)


def estimate_transition(series, grid, smoothing: float = 1.0) -> PriceProcess:
    """Empirical transition matrix from an observed price series.

    Observations snap to the nearest grid level, consecutive pairs are
    counted, and ``smoothing`` pseudo-counts are added to every cell.
    """
    grid = _check_grid(grid)
    series = np.asarray(series, float)
    if series.size < 2:
        raise InvalidInput("need at least two price observations")
    if smoothing < 0:
        raise InvalidInput("smoothing must be non-negative")
    idx = snap_to_grid(series, grid)
    counts = np.zeros((grid.size, grid.size))
    np.add.at(counts, (idx[:-1], idx[1:]), 1.0)
    counts += smoothing
    rows = counts.sum(axis=1)
    if np.any(rows == 0):
        empty = np.flatnonzero(rows == 0).tolist()
        raise InvalidInput(f"no transitions observed out of grid rows {empty}; use smoothing > 0")
    return PriceProcess(grid, counts / rows[:, None])


@dataclass(frozen=True)
class DiscretizedGrid:
    grid: np.ndarray
    reduced: bool = False


def discretize_prices(series, bins: int = 10) -> DiscretizedGrid:
    """Quantile bins of a raw price series, each represented by its median.

    When the series has fewer distinct values than ``bins`` the bin count is
    reduced and ``reduced`` is set on the result.
    """
    if bins < 2:
        raise InvalidInput("bins must be at least 2")
    series = np.sort(np.asarray(series, float))
    distinct = np.unique(series)
    reduced = False
    if distinct.size < bins:
        bins = distinct.size
        reduced = True
    if bins == 1:
        return DiscretizedGrid(distinct.copy(), True)
    edges = np.quantile(series, np.linspace(0, 1, bins + 1))
    which = np.clip(np.searchsorted(edges, series, side="right") - 1, 0, bins - 1)
    reps = [np.median(series[which == b]) for b in range(bins) if np.any(which == b)]
    grid = np.unique(reps)
    if grid.size < bins:
        reduced = True
    return DiscretizedGrid(grid, reduced)


def read_price_csv(path) -> np.ndarray:
    """Read a two-column (period, price_index) CSV with a header row."""
    path = Path(path)
    prices = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["period", "price_index"]:
            raise InvalidInput(f"{path}: row 1: expected header 'period,price_index'")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise InvalidInput(f"{path}: row {lineno}: expected 2 columns, got {len(row)}")
            try:
                prices.append(float(row[1]))
            except ValueError:
                raise InvalidInput(f"{path}: row {lineno}: price_index {row[1]!r} is not a number") from None
    return np.asarray(prices)
