"""Nested fixed point estimation of the harvesting payoff parameters.

The inner loop solves the harvesting problem by backward induction for each
distinct (contract length, tract size) in the data; the outer loop is a
multi-start Nelder-Mead search over (gamma, c1, c2) with beta held fixed.
"""
from __future__ import annotations

import csv
import logging
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed
from scipy.optimize import minimize

from .dp import solve_dp
from .model import ACTION_GRID, BidderType, DynamicParams, InvalidInput, PriceProcess

log = logging.getLogger(__name__)

PARAM_NAMES = ("gamma", "c1", "c2")


class DataValidationError(InvalidInput):
    pass


def snap_action(q: float) -> int:
    """Nearest quarter of the tract; exact ties round down."""
    x = float(q) * 4.0
    lo = np.floor(x)
    return int(lo if x - lo <= 0.5 else lo + 1)


@dataclass(frozen=True)
class CuttingObservation:
    """One winner's observed harvest spell.

    ``records`` holds ``(t, price_idx, remaining, q)`` per observed period,
    with ``remaining`` the fraction standing before the period's cut.
    """

    auction_id: str
    type: BidderType
    T: int
    u0: float
    records: tuple

    @property
    def censored(self) -> bool:
        return abs(sum(r[3] for r in self.records) - 1.0) > 1e-9

    @classmethod
    def from_actions(cls, auction_id, type_, T, u0, price_path, actions) -> "CuttingObservation":
        """Build a spell from per-period prices and cut fractions, snapping cuts to quarters."""
        recs = []
        rem = 4
        for t, (p, q) in enumerate(zip(price_path, actions), start=1):
            a = snap_action(q)
            recs.append((t, int(p), rem / 4.0, a / 4.0))
            rem -= a
        return cls(str(auction_id), BidderType.parse(type_), int(T), float(u0), tuple(recs))


class CuttingData:
    """Cutting observations grouped by (T, u0) into index arrays for fast likelihood gathers."""

    def __init__(self, observations, n_prices: int | None = None):
        self.observations = tuple(observations)
        groups = defaultdict(list)
        for obs in self.observations:
            self._validate(obs, n_prices)
            for t, p, rem, q in obs.records:
                groups[(obs.T, obs.u0)].append((t - 1, p, int(round(rem * 4)), int(round(q * 4))))
        # sorted keys keep the summation order fixed regardless of input order
        self.groups = {key: np.array(sorted(rows), dtype=np.int64).T for key, rows in sorted(groups.items())}

    @staticmethod
    def _validate(obs: CuttingObservation, n_prices):
        for t, p, rem, q in obs.records:
            where = f"auction {obs.auction_id!r}, period {t}"
            if not 1 <= t <= obs.T:
                raise DataValidationError(f"{where}: period outside 1..{obs.T}")
            if n_prices is not None and not 0 <= p < n_prices:
                raise DataValidationError(f"{where}: price index {p} outside grid")
            if q > rem + 1e-12:
                raise DataValidationError(f"{where}: cut {q} exceeds remaining {rem}")
            if t == obs.T and abs(q - rem) > 1e-12:
                raise DataValidationError(f"{where}: terminal period must cut the remaining {rem}, got {q}")

    def __len__(self):
        return len(self.observations)

    def subset(self, type_: BidderType) -> "CuttingData":
        return CuttingData([o for o in self.observations if o.type is BidderType.parse(type_)])


def _as_data(data, prices: PriceProcess) -> CuttingData:
    return data if isinstance(data, CuttingData) else CuttingData(data, prices.size)


def cutting_loglik(data, params: DynamicParams, prices: PriceProcess) -> float:
    """Sum of log choice probabilities of every observed cut."""
    data = _as_data(data, prices)
    total = 0.0
    for (T, u0), (t, p, r, a) in data.groups.items():
        sol = solve_dp(params, prices, T, u0)
        total += float(np.sum(sol.log_ccps[t, p, r, a]))
    return total


@dataclass
class DynamicEstimate:
    params: DynamicParams
    loglik: float
    se: np.ndarray
    converged: bool
    iterations: int
    n_obs: int = 0
    message: str = ""
    starts: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "params": dict(zip(PARAM_NAMES, self.params.as_array().tolist())),
            "beta": self.params.beta,
            "se": dict(zip(PARAM_NAMES, np.asarray(self.se, float).tolist())),
            "loglik": self.loglik,
            "converged": self.converged,
            "iterations": self.iterations,
            "n_obs": self.n_obs,
            "message": self.message,
        }


def _hessian_se(f, x: np.ndarray) -> np.ndarray:
    """Standard errors from a central-difference Hessian of the negative log-likelihood."""
    k = x.size
    h = 1e-4 * np.maximum(np.abs(x), 1e-2)
    H = np.empty((k, k))
    f0 = f(x)
    for i in range(k):
        for j in range(i, k):
            ei, ej = np.eye(k)[i] * h[i], np.eye(k)[j] * h[j]
            if i == j:
                H[i, i] = (f(x + ei) - 2 * f0 + f(x - ei)) / h[i] ** 2
            else:
                H[i, j] = H[j, i] = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * h[i] * h[j])
    try:
        cov = np.linalg.inv(H)
        diag = np.diag(cov)
        return np.where(diag > 0, np.sqrt(np.abs(diag)), np.nan)
    except np.linalg.LinAlgError:
        return np.full(k, np.nan)


def fit_dynamic(
    data,
    prices: PriceProcess,
    init: DynamicParams,
    beta: float | None = None,
    n_starts: int = 5,
    jitter: float = 0.5,
    seed: int = 0,
    tol: float = 1e-6,
    maxiter: int = 4000,
    compute_se: bool = True,
) -> DynamicEstimate:
    """Maximize ``cutting_loglik`` over (gamma, c1, c2).

    The first start is ``init``; the remaining ``n_starts - 1`` are drawn
    uniformly within ``±jitter`` of it. The best start is returned.
    """
    data = _as_data(data, prices)
    beta = init.beta if beta is None else beta
    x_init = init.as_array()
    if not np.all(np.isfinite(x_init)):
        raise InvalidInput("initial parameters must be finite")

    def negll(x):
        return -cutting_loglik(data, DynamicParams(*x, beta=beta), prices)

    rng = np.random.default_rng(seed)
    starts = [x_init] + [x_init * (1 + rng.uniform(-jitter, jitter, size=3)) for _ in range(n_starts - 1)]
    results = []
    for x0 in starts:
        res = minimize(negll, x0, method="Nelder-Mead",
                       options={"xatol": 1e-6, "fatol": tol, "maxiter": maxiter, "maxfev": 2 * maxiter})
        results.append(res)
    best = min(results, key=lambda r: r.fun)
    se = _hessian_se(negll, best.x) if compute_se else np.full(3, np.nan)
    est = DynamicEstimate(
        params=DynamicParams(*best.x, beta=beta),
        loglik=-float(best.fun),
        se=se,
        converged=bool(best.success),
        iterations=int(sum(r.nit for r in results)),
        n_obs=len(data),
        message=str(best.message),
        starts=[float(-r.fun) for r in results],
    )
    if not est.converged:
        log.warning("dynamic fit did not converge: %s", est.message)
    return est


def fit_dynamic_by_type(data, prices: PriceProcess, init: dict, **kw) -> dict:
    """Separate fits on the logger and sawmill subsamples."""
    data = _as_data(data, prices)
    out = {}
    for m in BidderType:
        sub = data.subset(m)
        if len(sub):
            out[m] = fit_dynamic(sub, prices, init[m], **kw)
    return out


@dataclass
class BootstrapResult:
    se: np.ndarray
    estimates: np.ndarray
    n_failed: int
    warning: bool

    def to_dict(self) -> dict:
        return {"se": self.se.tolist(), "n_failed": self.n_failed, "warning": self.warning,
                "reps_used": int(self.estimates.shape[0])}


def _resample(observations, rng):
    ids = sorted({o.auction_id for o in observations})
    by_id = defaultdict(list)
    for o in observations:
        by_id[o.auction_id].append(o)
    draw = rng.integers(0, len(ids), size=len(ids))
    return [o for k in draw for o in by_id[ids[k]]]


def _boot_rep(observations, prices, init, seed, rep, n_starts):
    rng = np.random.default_rng([seed, rep])
    sample = CuttingData(_resample(observations, rng), prices.size)
    est = fit_dynamic(sample, prices, init, n_starts=n_starts, seed=seed + rep, compute_se=False)
    return est.params.as_array(), est.converged


def bootstrap_dynamic(data, prices: PriceProcess, fit: DynamicEstimate, reps: int = 100, seed: int = 0,
                      n_jobs: int = 1, n_starts: int = 1) -> BootstrapResult:
    """Auction-level cluster bootstrap of the dynamic estimates.

    Non-converged refits are dropped; dropping more than 20% of replications
    sets ``warning``.
    """
    if reps < 2:
        raise InvalidInput("bootstrap needs at least two replications")
    data = _as_data(data, prices)
    out = Parallel(n_jobs=n_jobs)(
        delayed(_boot_rep)(data.observations, prices, fit.params, seed, b, n_starts) for b in range(reps)
    )
    ok = np.array([c for _, c in out])
    est = np.array([x for x, _ in out])[ok]
    n_failed = int((~ok).sum())
    warn = n_failed > 0.2 * reps
    if warn:
        warnings.warn(f"{n_failed} of {reps} bootstrap refits failed to converge")
    se = est.std(axis=0, ddof=1) if est.shape[0] >= 2 else np.full(3, np.nan)
    return BootstrapResult(se, est, n_failed, warn)


CUTTING_COLUMNS = ["auction_id", "type", "T", "u0", "t", "price_idx", "q"]


def write_cutting_csv(observations, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CUTTING_COLUMNS)
        for o in observations:
            for t, p, _, q in o.records:
                w.writerow([o.auction_id, o.type.value, o.T, repr(o.u0), t, p, repr(q)])
    return path


def read_cutting_csv(path) -> list[CuttingObservation]:
    """Parse cutting records; rows of one auction must appear in period order."""
    path = Path(path)
    spells: dict = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        names = [h.strip() for h in header] if header is not None else None
        # a trailing run-seed column written by the command-line tool is accepted and ignored
        if names is not None and names[-1:] == ["seed"]:
            names = names[:-1]
        if names != CUTTING_COLUMNS:
            raise DataValidationError(f"{path}: row 1: expected header {','.join(CUTTING_COLUMNS)}")
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise DataValidationError(f"{path}: row {lineno}: expected {width} fields, got {len(row)}")
            try:
                aid, typ, T, u0, t, p, q = row[0], BidderType.parse(row[1]), int(row[2]), float(row[3]), int(row[4]), int(row[5]), float(row[6])
            except (ValueError, InvalidInput) as exc:
                raise DataValidationError(f"{path}: row {lineno}: {exc}") from None
            spell = spells.setdefault(aid, {"type": typ, "T": T, "u0": u0, "t": [], "p": [], "q": [], "line": lineno})
            if spell["t"] and t != spell["t"][-1] + 1:
                raise DataValidationError(f"{path}: row {lineno}: period {t} does not follow {spell['t'][-1]} for auction {aid!r}")
            if not spell["t"] and t != 1:
                raise DataValidationError(f"{path}: row {lineno}: spell for auction {aid!r} must start at period 1")
            spell["t"].append(t)
            spell["p"].append(p)
            spell["q"].append(q)
    obs = []
    for aid, s in spells.items():
        try:
            obs.append(CuttingObservation.from_actions(aid, s["type"], s["T"], s["u0"], s["p"], s["q"]))
        except InvalidInput as exc:
            raise DataValidationError(f"{path}: auction starting at row {s['line']}: {exc}") from None
    return obs
