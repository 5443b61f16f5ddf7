"""Entry-rate and valuation-distribution estimation from oral auction outcomes.

Entry: type-m entrant counts are Poisson with mean ``lambda_m * N_m`` and
auctions with no entrants are never observed.

Valuation: each bidder's value is ``xi * V0`` with ``xi`` gamma distributed
(scale ``mu``, shape ``sigma``) by type; the transaction price of an oral
auction is the second-highest value and only the winner's type is seen.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed
from scipy.optimize import minimize
from scipy.special import comb, gammainc, gammaln

from .model import AuctionFormat, BidderType, InvalidInput

log = logging.getLogger(__name__)

#: Stand-in for log(0) when both entry rates vanish.
LOG_ZERO = -1e10


class UndefinedShare(InvalidInput):
    pass


@dataclass(frozen=True)
class EntryObservation:
    auction_id: str
    n: int
    N_l: int
    N_s: int
    format: AuctionFormat = AuctionFormat.ORAL

    def __post_init__(self):
        object.__setattr__(self, "format", AuctionFormat(self.format))
        if self.n < 1:
            raise InvalidInput(f"auction {self.auction_id!r}: observed auctions have at least one entrant")
        if self.N_l < 0 or self.N_s < 0:
            raise InvalidInput(f"auction {self.auction_id!r}: negative potential bidder count")


@dataclass(frozen=True)
class BidObservation:
    auction_id: str
    n: int
    winner_type: BidderType
    tau: float
    v0_l: float = 1.0
    v0_s: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "winner_type", BidderType.parse(self.winner_type))
        if self.tau <= 0:
            raise InvalidInput(f"auction {self.auction_id!r}: transaction price must be positive")


def _pois_pmf(k, mean):
    k = np.asarray(k, float)
    mean = np.asarray(mean, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = k * np.log(mean) - mean - gammaln(k + 1)
    return np.where(mean > 0, np.exp(logp), (k == 0).astype(float))


def entry_loglik_terms(obs, lambda_l: float, lambda_s: float):
    """Per-auction log-likelihoods and a mask of auctions where both rates vanish."""
    if lambda_l < 0 or lambda_s < 0:
        raise InvalidInput("entry rates must be non-negative")
    n = np.array([o.n for o in obs])
    a = lambda_l * np.array([o.N_l for o in obs], float)
    b = lambda_s * np.array([o.N_s for o in obs], float)
    num = np.zeros(n.size)
    for j in range(int(n.max(initial=0)) + 1):
        use = j <= n
        num += np.where(use, _pois_pmf(j, a) * _pois_pmf(np.maximum(n - j, 0), b), 0.0)
    degenerate = (a + b) == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.log(num) - np.log(-np.expm1(-(a + b)))
    terms = np.where(degenerate | ~np.isfinite(terms), LOG_ZERO, terms)
    return terms, degenerate


def entry_loglik(obs, lambda_l: float, lambda_s: float) -> float:
    """Truncated-Poisson log-likelihood of observed entrant counts."""
    terms, _ = entry_loglik_terms(obs, lambda_l, lambda_s)
    return float(np.sum(terms))


def type_share(lambda_l: float, lambda_s: float) -> float:
    """Fraction of entrants who are loggers."""
    if lambda_l + lambda_s <= 0:
        raise UndefinedShare("logger share is undefined when both entry rates are zero")
    return lambda_l / (lambda_l + lambda_s)


@dataclass
class EntryEstimate:
    format: AuctionFormat
    lambda_l: float
    lambda_s: float
    se: np.ndarray
    loglik: float
    converged: bool
    identified: tuple = (True, True)
    n_obs: int = 0

    @property
    def share(self) -> float:
        return type_share(self.lambda_l, self.lambda_s)

    def to_dict(self) -> dict:
        return {
            "format": self.format.value,
            "lambda_l": self.lambda_l,
            "lambda_s": self.lambda_s,
            "se": np.asarray(self.se, float).tolist(),
            "loglik": self.loglik,
            "converged": self.converged,
            "identified": list(self.identified),
            "n_obs": self.n_obs,
        }


def _fit_entry_once(obs, init, identified):
    x0 = np.log(np.maximum(np.asarray(init, float), 1e-3))

    def negll(x):
        lam = np.exp(x)
        lam = np.where(identified, lam, 0.0)
        return -entry_loglik(obs, lam[0], lam[1])

    res = minimize(negll, x0, method="Nelder-Mead", options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 4000})
    lam = np.where(identified, np.exp(res.x), 0.0)
    return lam, -float(res.fun), bool(res.success)


def _boot_entry(obs, init, identified, seed, rep):
    rng = np.random.default_rng([seed, rep])
    sample = [obs[i] for i in rng.integers(0, len(obs), size=len(obs))]
    return _fit_entry_once(sample, init, identified)[0]


def fit_entry(obs, init=(0.1, 0.1), boot_reps: int = 0, seed: int = 0, n_jobs: int = 1) -> dict:
    """Entry-rate MLE fitted separately for each auction format present.

    Returns ``{format: EntryEstimate}``. A rate whose potential-bidder counts
    are all zero is flagged unidentified and reported as 0.
    """
    out = {}
    for fmt in AuctionFormat:
        sub = [o for o in obs if o.format is fmt]
        if not sub:
            continue
        identified = np.array([any(o.N_l > 0 for o in sub), any(o.N_s > 0 for o in sub)])
        lam, ll, ok = _fit_entry_once(sub, init, identified)
        if boot_reps >= 2:
            boots = np.array(Parallel(n_jobs=n_jobs)(
                delayed(_boot_entry)(sub, lam, identified, seed, b) for b in range(boot_reps)))
            se = boots.std(axis=0, ddof=1)
        else:
            se = np.full(2, np.nan)
        out[fmt] = EntryEstimate(fmt, float(lam[0]), float(lam[1]), se, ll, ok, tuple(bool(i) for i in identified), len(sub))
    return out


@dataclass(frozen=True)
class ValuationParams:
    mu_l: float
    sigma_l: float
    mu_s: float
    sigma_s: float

    def as_array(self) -> np.ndarray:
        return np.array([self.mu_l, self.sigma_l, self.mu_s, self.sigma_s])


def gamma_cdf(x, shape, scale):
    return gammainc(shape, np.maximum(np.asarray(x, float), 0.0) / scale)


def gamma_pdf(x, shape, scale):
    x = np.asarray(x, float)
    with np.errstate(divide="ignore"):
        z = x / scale
        logf = (shape - 1) * np.log(z) - z - gammaln(shape) - np.log(scale)
    return np.where(x > 0, np.exp(logf), 0.0)


def _density_arrays(n, winner_logger, tau, v0_l, v0_s, p_hat, params: ValuationParams):
    """Joint density of (winner type, transaction price) for arrays of auctions.

    For each opponent composition (k loggers among the ``n - 1`` losers, each
    a logger with probability ``p_hat``) it sums over which loser sets the
    price, multiplies by the winner's survival, and weights by the chance
    that a given bidder of the winner's type exists and is the winner.
    """
    n = np.asarray(n)
    wl = np.asarray(winner_logger, bool)
    tau = np.asarray(tau, float)
    p_hat = np.broadcast_to(np.asarray(p_hat, float), tau.shape)
    Fl = gamma_cdf(tau, params.sigma_l, params.mu_l * np.asarray(v0_l))
    Fs = gamma_cdf(tau, params.sigma_s, params.mu_s * np.asarray(v0_s))
    fl = gamma_pdf(tau, params.sigma_l, params.mu_l * np.asarray(v0_l))
    fs = gamma_pdf(tau, params.sigma_s, params.mu_s * np.asarray(v0_s))
    # k indexes the number of loggers among the n - 1 losers
    m = np.maximum(n - 1, 0)[..., None]
    k = np.arange(int(n.max(initial=2)))
    n_saw = m - k
    live = n_saw >= 0
    weight = np.where(live, comb(m, k) * p_hat[..., None] ** k * (1 - p_hat[..., None]) ** np.maximum(n_saw, 0), 0.0)
    Fl_, Fs_ = Fl[..., None], Fs[..., None]
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        logger_second = k * fl[..., None] * Fl_ ** np.maximum(k - 1, 0) * Fs_ ** np.maximum(n_saw, 0)
        sawmill_second = np.maximum(n_saw, 0) * fs[..., None] * Fl_ ** k * Fs_ ** np.maximum(n_saw - 1, 0)
    mix = np.sum(np.where(live, weight * (logger_second + sawmill_second), 0.0), axis=-1)
    survive = np.where(wl, 1 - Fl, 1 - Fs)
    own = np.where(wl, p_hat, 1 - p_hat)
    return n * own * survive * mix


def transaction_density(obs: BidObservation, p_hat: float, params: ValuationParams) -> float:
    """Density that a bidder of ``obs.winner_type`` wins at price ``obs.tau`` among ``obs.n`` bidders."""
    if obs.tau <= 0:
        raise InvalidInput("transaction price must be positive")
    return float(_density_arrays(obs.n, obs.winner_type is BidderType.LOGGER, obs.tau, obs.v0_l, obs.v0_s, p_hat, params))


def _bid_arrays(obs):
    return (
        np.array([o.n for o in obs]),
        np.array([o.winner_type is BidderType.LOGGER for o in obs]),
        np.array([o.tau for o in obs], float),
        np.array([o.v0_l for o in obs], float),
        np.array([o.v0_s for o in obs], float),
    )


def valuation_loglik(obs, p_hat, params: ValuationParams) -> float:
    n, wl, tau, v0l, v0s = _bid_arrays(obs)
    if np.any(n < 2):
        raise InvalidInput("transaction prices are only informative with two or more bidders")
    with np.errstate(divide="ignore"):
        return float(np.sum(np.log(_density_arrays(n, wl, tau, v0l, v0s, p_hat, params))))


@dataclass
class ValuationEstimate:
    params: ValuationParams
    se: np.ndarray
    loglik: float
    converged: bool
    n_obs: int = 0
    starts: list = field(default_factory=list)

    @property
    def mu_l(self):
        return self.params.mu_l

    @property
    def sigma_l(self):
        return self.params.sigma_l

    @property
    def mu_s(self):
        return self.params.mu_s

    @property
    def sigma_s(self):
        return self.params.sigma_s

    def to_dict(self) -> dict:
        names = ("mu_l", "sigma_l", "mu_s", "sigma_s")
        return {
            "params": dict(zip(names, self.params.as_array().tolist())),
            "se": dict(zip(names, np.asarray(self.se, float).tolist())),
            "loglik": self.loglik,
            "converged": self.converged,
            "n_obs": self.n_obs,
        }


def _fit_valuation_once(arrays, p_hat, starts):
    n, wl, tau, v0l, v0s = arrays

    def negll(x):
        th = ValuationParams(*np.exp(x))
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            dens = _density_arrays(n, wl, tau, v0l, v0s, p_hat, th)
            ll = np.sum(np.log(dens))
        return -ll if np.isfinite(ll) else 1e300

    results = []
    for x0 in starts:
        res = minimize(negll, np.log(x0), method="BFGS", options={"gtol": 1e-6})
        if not res.success:
            # BFGS often stops on line-search precision loss; polish with a simplex
            res = minimize(negll, res.x, method="Nelder-Mead",
                           options={"xatol": 1e-7, "fatol": 1e-9, "maxiter": 8000, "maxfev": 16000})
        results.append(res)
    best = min(results, key=lambda r: r.fun)
    return best, results


def fit_valuation(obs, p_hat, init=(1.0, 1.0, 1.0, 1.0), n_starts: int = 3, seed: int = 0,
                  boot_reps: int = 0, n_jobs: int = 1) -> ValuationEstimate:
    """Maximum-likelihood gamma valuation parameters from winner types and prices.

    ``p_hat`` is the logger share of bidders, either one number or one per
    observation. Continuation values come on each observation.
    """
    obs = [o for o in obs]
    arrays = _bid_arrays(obs)
    if np.any(arrays[0] < 2):
        raise InvalidInput("transaction prices are only informative with two or more bidders")
    if np.any(arrays[3] <= 0) or np.any(arrays[4] <= 0):
        raise InvalidInput("continuation values must be positive")
    p_hat = np.broadcast_to(np.asarray(p_hat, float), arrays[2].shape)
    rng = np.random.default_rng(seed)
    x_init = np.asarray(init, float)
    starts = [x_init] + [x_init * np.exp(rng.uniform(-0.7, 0.7, size=4)) for _ in range(n_starts - 1)]
    best, results = _fit_valuation_once(arrays, p_hat, starts)
    params = ValuationParams(*np.exp(best.x))
    if boot_reps >= 2:
        def one(b):
            r = np.random.default_rng([seed, b])
            idx = r.integers(0, len(obs), size=len(obs))
            sub = tuple(a[idx] for a in arrays)
            fit, _ = _fit_valuation_once(sub, p_hat[idx], [params.as_array()])
            return np.exp(fit.x)
        boots = np.array(Parallel(n_jobs=n_jobs, backend="threading")(delayed(one)(b) for b in range(boot_reps)))
        se = boots.std(axis=0, ddof=1)
    else:
        se = np.full(4, np.nan)
    est = ValuationEstimate(params, se, -float(best.fun), bool(best.success), len(obs), [float(-r.fun) for r in results])
    if not est.converged:
        log.warning("valuation fit did not converge")
    return est


ENTRY_COLUMNS = ["auction_id", "format", "n", "N_l", "N_s"]
BID_COLUMNS = ["auction_id", "n", "winner_type", "tau", "v0_l", "v0_s"]


def write_entry_csv(obs, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ENTRY_COLUMNS)
        for o in obs:
            w.writerow([o.auction_id, o.format.value, o.n, o.N_l, o.N_s])
    return path


def write_bid_csv(obs, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BID_COLUMNS)
        for o in obs:
            w.writerow([o.auction_id, o.n, o.winner_type.value, repr(o.tau), repr(o.v0_l), repr(o.v0_s)])
    return path


def _read_rows(path, columns, parse):
    path = Path(path)
    out = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        names = [h.strip() for h in header] if header is not None else None
        # a trailing run-seed column written by the command-line tool is accepted and ignored
        if names is not None and names[-1:] == ["seed"]:
            names = names[:-1]
        if names != columns:
            raise InvalidInput(f"{path}: row 1: expected header {','.join(columns)}")
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise InvalidInput(f"{path}: row {lineno}: expected {width} fields, got {len(row)}")
            try:
                out.append(parse(row))
            except (ValueError, InvalidInput) as exc:
                raise InvalidInput(f"{path}: row {lineno}: {exc}") from None
    return out


def read_entry_csv(path) -> list[EntryObservation]:
    return _read_rows(path, ENTRY_COLUMNS, lambda r: EntryObservation(r[0], int(r[2]), int(r[3]), int(r[4]), AuctionFormat(r[1].strip().lower())))


def read_bid_csv(path) -> list[BidObservation]:
    return _read_rows(path, BID_COLUMNS, lambda r: BidObservation(r[0], int(r[1]), BidderType.parse(r[2]), float(r[3]), float(r[4]), float(r[5])))

