"""Equilibrium inverse bid functions of a two-type first-price sealed-bid auction.

Each present type's inverse bid function ``psi_m`` (bid -> value) is
represented by a Chebyshev series on ``[v_lo, b_hi]``, by default on the
probability scale ``w_m(psi_m(b))``: the untruncated value CDF raised to
``1/k_m`` (``k_m`` the gamma shape), rescaled to [0, 1] on the support. That
series is close to linear at both ends, where ``psi_m`` itself is steep. The coefficients and the common top bid
``b_hi`` minimize squared first-order-condition residuals at Chebyshev-Gauss
nodes, with the end conditions imposed exactly (or as weighted penalties) and
monotonicity and ``psi(b) >= b`` imposed through quadratic penalties.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import least_squares
from scipy.special import expit, gammainc, gammaincinv, gammaln, logit

from .model import BidderType, InvalidInput, json_safe

log = logging.getLogger(__name__)


class OutOfSupport(InvalidInput):
    pass


# --- Chebyshev machinery -----------------------------------------------------

def chebyshev_nodes(n: int) -> np.ndarray:
    """Chebyshev-Gauss points ``cos((2t - 1) pi / 2n)``, t = 1..n, in decreasing order."""
    t = np.arange(1, n + 1)
    return np.cos((2 * t - 1) * np.pi / (2 * n))


def chebyshev_basis(x, K: int) -> np.ndarray:
    """``T_0..T_K`` at ``x`` by the three-term recurrence; shape (K + 1, *x.shape)."""
    x = np.asarray(x, float)
    out = np.empty((K + 1,) + x.shape)
    out[0] = 1.0
    if K >= 1:
        out[1] = x
    for k in range(1, K):
        out[k + 1] = 2 * x * out[k] - out[k - 1]
    return out


def chebyshev_basis_deriv(x, K: int) -> np.ndarray:
    """``d T_k / dx = k U_{k-1}(x)`` with U the second-kind polynomials."""
    x = np.asarray(x, float)
    U = np.empty((max(K, 1),) + x.shape)
    U[0] = 1.0
    if K >= 2:
        U[1] = 2 * x
    for k in range(1, K - 1):
        U[k + 1] = 2 * x * U[k] - U[k - 1]
    out = np.zeros((K + 1,) + x.shape)
    for k in range(1, K + 1):
        out[k] = k * U[k - 1]
    return out


def to_unit(b, v_lo: float, b_hi: float):
    return (2 * np.asarray(b, float) - v_lo - b_hi) / (b_hi - v_lo)


def from_unit(x, v_lo: float, b_hi: float):
    return (b_hi + v_lo + (b_hi - v_lo) * np.asarray(x, float)) / 2


# --- value distributions -----------------------------------------------------

@dataclass(frozen=True)
class ValueDistribution:
    """A value distribution truncated to ``[lo, hi]``.

    ``kind`` is ``"gamma"`` (params: shape, scale) or ``"uniform"``.
    """

    type: BidderType
    kind: str
    params: tuple
    lo: float
    hi: float

    def __post_init__(self):
        object.__setattr__(self, "type", BidderType.parse(self.type))
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if self.kind not in ("gamma", "uniform"):
            raise InvalidInput(f"unknown distribution kind {self.kind!r}")
        if self.kind == "gamma" and (len(self.params) != 2 or min(self.params) <= 0):
            raise InvalidInput("gamma needs positive (shape, scale)")
        if not self.hi > self.lo:
            raise InvalidInput("empty support")

    @classmethod
    def gamma(cls, type_, shape, scale, lo, hi):
        return cls(type_, "gamma", (shape, scale), lo, hi)

    @classmethod
    def uniform(cls, type_, lo=0.0, hi=1.0):
        return cls(type_, "uniform", (), lo, hi)

    def _raw_cdf(self, v):
        shape, scale = self.params
        return gammainc(shape, np.maximum(v, 0) / scale)

    def _raw_logpdf(self, v):
        shape, scale = self.params
        z = np.maximum(v, 1e-300) / scale
        return (shape - 1) * np.log(z) - z - gammaln(shape) - np.log(scale)

    def _mass(self):
        return self._raw_cdf(self.lo), self._raw_cdf(self.hi)

    def cdf(self, v):
        v = np.clip(np.asarray(v, float), self.lo, self.hi)
        if self.kind == "uniform":
            return (v - self.lo) / (self.hi - self.lo)
        g_lo, g_hi = self._mass()
        return (self._raw_cdf(v) - g_lo) / (g_hi - g_lo)

    def pdf(self, v):
        v = np.asarray(v, float)
        inside = (v >= self.lo) & (v <= self.hi)
        if self.kind == "uniform":
            return np.where(inside, 1.0 / (self.hi - self.lo), 0.0)
        g_lo, g_hi = self._mass()
        return np.where(inside, np.exp(self._raw_logpdf(v)) / (g_hi - g_lo), 0.0)

    def ppf(self, u):
        """Quantile function; ``u`` is clipped to [0, 1]."""
        u = np.clip(np.asarray(u, float), 0.0, 1.0)
        if self.kind == "uniform":
            return self.lo + u * (self.hi - self.lo)
        shape, scale = self.params
        g_lo, g_hi = self._mass()
        return np.clip(scale * gammaincinv(shape, g_lo + u * (g_hi - g_lo)), self.lo, self.hi)

    def cdf_over_pdf(self, v):
        """``F(v) / f(v)`` without forming the truncation constant; finite where ``f`` underflows."""
        v = np.clip(np.asarray(v, float), self.lo, self.hi)
        if self.kind == "uniform":
            return v - self.lo
        num = self._raw_cdf(v) - self._raw_cdf(self.lo)
        with np.errstate(over="ignore"):
            return np.minimum(num * np.exp(-self._raw_logpdf(v)), 1e300)

    @property
    def tail_power(self) -> float:
        """Exponent ``k`` of the untruncated CDF near zero, ``G(v) ~ v^k`` (the gamma shape)."""
        return self.params[0] if self.kind == "gamma" else 1.0

    # The solver's probability scale: w(v) = (G(v)^(1/k) - G(lo)^(1/k)) / (G(hi)^(1/k) - G(lo)^(1/k)),
    # with G the untruncated CDF. w is monotone from 0 at lo to 1 at hi and, unlike F, close
    # to linear in v near zero whatever the shape.

    def _h_ends(self):
        g_lo, g_hi = self._mass()
        k = self.tail_power
        return g_lo ** (1 / k), g_hi ** (1 / k)

    def wcdf(self, v):
        if self.kind == "uniform":
            return self.cdf(v)
        v = np.clip(np.asarray(v, float), self.lo, self.hi)
        h_lo, h_hi = self._h_ends()
        return (self._raw_cdf(v) ** (1 / self.tail_power) - h_lo) / (h_hi - h_lo)

    def wppf(self, w):
        """Inverse of ``wcdf``; ``w`` is clipped to [0, 1]."""
        if self.kind == "uniform":
            return self.ppf(w)
        w = np.clip(np.asarray(w, float), 0.0, 1.0)
        shape, scale = self.params
        h_lo, h_hi = self._h_ends()
        g = (h_lo + w * (h_hi - h_lo)) ** shape
        return np.clip(scale * gammaincinv(shape, g), self.lo, self.hi)

    def wpdf(self, v):
        """``dw/dv``."""
        if self.kind == "uniform":
            return self.pdf(v)
        v = np.clip(np.asarray(v, float), self.lo, self.hi)
        k = self.tail_power
        h_lo, h_hi = self._h_ends()
        G = np.maximum(self._raw_cdf(v), 1e-300)
        return G ** (1 / k - 1) / k * np.exp(self._raw_logpdf(v)) / (h_hi - h_lo)

    def w_rate(self, v):
        """``(dw/dv) * F/f``, the factor linking ``w'`` to the equilibrium bracket."""
        if self.kind == "uniform":
            return self.cdf(v)
        v = np.clip(np.asarray(v, float), self.lo, self.hi)
        k = self.tail_power
        h_lo, h_hi = self._h_ends()
        G = np.maximum(self._raw_cdf(v), 1e-300)
        return G ** (1 / k - 1) / k * (G - self._mass()[0]) / (h_hi - h_lo)

    def to_dict(self) -> dict:
        return {"type": self.type.value, "kind": self.kind, "params": list(self.params), "lo": self.lo, "hi": self.hi}

    @classmethod
    def from_dict(cls, d):
        return cls(d["type"], d["kind"], tuple(d["params"]), d["lo"], d["hi"])


def gamma_support(components, tail: float = 1e-4) -> tuple[float, float]:
    """``tail`` and ``1 - tail`` quantiles of a gamma mixture.

    ``components`` is a sequence of ``(weight, shape, scale)``.
    """
    from scipy.optimize import brentq

    w = np.array([c[0] for c in components], float)
    w = w / w.sum()

    def mix_cdf(v):
        return sum(wi * gammainc(s, v / sc) for wi, (_, s, sc) in zip(w, components))

    lo_b = min(gammaincinv(s, tail) * sc for _, s, sc in components)
    hi_b = max(gammaincinv(s, 1 - tail) * sc for _, s, sc in components)
    lo = brentq(lambda v: mix_cdf(v) - tail, lo_b * 0.5, hi_b)
    hi = brentq(lambda v: mix_cdf(v) - (1 - tail), lo_b, hi_b * 2)
    return float(lo), float(hi)


# --- the bid system ----------------------------------------------------------

SCALES = ("probability", "value")


@dataclass
class BidSystem:
    """Solved inverse bid functions for the types present in an auction.

    ``coefs[m]`` holds the K + 1 Chebyshev coefficients of type m's series on
    ``[v_lo, b_hi]``. On the ``"probability"`` scale the series is
    ``w_m(b) = wcdf_m(psi_m(b))`` (see ``ValueDistribution.wcdf``) and
    ``psi_m = wppf_m(w_m)``; on the ``"value"`` scale the series is ``psi_m``
    itself. ``counts[m]`` is the
    number of type-m bidders.
    """

    coefs: dict
    b_hi: float
    v_lo: float
    v_hi: float
    counts: dict
    dists: dict
    nodes: int
    scale: str = "probability"
    converged: bool = True
    diagnostics: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return len(next(iter(self.coefs.values()))) - 1

    @property
    def n_bidders(self) -> int:
        return sum(self.counts.values())

    @property
    def types(self):
        return [m for m in BidderType if self.counts.get(m, 0) > 0]

    def _check(self, b):
        b = np.asarray(b, float)
        tol = 1e-12 * max(1.0, abs(self.b_hi))
        if np.any(b < self.v_lo - tol) or np.any(b > self.b_hi + tol):
            raise OutOfSupport(f"bid outside [{self.v_lo}, {self.b_hi}]")
        return np.clip(b, self.v_lo, self.b_hi)

    def series(self, type_, b, deriv: bool = False):
        """The raw Chebyshev series (or its derivative in ``b``) of one type."""
        m = BidderType.parse(type_)
        x = to_unit(self._check(b), self.v_lo, self.b_hi)
        if deriv:
            return np.tensordot(self.coefs[m], chebyshev_basis_deriv(x, self.K), axes=1) * 2 / (self.b_hi - self.v_lo)
        return np.tensordot(self.coefs[m], chebyshev_basis(x, self.K), axes=1)

    def psi(self, type_, b, deriv: bool = False):
        """Inverse bid ``psi_m(b)`` or its slope."""
        m = BidderType.parse(type_)
        if self.scale == "value":
            return self.series(m, b, deriv)
        psi = self.dists[m].wppf(self.series(m, b))
        if not deriv:
            return psi
        with np.errstate(divide="ignore"):
            return self.series(m, b, deriv=True) / self.dists[m].wpdf(psi)

    def to_dict(self) -> dict:
        return {
            "coefficients": {m.value: list(map(float, c)) for m, c in self.coefs.items()},
            "scale": self.scale,
            "b_hi": self.b_hi,
            "v_lo": self.v_lo,
            "v_hi": self.v_hi,
            "counts": {m.value: n for m, n in self.counts.items()},
            "distributions": {m.value: d.to_dict() for m, d in self.dists.items()},
            "nodes": self.nodes,
            "converged": self.converged,
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, d) -> "BidSystem":
        return cls(
            coefs={BidderType(k): np.asarray(v, float) for k, v in d["coefficients"].items()},
            b_hi=float(d["b_hi"]), v_lo=float(d["v_lo"]), v_hi=float(d["v_hi"]),
            counts={BidderType(k): int(v) for k, v in d["counts"].items()},
            dists={BidderType(k): ValueDistribution.from_dict(v) for k, v in d["distributions"].items()},
            nodes=int(d["nodes"]), scale=d.get("scale", "probability"),
            converged=bool(d["converged"]), diagnostics=d.get("diagnostics", {}),
        )

    def to_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(json_safe(self.to_dict()), indent=2, allow_nan=False))
        return path

    @classmethod
    def from_json(cls, path) -> "BidSystem":
        return cls.from_dict(json.loads(Path(path).read_text()))


def inverse_bid(system: BidSystem, type_, b):
    """Value of a type-``type_`` bidder who bids ``b``."""
    out = system.psi(type_, b)
    return float(out) if np.ndim(out) == 0 else out


def bid(system: BidSystem, type_, v, tol: float = 1e-10):
    """Equilibrium bid of a type-``type_`` bidder with value ``v`` (bisection on ``psi``)."""
    v = np.asarray(v, float)
    if np.any(v < system.v_lo - 1e-12) or np.any(v > system.v_hi + 1e-12):
        raise OutOfSupport(f"value outside [{system.v_lo}, {system.v_hi}]")
    m = BidderType.parse(type_)
    # psi is increasing in the series, so compare the series with the value's image
    target = v if system.scale == "value" else system.dists[m].wcdf(v)
    lo = np.full(v.shape, system.v_lo)
    hi = np.full(v.shape, system.b_hi)
    width = system.b_hi - system.v_lo
    n_iter = int(np.ceil(np.log2(max(width, tol) / tol))) + 1
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        below = system.series(m, mid) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    out = 0.5 * (lo + hi)
    out = np.where(v >= system.v_hi, system.b_hi, np.where(v <= system.v_lo, system.v_lo, out))
    return float(out) if out.ndim == 0 else out


def _bracket(counts: dict, gaps: dict, m: BidderType, N: int):
    """``sum_j n_j / (psi_j - b) / (N - 1) - 1 / (psi_m - b)``.

    Solving every bidder's optimality condition jointly for the slopes gives
    ``psi_m' = (F_m/f_m)(psi_m) * bracket_m``; with one type this is the
    symmetric equilibrium ODE ``psi' = (F/f) / ((N - 1)(psi - b))``.
    """
    total = sum(counts[j] / gaps[j] for j in counts) / (N - 1)
    return total - 1.0 / gaps[m]


def foc_residual(system: BidSystem, type_, b):
    """``psi_m' - (F_m/f_m)(psi_m) * bracket_m`` at bid ``b``, in value-per-bid units.

    NaN (with a RuntimeWarning) where some ``psi_j(b) <= b``.
    """
    m = BidderType.parse(type_)
    b = np.asarray(b, float)
    gaps = {j: system.psi(j, b) - b for j in system.types}
    singular = np.zeros(b.shape, bool)
    for g in gaps.values():
        singular |= g <= 0
    safe = {j: np.where(singular, 1.0, g) for j, g in gaps.items()}
    with np.errstate(invalid="ignore"):
        out = system.psi(m, b, deriv=True) - system.dists[m].cdf_over_pdf(system.psi(m, b)) * _bracket(
            system.counts, safe, m, system.n_bidders)
    out = np.where(singular, np.nan, out)
    if np.any(singular):
        warnings.warn("first-order condition singular where psi(b) <= b", RuntimeWarning, stacklevel=2)
    return float(out) if out.ndim == 0 else out


def symmetric_bid_function(F, lo: float, hi: float, n_bidders: int, grid: int = 4001):
    """Symmetric equilibrium ``b(v) = v - int_lo^v F^(N-1) / F(v)^(N-1)`` on a value grid."""
    v = np.linspace(lo, hi, grid)
    G = np.asarray(F(v), float) ** (n_bidders - 1)
    integral = cumulative_trapezoid(G, v, initial=0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        b = np.where(G > 0, v - integral / np.where(G > 0, G, 1.0), lo)
    return v, b


# weight floor of the probability-scale residual near the lowest bid
_U_FLOOR = 1e-3
# per-node weight of the psi >= b penalty
_RATIONALITY = 10.0


class _Problem:
    """Residual vector of the collocation objective.

    With ``exact_boundary`` the end conditions are solved for the first two
    coefficients of each type (``T_k(1) = 1``, ``T_k(-1) = (-1)^k``),
    leaving ``K - 1`` free coefficients per type; otherwise they enter as
    weighted penalties. FOC residuals are made dimensionless and each block is
    averaged over its nodes so the weights compare like with like.
    """

    def __init__(self, dists, counts, K, nodes, weights, v_lo, v_hi, scale="probability", exact_boundary=True):
        self.types = [m for m in BidderType if counts.get(m, 0) > 0]
        self.dists, self.counts, self.K = dists, counts, K
        self.N = sum(counts.values())
        self.w_foc, self.w_lo, self.w_hi = weights
        self.v_lo, self.v_hi = v_lo, v_hi
        self.width = v_hi - v_lo
        self.scale = scale
        self.exact = exact_boundary
        # series values required at the lowest and highest bid
        self.end_lo, self.end_hi = (0.0, 1.0) if scale == "probability" else (v_lo, v_hi)
        self.x = chebyshev_nodes(nodes)
        self.T = chebyshev_basis(self.x, K)
        self.dT = chebyshev_basis_deriv(self.x, K)
        self.xd = chebyshev_nodes(10 * nodes)
        self.Td = chebyshev_basis(self.xd, K)
        self.dTd = chebyshev_basis_deriv(self.xd, K)
        self.T_lo = chebyshev_basis(-1.0, K)
        self.T_hi = chebyshev_basis(1.0, K)
        self.n_free = K - 1 if self.exact else K + 1

    def unpack(self, z):
        n = self.n_free
        coefs = {}
        for i, m in enumerate(self.types):
            a = z[i * n:(i + 1) * n]
            if self.exact:
                s_hi = self.end_hi - a.sum()
                s_lo = self.end_lo - a @ self.T_lo[2:]
                a = np.concatenate([[(s_hi + s_lo) / 2, (s_hi - s_lo) / 2], a])
            coefs[m] = a
        b_hi = self.v_lo + self.width * expit(z[-1])
        return coefs, b_hi

    def pack(self, coefs, b_hi):
        frac = np.clip((b_hi - self.v_lo) / self.width, 1e-9, 1 - 1e-9)
        first = 2 if self.exact else 0
        return np.concatenate([np.asarray(coefs[m][first:], float) for m in self.types] + [[logit(frac)]])

    def _psi(self, m, series):
        if self.scale == "value":
            return series
        return self.dists[m].wppf(series)

    def scaled_foc(self, coefs, b_hi, T, dT, x):
        """Dimensionless FOC residuals at the nodes ``x``.

        Value scale: ``(psi_m - b)(psi_m' f_m/F_m - bracket_m)``. Probability
        scale: ``(psi_m - b)(w_m' - rate_m(psi_m) bracket_m) / sqrt(w_m + floor)``,
        with ``rate_m = (dw_m/dv) F_m/f_m`` since ``w_m' = (dw_m/dv) psi_m'``.
        """
        b = from_unit(x, self.v_lo, b_hi)
        dscale = 2 / (b_hi - self.v_lo)
        floor = 1e-6 * self.width
        series = {m: coefs[m] @ T for m in self.types}
        psi = {m: self._psi(m, series[m]) for m in self.types}
        gaps = {m: np.maximum(psi[m] - b, floor) for m in self.types}
        out = []
        for m in self.types:
            slope = (coefs[m] @ dT) * dscale
            br = _bracket(self.counts, gaps, m, self.N)
            if self.scale == "probability":
                w = np.clip(series[m], 0.0, 1.0)
                rate = self.dists[m].w_rate(psi[m])
                out.append(gaps[m] * (slope - rate * br) / np.sqrt(w + _U_FLOOR))
            else:
                ratio = np.maximum(self.dists[m].cdf_over_pdf(np.clip(psi[m], self.v_lo + floor, self.v_hi)), floor)
                out.append(gaps[m] * (slope / ratio - br))
        return np.concatenate(out)

    def residuals(self, z):
        coefs, b_hi = self.unpack(z)
        foc = self.scaled_foc(coefs, b_hi, self.T, self.dT, self.x)
        bd = from_unit(self.xd, self.v_lo, b_hi)
        dscale = 2 / (b_hi - self.v_lo)
        n_types = len(self.types)
        parts = [np.sqrt(self.w_foc / foc.size) * foc]
        pen = np.sqrt(10 * self.w_foc / (self.xd.size * n_types))
        span = self.end_hi - self.end_lo
        for m in self.types:
            if not self.exact:
                parts.append(np.sqrt(np.array([self.w_lo, self.w_hi]) / n_types)
                             * [(coefs[m] @ self.T_lo - self.end_lo) / span, (coefs[m] @ self.T_hi - self.end_hi) / span])
            series = coefs[m] @ self.Td
            if self.scale == "probability":
                # psi >= b  <=>  w >= wcdf(b); enforced node by node, not averaged
                parts.append(_RATIONALITY * np.maximum(self.dists[m].wcdf(bd) - series, 0))
            else:
                parts.append(_RATIONALITY * np.maximum(bd - series, 0) / (b_hi - self.v_lo))
            # slope of the series in units of its span per bid range
            parts.append(pen * np.maximum(-(coefs[m] @ self.dTd) * dscale * self.width / span, 0))
            if self.scale == "probability":
                parts.append(pen * (np.maximum(series - 1, 0) + np.maximum(-series, 0)))
        return np.concatenate([np.ravel(p) for p in parts])


def _initial_guess(problem: _Problem):
    """Coefficients of the symmetric equilibrium of the count-weighted mixture."""
    w = {m: problem.counts[m] / problem.N for m in problem.types}

    def F_mix(v):
        return sum(w[m] * problem.dists[m].cdf(v) for m in problem.types)

    v, b = symmetric_bid_function(F_mix, problem.v_lo, problem.v_hi, problem.N)
    b_hi = float(b[-1])
    # least-squares Chebyshev fit of the series on b over the collocation range
    xb = to_unit(b, problem.v_lo, b_hi)
    keep = np.concatenate([[True], np.diff(xb) > 1e-12])
    A = chebyshev_basis(xb[keep], problem.K).T
    coefs = {}
    for m in problem.types:
        if problem.scale == "probability":
            target = problem.dists[m].wcdf(v[keep])
        else:
            target = v[keep]
        coefs[m], *_ = np.linalg.lstsq(A, target, rcond=None)
    return coefs, min(b_hi, problem.v_hi - 1e-6 * problem.width)


def solve_bid_system(F_l: ValueDistribution | None, F_s: ValueDistribution | None, N_l: int, N_s: int,
                     K: int = 7, weights=(0.6, 0.2, 0.2), nodes: int | None = None, n_starts: int = 5,
                     seed: int = 0, tol: float = 1e-2, scale: str = "probability",
                     exact_boundary: bool = True, max_nfev: int = 500) -> BidSystem:
    """Chebyshev collocation for the inverse bid functions.

    Types with zero bidders are dropped. All present types must share one
    support ``[v_lo, v_hi]``. Restarts perturb the mixture-equilibrium guess
    until the objective falls below ``tol``; the lowest objective wins and
    ``converged`` reports whether it met ``tol``.
    """
    if N_l < 0 or N_s < 0 or N_l + N_s < 2:
        raise InvalidInput("need at least two bidders")
    if K < 2:
        raise InvalidInput("degree K must be at least 2")
    if scale not in SCALES:
        raise InvalidInput(f"scale must be one of {SCALES}")
    if len(weights) != 3 or min(weights) < 0 or weights[0] <= 0:
        raise InvalidInput("weights are (w_foc > 0, w_lo >= 0, w_hi >= 0)")
    counts = {BidderType.LOGGER: int(N_l), BidderType.SAWMILL: int(N_s)}
    dists = {BidderType.LOGGER: F_l, BidderType.SAWMILL: F_s}
    counts = {m: n for m, n in counts.items() if n > 0}
    dists = {m: dists[m] for m in counts}
    if any(d is None for d in dists.values()):
        raise InvalidInput("a distribution is required for every type with bidders")
    supports = {(d.lo, d.hi) for d in dists.values()}
    if len(supports) != 1:
        raise InvalidInput("both types must share a common support")
    v_lo, v_hi = supports.pop()
    nodes = 3 * (K + 1) if nodes is None else int(nodes)
    if nodes < K:
        raise InvalidInput("need at least K collocation nodes")

    problem = _Problem(dists, counts, K, nodes, weights, v_lo, v_hi, scale, exact_boundary)
    coefs0, b_hi0 = _initial_guess(problem)
    span = problem.end_hi - problem.end_lo
    rng = np.random.default_rng(seed)
    starts = [problem.pack(coefs0, b_hi0)]
    for _ in range(n_starts - 1):
        jitter = {m: c + rng.normal(scale=0.02 * span, size=c.size) * (np.arange(c.size) < 4)
                  for m, c in coefs0.items()}
        b_try = v_lo + (b_hi0 - v_lo) * rng.uniform(0.9, 1.1)
        starts.append(problem.pack(jitter, min(b_try, v_hi - 1e-6 * problem.width)))

    best, tried = None, 0
    for z0 in starts:
        res = least_squares(problem.residuals, z0, method="trf", x_scale="jac",
                            xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=max_nfev)
        tried += 1
        if best is None or res.cost < best.cost:
            best = res
        if 2 * best.cost <= tol:
            break

    coefs, b_hi = problem.unpack(best.x)
    foc = problem.scaled_foc(coefs, b_hi, problem.T, problem.dT, problem.x)
    system = BidSystem({m: np.array(c) for m, c in coefs.items()}, float(b_hi), v_lo, v_hi, counts, dists,
                       nodes, scale)
    system.diagnostics = {
        "objective": float(2 * best.cost),
        "max_scaled_foc": float(np.max(np.abs(foc))),
        "boundary_lo": {m.value: float(system.psi(m, v_lo) - v_lo) for m in counts},
        "boundary_hi": {m.value: float(system.psi(m, b_hi) - v_hi) for m in counts},
        "nfev": int(best.nfev),
        "starts_tried": tried,
        "exact_boundary": bool(exact_boundary),
    }
    system.converged = bool(2 * best.cost <= tol)
    if not system.converged:
        log.warning("bid system objective %.3g above tolerance %.3g", 2 * best.cost, tol)
    return system


def check_inequalities(system: BidSystem, density: int = 10) -> dict:
    """Monotonicity and ``psi(b) >= b`` on a grid ``density`` times the collocation nodes.

    Slopes are those of the stored series, whose sign matches ``psi'``.
    """
    x = np.linspace(-1, 1, density * system.nodes)
    b = from_unit(x, system.v_lo, system.b_hi)
    out = {}
    for m in system.types:
        out[m] = {
            "min_slope": float(np.min(system.series(m, b, deriv=True))),
            "min_margin": float(np.min(system.psi(m, b) - b)),
        }
    return out
