"""Finite-horizon harvesting problem of the auction winner.

The state is (period, price index, remaining fraction); actions are cut
fractions of the initial tract on ``ACTION_GRID``. Action shocks are type-I
extreme value with unit scale, so integrated values are log-sum-exps plus
the Euler-Mascheroni constant and choice probabilities are logits.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ACTION_GRID, N_ACTIONS, CuttingState, DynamicParams, InvalidInput, PriceProcess

EULER_GAMMA = float(np.euler_gamma)

# _NEXT_R[r, a]: remaining index after cutting a quarters from r quarters.
_R = np.arange(N_ACTIONS)
_FEASIBLE = _R[None, :] <= _R[:, None]
_NEXT_R = np.where(_FEASIBLE, _R[:, None] - _R[None, :], 0)
_TERMINAL = _R[None, :] == _R[:, None]


class InfeasibleAction(InvalidInput):
    pass


def flow_payoff(q, remaining, u0, price, params: DynamicParams):
    """Deterministic per-period harvest payoff.

    ``q * u0`` volume is cut at price ``price``; the shock is added by the caller.
    """
    q = np.asarray(q, float)
    if np.any(q > np.asarray(remaining, float) + 1e-12):
        raise InfeasibleAction(f"cannot cut {q} with only {remaining} remaining")
    vol = q * u0
    out = vol * (params.gamma * np.asarray(price, float) - params.c1 - params.c2 * vol)
    return float(out) if out.ndim == 0 else out


def _flow_table(params: DynamicParams, grid: np.ndarray, u0: float) -> np.ndarray:
    vol = ACTION_GRID[None, :] * u0
    return vol * (params.gamma * grid[:, None] - params.c1 - params.c2 * vol)


def _logsumexp(v: np.ndarray) -> np.ndarray:
    m = v.max(axis=-1)
    return m + np.log(np.exp(v - m[..., None]).sum(axis=-1))


@dataclass(frozen=True)
class DpSolution:
    """Solved harvesting problem.

    Arrays are indexed ``[t-1, price_idx, remaining_idx(, action_idx)]``;
    infeasible actions carry ``-inf`` choice values and zero probability.
    ``v0[p]`` is the integrated value at t = 1 with the full tract standing.
    """

    params: DynamicParams
    T: int
    u0: float
    choice_values: np.ndarray
    ccps: np.ndarray
    integrated_values: np.ndarray

    @property
    def v0(self) -> np.ndarray:
        return self.integrated_values[0, :, N_ACTIONS - 1]

    @property
    def log_ccps(self) -> np.ndarray:
        v = self.choice_values
        with np.errstate(invalid="ignore"):
            return v - _logsumexp(v)[..., None]


def solve_dp(params: DynamicParams, prices: PriceProcess, T: int, u0: float = 1.0) -> DpSolution:
    """Backward induction from the forced terminal harvest to period 1."""
    if T < 1:
        raise InvalidInput("contract length must be at least one period")
    P = prices.size
    flow = _flow_table(params, prices.grid, u0)
    # flow_ra[p, r, a] = flow[p, a] broadcast over remaining states
    flow_ra = np.broadcast_to(flow[:, None, :], (P, N_ACTIONS, N_ACTIONS))
    choice = np.empty((T, P, N_ACTIONS, N_ACTIONS))
    values = np.empty((T, P, N_ACTIONS))

    choice[T - 1] = np.where(_TERMINAL[None], flow_ra, -np.inf)
    values[T - 1] = _logsumexp(choice[T - 1]) + EULER_GAMMA
    for t in range(T - 2, -1, -1):
        ev = prices.transition @ values[t + 1]  # (P, R): E[V_{t+1}(p', r') | p]
        cont = ev[:, _NEXT_R]  # (P, R, A)
        choice[t] = np.where(_FEASIBLE[None], flow_ra + params.beta * cont, -np.inf)
        values[t] = _logsumexp(choice[t]) + EULER_GAMMA

    # normalized softmax, so a single feasible action gets probability exactly 1
    ccps = np.exp(choice - choice.max(axis=-1, keepdims=True))
    ccps /= ccps.sum(axis=-1, keepdims=True)
    for arr in (choice, ccps, values):
        arr.setflags(write=False)
    return DpSolution(params, T, float(u0), choice, ccps, values)


def ccp(solution: DpSolution, state: CuttingState) -> np.ndarray:
    """Choice probabilities over ``ACTION_GRID`` at a solved state (zeros off the feasible set)."""
    if not 1 <= state.t <= solution.T or not 0 <= state.price_idx < solution.ccps.shape[1]:
        raise InvalidInput(f"state {state} outside the solved range")
    return solution.ccps[state.t - 1, state.price_idx, state.remaining_idx].copy()


@dataclass(frozen=True)
class CuttingPath:
    actions: np.ndarray
    price_path: np.ndarray
    flow_payoffs: np.ndarray


def simulate_arrays(solution: DpSolution, prices: PriceProcess, n: int, seed: int, p0_idx=0):
    """Vectorized path simulation.

    Returns ``(price_idx, remaining_idx, action_idx)`` arrays of shape (n, T).
    ``p0_idx`` is either one index for every path or one index per path.
    """
    if n < 1:
        raise InvalidInput("need at least one path")
    T = solution.T
    rng = np.random.default_rng(seed)
    u = rng.random((n, T, 2))
    p = np.empty((n, T), dtype=np.int64)
    r = np.empty((n, T), dtype=np.int64)
    a = np.empty((n, T), dtype=np.int64)
    p[:, 0] = np.broadcast_to(np.asarray(p0_idx, dtype=np.int64), (n,))
    r[:, 0] = N_ACTIONS - 1
    cum_trans = np.cumsum(prices.transition, axis=1)
    for t in range(T):
        cum = np.cumsum(solution.ccps[t, p[:, t], r[:, t]], axis=1)
        a[:, t] = np.minimum((u[:, t, 0][:, None] >= cum).sum(axis=1), r[:, t])
        if t + 1 < T:
            r[:, t + 1] = r[:, t] - a[:, t]
            p[:, t + 1] = np.minimum((u[:, t, 1][:, None] >= cum_trans[p[:, t]]).sum(axis=1), prices.size - 1)
    return p, r, a


def simulate_paths(solution: DpSolution, prices: PriceProcess, n: int, seed: int, p0_idx=0) -> list[CuttingPath]:
    """Draw ``n`` harvest paths; identical seeds give identical paths."""
    p, _, a = simulate_arrays(solution, prices, n, seed, p0_idx)
    q = ACTION_GRID[a]
    flows = q * solution.u0 * (
        solution.params.gamma * prices.grid[p] - solution.params.c1 - solution.params.c2 * q * solution.u0
    )
    return [CuttingPath(q[i], p[i], flows[i]) for i in range(n)]


@dataclass(frozen=True)
class ValueCurve:
    """``values[i, j, k]`` is V0 for contract length ``lengths[i]``, tract size ``sizes[j]``, price ``price_idx[k]``."""

    lengths: tuple
    sizes: tuple
    price_idx: tuple
    values: np.ndarray

    def rows(self):
        for i, T in enumerate(self.lengths):
            for j, u0 in enumerate(self.sizes):
                for k, p in enumerate(self.price_idx):
                    yield T, u0, p, float(self.values[i, j, k])

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["contract_length", "tract_size", "price_idx", "v0"])
            for T, u0, p, v in self.rows():
                w.writerow([T, repr(float(u0)), p, repr(v)])
        return path


def continuation_value_curve(params: DynamicParams, prices: PriceProcess, T_list, u0_list, p0_idx=None) -> ValueCurve:
    """V0 across contract lengths and tract sizes at one or all initial price levels."""
    T_list, u0_list = tuple(int(T) for T in T_list), tuple(float(u) for u in u0_list)
    if not T_list or not u0_list:
        raise InvalidInput("need at least one contract length and one tract size")
    if p0_idx is None:
        p_sel = tuple(range(prices.size))
    else:
        p_sel = tuple(int(p) for p in np.atleast_1d(p0_idx))
    out = np.empty((len(T_list), len(u0_list), len(p_sel)))
    for i, T in enumerate(T_list):
        for j, u0 in enumerate(u0_list):
            out[i, j] = solve_dp(params, prices, T, u0).v0[list(p_sel)]
    return ValueCurve(T_list, u0_list, p_sel, out)
