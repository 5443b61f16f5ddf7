import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.optimize import minimize_scalar

from oracles import entry_loglik_enum, pois, simulate_oral
from timber_auction.auction_estimation import (BID_COLUMNS, ENTRY_COLUMNS, BidObservation, EntryObservation,
                                               UndefinedShare, ValuationParams, _density_arrays, entry_loglik,
                                               fit_entry, fit_valuation, read_bid_csv, read_entry_csv,
                                               transaction_density, type_share, valuation_loglik, write_bid_csv,
                                               write_entry_csv)
from timber_auction.model import AuctionFormat, BidderType, InvalidInput

MC_TRUE = ValuationParams(1.0, 1.0, 2.0, 3.0)


def entry_rows(rng, n_auctions, lam_l, lam_s, N_range=(5, 15), fmt="oral"):
    out = []
    for k in range(n_auctions):
        N_l, N_s = (int(x) for x in rng.integers(N_range[0], N_range[1] + 1, size=2))
        while True:
            a, b = rng.poisson(lam_l * N_l), rng.poisson(lam_s * N_s)
            if a + b >= 1:
                break
        out.append(EntryObservation(f"e{k}", int(a + b), N_l, N_s, fmt))
    return out


def bid_rows(rng, n_auctions, params, p_hat, n_bidders=(2, 3, 4), v0=(1.0, 1.0)):
    out = []
    for k in range(n_auctions):
        n = int(rng.choice(n_bidders))
        wl, tau = simulate_oral(rng, 1, n, p_hat, (params.sigma_l, params.mu_l * v0[0]),
                                (params.sigma_s, params.mu_s * v0[1]))
        out.append(BidObservation(f"b{k}", n, "logger" if wl[0] else "sawmill", float(tau[0]), *v0))
    return out


# --- entry

def test_entry_single_type_collapse():
    # [TRIVIAL] N_s = 0, n = 1
    obs = [EntryObservation("a", 1, 8, 0, "oral")]
    a = 0.2 * 8
    expected = math.log(pois(1, a) / (1 - pois(0, a)))
    assert entry_loglik(obs, 0.2, 0.3) == pytest.approx(expected, abs=1e-13)


def test_entry_matches_enumeration_example():
    # [DERIVED] direct j-sum
    obs = [EntryObservation("a", 2, 10, 10, "oral")]
    assert entry_loglik(obs, 0.1, 0.15) == pytest.approx(entry_loglik_enum([(2, 10, 10)], 0.1, 0.15), abs=1e-12)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 6), st.integers(0, 20), st.integers(0, 20)).filter(lambda r: r[1] + r[2] > 0),
                min_size=1, max_size=12),
       st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_entry_equals_enumeration(rows, lam_l, lam_s):
    obs = [EntryObservation(str(i), *r, "oral") for i, r in enumerate(rows)]
    ref = entry_loglik_enum(rows, lam_l, lam_s)
    assert entry_loglik(obs, lam_l, lam_s) == pytest.approx(ref, rel=1e-11, abs=1e-11)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 6), st.integers(1, 20)), min_size=1, max_size=10), st.floats(0.01, 1.0))
def test_entry_symmetric_under_label_swap(rows, lam):
    a = [EntryObservation(str(i), n, N, N + 1, "oral") for i, (n, N) in enumerate(rows)]
    b = [EntryObservation(str(i), n, N + 1, N, "oral") for i, (n, N) in enumerate(rows)]
    assert entry_loglik(a, lam, lam) == pytest.approx(entry_loglik(b, lam, lam), rel=1e-13)


@settings(max_examples=30, deadline=None)
@given(st.permutations(list(range(8))))
def test_entry_order_invariant(perm):
    rng = np.random.default_rng(0)
    obs = entry_rows(rng, 8, 0.1, 0.15)
    assert entry_loglik(obs, 0.12, 0.2) == pytest.approx(entry_loglik([obs[i] for i in perm], 0.12, 0.2), rel=1e-14)


def test_entry_negative_rate_rejected():
    with pytest.raises(InvalidInput):
        entry_loglik([EntryObservation("a", 1, 1, 1, "oral")], -0.1, 0.1)


def test_entry_zero_rates_guarded():
    ll = entry_loglik([EntryObservation("a", 1, 3, 3, "oral")], 0.0, 0.0)
    assert np.isfinite(ll) and ll < -1e9


def test_entry_observation_requires_entrant():
    with pytest.raises(InvalidInput):
        EntryObservation("a", 0, 3, 3, "oral")


def test_fit_entry_single_type_matches_grid_search():
    # [DERIVED] one-dimensional grid search of the truncated-Poisson likelihood
    rng = np.random.default_rng(4)
    obs = [EntryObservation(o.auction_id, o.n, o.N_l, 0, "oral") for o in entry_rows(rng, 300, 0.15, 0.0)
           if o.n >= 1]
    rows = [(o.n, o.N_l, 0) for o in obs]
    res = minimize_scalar(lambda lam: -entry_loglik_enum(rows, lam, 0.0), bounds=(1e-3, 2.0), method="bounded",
                          options={"xatol": 1e-10})
    est = fit_entry(obs)[AuctionFormat.ORAL]
    assert est.identified == (True, False)
    assert est.lambda_s == 0.0
    assert est.lambda_l == pytest.approx(res.x, abs=1e-5)


def test_fit_entry_reparameterization():
    # [DERIVED] doubling N and halving the rates leaves the rate-N products unchanged
    rng = np.random.default_rng(5)
    obs = entry_rows(rng, 400, 0.1, 0.15)
    doubled = [EntryObservation(o.auction_id, o.n, 2 * o.N_l, 2 * o.N_s, o.format) for o in obs]
    a = fit_entry(obs)[AuctionFormat.ORAL]
    b = fit_entry(doubled)[AuctionFormat.ORAL]
    assert 2 * b.lambda_l == pytest.approx(a.lambda_l, rel=1e-4)
    assert 2 * b.lambda_s == pytest.approx(a.lambda_s, rel=1e-4)


def test_fit_entry_per_format_and_bootstrap():
    rng = np.random.default_rng(6)
    obs = entry_rows(rng, 200, 0.1, 0.15, fmt="oral") + entry_rows(rng, 200, 0.2, 0.05, fmt="sealed")
    fits = fit_entry(obs, boot_reps=10, seed=2)
    assert set(fits) == {AuctionFormat.ORAL, AuctionFormat.SEALED}
    assert fits[AuctionFormat.SEALED].lambda_l > fits[AuctionFormat.ORAL].lambda_l
    assert np.all(fits[AuctionFormat.ORAL].se > 0)
    again = fit_entry(obs, boot_reps=10, seed=2)
    assert np.array_equal(again[AuctionFormat.ORAL].se, fits[AuctionFormat.ORAL].se)


def test_type_share():
    assert type_share(0.1, 0.1) == 0.5
    assert type_share(0.1, 0.15) == pytest.approx(0.4, abs=1e-15)
    assert type_share(0.0, 0.15) == 0.0
    with pytest.raises(UndefinedShare):
        type_share(0.0, 0.0)


# --- transaction density

def test_identical_types_reduce_to_losing_value_density():
    # [DERIVED] with one distribution, winner-type density summed over types is N (N-1) (1-F) F^(N-2) f
    from scipy.stats import gamma

    th = ValuationParams(1.3, 2.0, 1.3, 2.0)
    for n in (2, 3, 4):
        for tau in (0.5, 2.0, 5.0):
            total = sum(transaction_density(BidObservation("a", n, w, tau, 1.0, 1.0), 0.35, th)
                        for w in ("logger", "sawmill"))
            F, f = gamma.cdf(tau, 2.0, scale=1.3), gamma.pdf(tau, 2.0, scale=1.3)
            assert total == pytest.approx(n * (n - 1) * (1 - F) * F ** (n - 2) * f, rel=1e-12)


@pytest.mark.parametrize("n", [2, 3])
@pytest.mark.parametrize("params", [MC_TRUE, ValuationParams(1.5, 2.0, 1.5, 2.0)])
def test_density_integrates_to_one(n, params):
    total = 0.0
    for w in (True, False):
        val, _ = quad(lambda t: float(_density_arrays(n, w, t, 1.0, 1.0, 0.4, params)), 0, np.inf, limit=200,
                      epsabs=1e-12)
        total += val
    assert abs(total - 1.0) <= 1e-4


def test_density_tail_vanishes():
    obs = BidObservation("a", 3, "sawmill", 1e3, 1.0, 1.0)
    assert transaction_density(obs, 0.4, MC_TRUE) < 1e-100


def test_density_rejects_nonpositive_price():
    with pytest.raises(InvalidInput):
        BidObservation("a", 2, "logger", 0.0, 1.0, 1.0)


def density_vs_simulation(n, params, p_hat, draws, seed, bins=12):
    """Binned density ratio test: returns max |empirical - model| / se over populated bins."""
    rng = np.random.default_rng(seed)
    wl, tau = simulate_oral(rng, draws, n, p_hat, (params.sigma_l, params.mu_l), (params.sigma_s, params.mu_s))
    edges = np.quantile(tau, np.linspace(0.02, 0.98, bins + 1))
    worst = 0.0
    for winner in (True, False):
        counts, _ = np.histogram(tau[wl == winner], bins=edges)
        for k in range(bins):
            a, b = edges[k], edges[k + 1]
            prob, _ = quad(lambda t: float(_density_arrays(n, winner, t, 1.0, 1.0, p_hat, params)), a, b,
                           epsabs=1e-13)
            emp = counts[k] / draws
            se = math.sqrt(prob * (1 - prob) / draws)
            worst = max(worst, abs(emp - prob) / se)
    return worst


@pytest.mark.slow
@pytest.mark.parametrize("n", [2, 3])
@pytest.mark.parametrize("params", [MC_TRUE, ValuationParams(1.5, 2.0, 1.5, 2.0)], ids=["asym", "sym"])
def test_density_matches_simulation(n, params):
    # A5 oracle: 10^6 simulated oral auctions, bin probabilities within 3 Monte Carlo se
    assert density_vs_simulation(n, params, 0.4, 1_000_000, seed=n) <= 3.0


# --- valuation fit

def test_valuation_order_invariant():
    rng = np.random.default_rng(8)
    obs = bid_rows(rng, 50, MC_TRUE, 0.4)
    assert valuation_loglik(obs, 0.4, MC_TRUE) == pytest.approx(valuation_loglik(obs[::-1], 0.4, MC_TRUE), rel=1e-14)


def test_valuation_rejects_single_bidder():
    with pytest.raises(InvalidInput):
        valuation_loglik([BidObservation("a", 1, "logger", 1.0, 1.0, 1.0)], 0.4, MC_TRUE)


def test_valuation_scale_equivariance():
    # [DERIVED] scaling V0 and prices by k leaves (mu, sigma) unchanged
    rng = np.random.default_rng(9)
    obs = bid_rows(rng, 300, MC_TRUE, 0.4)
    k = 7.5
    scaled = [BidObservation(o.auction_id, o.n, o.winner_type, o.tau * k, o.v0_l * k, o.v0_s * k) for o in obs]
    a = fit_valuation(obs, 0.4, n_starts=1)
    b = fit_valuation(scaled, 0.4, n_starts=1)
    np.testing.assert_allclose(a.params.as_array(), b.params.as_array(), rtol=1e-4)


def test_valuation_symmetric_types():
    # [DERIVED] identical types: mu_l and mu_s agree within sampling error
    th = ValuationParams(1.5, 2.0, 1.5, 2.0)
    rng = np.random.default_rng(10)
    obs = bid_rows(rng, 1500, th, 0.5)
    est = fit_valuation(obs, 0.5, init=(1.0, 1.5, 1.0, 1.5), n_starts=2)
    assert est.mu_l == pytest.approx(est.mu_s, rel=0.25)
    assert est.sigma_l == pytest.approx(est.sigma_s, rel=0.25)


def test_valuation_recovers_truth():
    rng = np.random.default_rng(11)
    obs = bid_rows(rng, 2000, MC_TRUE, 0.4)
    est = fit_valuation(obs, 0.4, n_starts=2, seed=1)
    assert est.converged
    np.testing.assert_allclose(est.params.as_array(), MC_TRUE.as_array(), rtol=0.3)


# --- files

def test_csv_round_trips(tmp_path):
    rng = np.random.default_rng(12)
    ent = entry_rows(rng, 5, 0.1, 0.15)
    bids = bid_rows(rng, 5, MC_TRUE, 0.4, v0=(2.5, 1.25))
    assert read_entry_csv(write_entry_csv(ent, tmp_path / "e.csv")) == ent
    assert read_bid_csv(write_bid_csv(bids, tmp_path / "b.csv")) == bids


def test_csv_errors_name_row(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text(",".join(ENTRY_COLUMNS) + "\na,oral,2,5,5\nb,oral,two,5,5\n")
    with pytest.raises(InvalidInput, match=r"e.csv: row 3:"):
        read_entry_csv(p)
    q = tmp_path / "b.csv"
    q.write_text(",".join(BID_COLUMNS) + "\na,2,logger,-1,1,1\n")
    with pytest.raises(InvalidInput, match=r"b.csv: row 2:"):
        read_bid_csv(q)
