"""Structural model of timber-sale auctions with contract-length dependent values.

Modules: ``dp`` (harvest problem), ``dynamic_estimation`` (nested fixed point
fit of harvest payoffs), ``auction_estimation`` (entry and valuation
likelihoods), ``bidsolver`` (asymmetric first-price equilibrium),
``counterfactual`` (revenue tables), ``montecarlo`` (estimator study) and
``cli``.
"""
__version__ = "0.1.0"

from .model import (ACTION_GRID, AuctionConfig, AuctionFormat, BidderType, CuttingState, DynamicParams, InvalidInput,
                    PriceProcess, TypeSpec, build_gaussian_transition)
from .dp import DpSolution, ccp, continuation_value_curve, simulate_paths, solve_dp
from .bidsolver import BidSystem, ValueDistribution, bid, solve_bid_system
from .counterfactual import RevenueTable, Scenario, revenue_oral, revenue_sealed, sweep
from .montecarlo import McConfig, run_mc

__all__ = [
    "ACTION_GRID", "AuctionConfig", "AuctionFormat", "BidderType", "CuttingState", "DynamicParams", "InvalidInput",
    "PriceProcess", "TypeSpec", "build_gaussian_transition", "DpSolution", "ccp", "continuation_value_curve",
    "simulate_paths", "solve_dp", "BidSystem", "ValueDistribution", "bid", "solve_bid_system", "RevenueTable",
    "Scenario", "revenue_oral", "revenue_sealed", "sweep", "McConfig", "run_mc",
]
