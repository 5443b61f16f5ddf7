"""Report figures, rendered off-screen to files."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .bidsolver import BidSystem, bid

_STYLE = {"linewidth": 1.4}
_COLORS = {"logger": "#1f77b4", "sawmill": "#d62728"}


def _new(width=6.0, height=3.8):
    fig = Figure(figsize=(width, height), dpi=120)
    FigureCanvasAgg(fig)
    return fig, fig.add_subplot(1, 1, 1)


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    # no timestamps in the metadata so reruns are byte-identical
    fig.savefig(path, metadata={"Software": None} if path.suffix == ".png" else None)
    return path


def plot_value_curves(curve, path, price_pos: int = 0, label: str = "") -> Path:
    """V0 against contract length, one line per tract size, at one initial price."""
    fig, ax = _new()
    for j, u0 in enumerate(curve.sizes):
        ax.plot(curve.lengths, curve.values[:, j, price_pos], marker="o", label=f"u0 = {u0:g}", **_STYLE)
    ax.set_xlabel("contract length (quarters)")
    ax.set_ylabel("continuation value V0")
    ax.set_title(f"{label} V0, price index {curve.price_idx[price_pos]}".strip())
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_bid_functions(system: BidSystem, path, points: int = 200, title: str = "") -> Path:
    """Equilibrium bids against values for each type, with the 45-degree line."""
    fig, ax = _new()
    v = np.linspace(system.v_lo, system.v_hi, points)
    for m in system.types:
        ax.plot(v, bid(system, m, v), color=_COLORS[m.value], label=f"{m.value} (n={system.counts[m]})", **_STYLE)
    ax.plot(v, v, color="0.6", linestyle=":", linewidth=1.0, label="bid = value")
    ax.set_xlabel("value")
    ax.set_ylabel("bid")
    ax.set_ylim(system.v_lo, 1.05 * system.b_hi)
    ax.set_title(title)
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_revenue(table, path, tract_size: str | None = None) -> Path:
    """Expected revenue against contract length, one line per (format, composition)."""
    fig, ax = _new(6.5, 4.2)
    lengths = table.lengths
    for size, fmt, comp, *rev in table.wide():
        if tract_size is not None and size != tract_size:
            continue
        style = "-" if fmt == "oral" else "--"
        ax.plot(lengths, rev, linestyle=style, marker="o", label=f"{size} {fmt} {comp}", **_STYLE)
    ax.set_xlabel("contract length (quarters)")
    ax.set_ylabel("expected revenue")
    ax.legend(frameon=False, fontsize=7, ncol=2)
    return _save(fig, path)


def plot_mc_errors(report, path) -> Path:
    """Bias and RMSE of each parameter relative to its true value."""
    fig, ax = _new()
    names, truth, bias, rmse = zip(*report.table_rows())
    x = np.arange(len(names))
    scale = np.abs(np.asarray(truth, float))
    ax.bar(x - 0.2, np.asarray(bias) / scale, width=0.4, label="bias / truth")
    ax.bar(x + 0.2, np.asarray(rmse) / scale, width=0.4, label="RMSE / truth")
    ax.axhline(0, color="0.3", linewidth=0.8)
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=45, ha="right")
    ax.legend(frameon=False)
    return _save(fig, path)
