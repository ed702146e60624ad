"""Figure rendering for sweeps and chain diagnostics (file output only, Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_STYLE = {
    "figure.figsize": (5.5, 3.6),
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
    "legend.frameon": False,
    "savefig.dpi": 150,
    # fixed metadata keeps repeated renders byte-stable
    "svg.hashsalt": "capalloc",
}

_TITLES = {
    "VaR": "VaR with Euler allocation",
    "ES": "ES with Euler allocation",
    "VaR-ES": "VaR capital, ES-proportional allocation",
}


def plot_sweep(u, portfolio, asset1, asset2, regime: str, path, labels=("asset 1", "asset 2")) -> Path:
    """RORAC against the weight ``u``: portfolio solid, first asset dotted, second dashed."""
    path = Path(path)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ax.plot(u, portfolio, "-", color="black", label="portfolio")
        ax.plot(u, asset1, ":", color="black", label=labels[0])
        ax.plot(u, asset2, "--", color="black", label=labels[1])
        best = int(np.nanargmax(portfolio))
        ax.axvline(u[best], color="0.7", lw=0.8)
        ax.set_xlabel("u")
        ax.set_ylabel("RORAC")
        ax.set_title(_TITLES.get(regime, regime))
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
    return path


def plot_autocorrelation(acf, path, title: str = "retained-state autocorrelation") -> Path:
    path = Path(path)
    lags = np.arange(1, len(acf) + 1)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ax.vlines(lags, 0, acf, color="black")
        ax.plot(lags, acf, "o", color="black", ms=3)
        ax.axhline(0.0, color="0.6", lw=0.8)
        ax.set_xlabel("lag (retained states)")
        ax.set_ylabel("autocorrelation")
        ax.set_title(title)
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
    return path
