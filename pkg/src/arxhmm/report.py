"""Figure rendering for study outputs.

Every study writes its tables as CSV; these helpers render the matching
matplotlib figures next to them.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd


def plot_power_curve(table: pd.DataFrame, path) -> None:
    """Rejection rate vs. regime-mean separation, one line per sample size."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for n, grp in table.groupby("n"):
        grp = grp.sort_values("lambda")
        ax.errorbar(
            grp["lambda"],
            grp["rejection_rate"],
            yerr=grp["rejection_se"],
            marker="o",
            capsize=3,
            label=f"n={n}",
        )
    ax.axhline(0.05, color="gray", ls="--", lw=0.8)
    ax.set_xlabel("mean of the extra regime")
    ax.set_ylabel("rejection rate")
    ax.set_ylim(-0.02, 1.02)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_power_study(table: pd.DataFrame, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.bar([str(e) for e in table["ell"]], table["rejection_rate"],
           yerr=table["rejection_se"], capsize=4)
    ax.axhline(0.05, color="gray", ls="--", lw=0.8)
    ax.set_xlabel("regimes under the null")
    ax.set_ylabel("rejection rate")
    ax.set_ylim(0, 1.02)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_selection_study(table: pd.DataFrame, path) -> None:
    """Stacked selection frequencies per method."""
    freq_cols = [c for c in table.columns if c.startswith("freq_ell")]
    fig, ax = plt.subplots(figsize=(6, 4))
    bottom = np.zeros(len(table))
    for c in freq_cols:
        vals = table[c].to_numpy()
        ax.bar(table["method"], vals, bottom=bottom, label=c.replace("freq_ell", "ell="))
        bottom += np.nan_to_num(vals)
    ax.set_ylabel("selection frequency")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_observed_vs_predicted(scatter: pd.DataFrame, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(scatter["observed"], scatter["predicted"], s=18)
    finite = scatter.dropna()
    if len(finite) >= 2:
        lo = float(min(finite["observed"].min(), finite["predicted"].min()))
        hi = float(max(finite["observed"].max(), finite["predicted"].max()))
        ax.plot([lo, hi], [lo, hi], color="gray", ls="--", lw=0.8)
        slope = float(
            (finite["observed"] @ finite["predicted"]) / (finite["observed"] @ finite["observed"])
        )
        ax.set_title(f"regression-through-origin slope {slope:.3f}")
    ax.set_xlabel("observed weekly incidence")
    ax.set_ylabel("predicted weekly incidence")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
