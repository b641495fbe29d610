"""Vector-graphic charts for the report path (non-interactive backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["line_chart"]

# fixed metadata keeps the SVG bytes independent of the run date
_SVG_META = {"Date": None, "Creator": None}


def line_chart(path, series, *, xlabel: str, ylabel: str, title: str = "",
               logx: bool = False, logy: bool = False) -> Path:
    """``series`` maps a label to ``(x, y)``; non-positive values are dropped on log axes.

    A chart with nothing left to draw is written with a placeholder note.
    """
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    drawn = 0
    for label, (x, y) in series.items():
        x, y = np.asarray(x, float), np.asarray(y, float)
        keep = np.isfinite(x) & np.isfinite(y)
        if logx:
            keep &= x > 0
        if logy:
            keep &= y > 0
        ax.plot(x[keep], y[keep], marker="o", ms=3, lw=1.2, label=label)
        drawn += int(keep.sum())
    if drawn == 0:
        ax.text(0.5, 0.5, "no plottable data", ha="center", va="center", transform=ax.transAxes)
    else:
        if logx:
            ax.set_xscale("log")
        if logy:
            ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title, fontsize=10)
    ax.grid(True, which="both", lw=0.3, alpha=0.5)
    if len(series) > 1:
        ax.legend(fontsize=8, frameon=False)
    fig.tight_layout()
    plt.rcParams["svg.hashsalt"] = "waveguide"
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)
    return path
