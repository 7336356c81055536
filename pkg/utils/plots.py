# utils/plots.py
"""Precision/recall chart written as a fixed-size SVG."""

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from engine.evaluation import CurvePoint  # noqa: E402

SVG_WIDTH = 800
SVG_HEIGHT = 600
DPI = 72


def save_pr_chart(curves: Mapping[str, Sequence[CurvePoint]], path: str | Path, title: str = "Precision / recall") -> None:
    """One line per curve; metadata and hash salt are pinned so reruns write identical files."""
    plt.rcParams["svg.hashsalt"] = "zonespot"
    fig = plt.figure(figsize=(SVG_WIDTH / DPI, SVG_HEIGHT / DPI), dpi=DPI)
    ax = fig.add_subplot(111)
    ax.set_xlabel("Recall", fontsize=14)
    ax.set_ylabel("Precision", fontsize=14)
    ax.set_xlim(0.0, 1.0)
    ax.set_ylim(0.0, 1.05)
    linestyle = {"linestyle": "-", "linewidth": 2, "marker": "."}
    for name, curve in curves.items():
        ax.plot([p.recall for p in curve], [p.precision for p in curve], label=name, **linestyle)
    if curves:
        ax.legend()
    ax.set_title(title)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
