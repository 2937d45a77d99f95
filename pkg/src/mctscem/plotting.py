"""Learning-curve figures written next to the CSV outputs."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 10,
    "axes.labelsize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}

COLORS = {"mcts-cem": "tab:blue", "cem": "tab:orange", "mcts-random": "tab:green", "random": "tab:gray"}


def plot_learning_curves(curves: Mapping[str, Sequence], path, title: str | None = None) -> Path:
    """Cumulative reward per episode with std error bars, one line per planner.

    ``curves`` maps a label to a sequence of objects with ``episode``,
    ``mean`` and ``std`` attributes.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.2))
        for i, (label, aggs) in enumerate(curves.items()):
            x = [a.episode + 1 for a in aggs]
            ax.errorbar(x, [a.mean for a in aggs], yerr=[a.std for a in aggs], label=label,
                        color=COLORS.get(label, f"C{i}"), marker="o", markersize=3, capsize=3, linewidth=1.2)
        ax.set_xlabel("episode")
        ax.set_ylabel("cumulative reward")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, dpi=120, metadata={"Software": None})
        plt.close(fig)
    return path
