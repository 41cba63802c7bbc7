"""
Boxplot figures for Monte Carlo correlation estimates.

Usage:
    from fusionkit.plotting import boxplot_pairs
    fig = boxplot_pairs(estimates, targets, title="n_rec=400, n_don=400")
    fig.savefig("yz_n1.png")
"""

from __future__ import annotations

from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# colorblind-safe (Okabe-Ito)
METHOD_COLORS = {
    "rhd": "#D55E00",
    "pmm": "#0072B2",
    "gower": "#009E73",
}

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def apply_style():
    plt.rcParams.update(STYLE)


def boxplot_pairs(estimates: Mapping[tuple[str, str], np.ndarray], pairs: Sequence[str],
                  methods: Sequence[str], true_values: Mapping[str, float],
                  cia_values: Mapping[str, float | None] | None = None, title: str = ""):
    """One panel per pair with a box per method, true value and CIA benchmark marked.

    ``estimates`` maps ``(method, pair)`` to the replication estimates.
    """
    apply_style()
    n = len(pairs)
    fig, axes = plt.subplots(1, n, figsize=(2.2 * n + 0.5, 3.2), sharey=False, squeeze=False)
    for ax, pair in zip(axes[0], pairs):
        data = []
        for m in methods:
            est = np.asarray(estimates.get((m, pair), []), dtype=float)
            data.append(est[~np.isnan(est)])
        bp = ax.boxplot(data, patch_artist=True, widths=0.6)
        ax.set_xticks(range(1, len(methods) + 1), [m.upper() for m in methods])
        for patch, m in zip(bp["boxes"], methods):
            patch.set_facecolor(METHOD_COLORS.get(m, "#999999"))
            patch.set_alpha(0.6)
        for med in bp["medians"]:
            med.set_color("black")
        ax.axhline(true_values[pair], color="black", lw=1.0, ls="-", label="true")
        cia = (cia_values or {}).get(pair)
        if cia is not None:
            ax.axhline(cia, color="grey", lw=1.0, ls="--", label="CIA")
        ax.set_title(pair.replace("~", " vs "))
    axes[0][0].set_ylabel("estimated correlation")
    handles, labels = axes[0][0].get_legend_handles_labels()
    if handles:
        axes[0][-1].legend(handles, labels, loc="lower right", frameon=False)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return fig


def save(fig, path):
    # no timestamp metadata, so reruns produce identical files
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
