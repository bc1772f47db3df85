"""SVG figures with byte-stable output (fixed hash salt, no date metadata)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {"svg.hashsalt": "steam-eval", "svg.fonttype": "none", "font.size": 9}
_META = {"Date": None, "Creator": None}


def _save(fig, path, description=None):
    meta = dict(_META)
    if description:
        meta["Description"] = description
    fig.savefig(path, format="svg", metadata=meta)
    plt.close(fig)


def plot_roc(curves, path, title: str | None = None, description: str | None = None) -> None:
    """One ROC polyline per entry, with an optional shaded pointwise band.

    Parameters
    ----------
    curves : sequence of dict
        Keys ``label``, ``fpr``, ``tpr`` and optionally ``band`` as
        ``(fpr_grid, lower, upper)``.
    description : str, optional
        Embedded in the SVG metadata, e.g. the run configuration.
    """
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.5, 4.5))
        ax.plot([0, 1], [0, 1], ls=":", color="0.6", lw=1, label="chance")
        for i, c in enumerate(curves):
            color = f"C{i}"
            order = np.lexsort((np.asarray(c["tpr"]), np.asarray(c["fpr"])))
            ax.plot(np.asarray(c["fpr"])[order], np.asarray(c["tpr"])[order],
                    color=color, lw=1.5, label=c["label"])
            if c.get("band") is not None:
                u, lo, hi = c["band"]
                ax.fill_between(u, lo, hi, color=color, alpha=0.2, lw=0,
                                label=f"{c['label']} 95% band")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.01)
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
        ax.set_aspect("equal")
        if title:
            ax.set_title(title)
        ax.legend(loc="lower right", frameon=False)
        fig.tight_layout()
        _save(fig, path, description)


def plot_equivalent_labels(rows, path, measure: str = "auc", description: str | None = None) -> None:
    """Grouped bars of equivalent target-label counts per scenario and method."""
    rows = [r for r in rows if r["measure"] == measure]
    scenarios = list(dict.fromkeys(r["scenario"] for r in rows))
    methods = list(dict.fromkeys(r["method"] for r in rows))
    width = 0.8 / max(len(methods), 1)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(1.6 + 1.4 * len(scenarios), 3.4))
        x = np.arange(len(scenarios))
        for j, m in enumerate(methods):
            vals = [next((r["equivalent_labels"] for r in rows
                          if r["scenario"] == s and r["method"] == m), np.nan) for s in scenarios]
            ax.bar(x + (j - (len(methods) - 1) / 2) * width, vals, width, label=m)
        ax.set_xticks(x, scenarios, rotation=20, ha="right")
        ax.set_ylabel(f"equivalent target labels ({measure})")
        ax.legend(frameon=False)
        fig.tight_layout()
        _save(fig, path, description)
