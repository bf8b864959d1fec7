"""Score-report serialization and the figures rendered alongside it.

Reports exist in two synchronized forms: a JSON document (per-case scores,
skipped cases, aggregates) and a CSV mirror with one row per case followed
by aggregate rows. The figure helpers render matplotlib summaries next to
the delimited output: a per-category metric chart for benchmark reports, a
strength-sweep curve, and contact sheets of generated letters.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .bench import CATEGORIES, METRIC_KEYS

CSV_FIELDS = ("row_type", "index", "characters", "category", "language",
              "desk_class", "n") + METRIC_KEYS


def write_report_json(report: dict, path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def write_report_csv(report: dict, path) -> None:
    """One `case` row per scored case, then `category`/`overall` aggregate rows."""
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        writer.writeheader()
        for row in report["cases"]:
            writer.writerow({"row_type": "case",
                             **{k: row.get(k, "") for k in CSV_FIELDS if k != "row_type"}})
        agg = report["aggregates"]
        for cat, stats in agg.get("by_category", {}).items():
            writer.writerow({"row_type": "category", "category": cat, "n": stats["n"],
                             **{k: stats[k] for k in METRIC_KEYS}})
        overall = agg["overall"]
        if overall.get("n"):
            writer.writerow({"row_type": "overall", "n": overall["n"],
                             **{k: overall[k] for k in METRIC_KEYS}})


def read_report_csv(path) -> list[dict]:
    with open(Path(path), newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def render_category_figure(report: dict, path) -> None:
    """Grouped bars of the three metrics per category plus the overall mean."""
    agg = report["aggregates"]
    labels = [c for c in CATEGORIES if c in agg.get("by_category", {})] + ["Overall"]
    if not agg["overall"].get("n"):
        labels = []
    fig, ax = plt.subplots(figsize=(7.5, 3.6))
    if labels:
        series = {k: [] for k in METRIC_KEYS}
        for lab in labels:
            stats = agg["overall"] if lab == "Overall" else agg["by_category"][lab]
            for k in METRIC_KEYS:
                series[k].append(stats[k])
        x = np.arange(len(labels))
        width = 0.26
        for i, k in enumerate(METRIC_KEYS):
            ax.bar(x + (i - 1) * width, series[k], width, label=k)
        ax.set_xticks(x)
        ax.set_xticklabels(labels, rotation=20, ha="right")
        ax.set_ylabel("score")
        ax.legend(fontsize=8)
    else:
        ax.text(0.5, 0.5, "no scored cases", ha="center", va="center")
        ax.set_axis_off()
    ax.set_title("masked similarity and consistency by category")
    fig.tight_layout()
    fig.savefig(Path(path), dpi=120)
    plt.close(fig)


def render_strength_sweep_figure(strengths, flexibility, path) -> None:
    """Boundary flexibility as a function of regeneration noise strength."""
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    ax.plot(strengths, flexibility, marker="o")
    ax.set_xlabel("noise strength")
    ax.set_ylabel("boundary flexibility")
    ax.set_title("refinement strength sweep")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(Path(path), dpi=120)
    plt.close(fig)


def render_contact_sheet(images, path, ncols: int = 4, labels=None) -> None:
    """Grid of RGB images saved as one PNG."""
    n = len(images)
    ncols = max(1, min(ncols, n))
    nrows = (n + ncols - 1) // ncols
    fig, axes = plt.subplots(nrows, ncols, figsize=(2.1 * ncols, 2.1 * nrows),
                             squeeze=False)
    for k in range(nrows * ncols):
        ax = axes[k // ncols][k % ncols]
        ax.set_axis_off()
        if k < n:
            ax.imshow(images[k].data)
            if labels is not None and k < len(labels):
                ax.set_title(str(labels[k]), fontsize=8)
    fig.tight_layout()
    fig.savefig(Path(path), dpi=120)
    plt.close(fig)
