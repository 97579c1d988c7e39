"""Render figures from emitted experiment CSVs.

Reads the delimited outputs of `emit_metrics` (the CSVs stay the data
contract) and writes PNG figures alongside them: the label-presence
histogram, IID accuracy per round for every aggregator found, and
final-round per-class accuracy.
"""

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .harness import AGGREGATORS


def _read_csv(path):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    return rows[0], rows[1:]


def _column(header, rows, name) -> np.ndarray:
    idx = header.index(name)
    return np.array([float(row[idx]) for row in rows])


def render_report(out_dir) -> list:
    """Write the report figures for every aggregator whose summary CSV
    exists in `out_dir`. Returns the figure paths."""
    summaries = {}
    for agg in AGGREGATORS:
        path = os.path.join(out_dir, f"{agg}_summary.csv")
        if os.path.exists(path):
            summaries[agg] = _read_csv(path)
    if not summaries:
        raise FileNotFoundError(f"no *_summary.csv files in {out_dir}")

    paths = []

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for agg, (header, rows) in summaries.items():
        rounds = _column(header, rows, "round")
        mean = _column(header, rows, "iid_accuracy_mean")
        std = _column(header, rows, "iid_accuracy_std")
        ax.plot(rounds, mean, label=agg, linewidth=2)
        ax.fill_between(rounds, mean - std, mean + std, alpha=0.2)
    ax.set_xlabel("round")
    ax.set_ylabel("IID test accuracy")
    ax.set_title("Global model accuracy on the hold-out IID test set")
    ax.grid(True, alpha=0.4)
    ax.legend()
    path = os.path.join(out_dir, "fig_iid_accuracy.png")
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    paths.append(path)

    first_header, first_rows = next(iter(summaries.values()))
    num_classes = sum(1 for name in first_header if name.endswith("_mean") and name.startswith("acc_class_"))
    x = np.arange(num_classes)
    width = 0.8 / len(summaries)
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for i, (agg, (header, rows)) in enumerate(summaries.items()):
        final = rows[-1]
        mean = [float(final[header.index(f"acc_class_{c}_mean")]) for c in range(num_classes)]
        std = [float(final[header.index(f"acc_class_{c}_std")]) for c in range(num_classes)]
        ax.bar(x + (i - (len(summaries) - 1) / 2) * width, mean, width, yerr=std, capsize=3, label=agg)
    ax.set_xticks(x)
    ax.set_xlabel("label")
    ax.set_ylabel("final-round accuracy")
    ax.set_title("Per-class accuracy at the final round")
    ax.grid(True, axis="y", alpha=0.4)
    ax.legend()
    path = os.path.join(out_dir, "fig_per_class_accuracy.png")
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    paths.append(path)

    presence_path = os.path.join(out_dir, "label_presence.csv")
    if os.path.exists(presence_path):
        header, rows = _read_csv(presence_path)
        labels = _column(header, rows, "label").astype(int)
        mean = _column(header, rows, "mean")
        fig, ax = plt.subplots(figsize=(7, 4))
        ax.bar(labels, mean, color="tab:gray")
        ax.set_xticks(labels)
        ax.set_xlabel("label")
        ax.set_ylabel("clients holding the label")
        ax.set_title("Label distribution across training clients (mean over seeds)")
        ax.grid(True, axis="y", alpha=0.4)
        path = os.path.join(out_dir, "fig_label_presence.png")
        fig.savefig(path, dpi=150, bbox_inches="tight")
        plt.close(fig)
        paths.append(path)

    return paths
