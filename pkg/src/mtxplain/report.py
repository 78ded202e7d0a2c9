"""Rendering of run artifacts: CSV tables and matplotlib figures.

Every figure is written to a file; nothing opens a window (Agg backend).
The CSV files sit next to the PNGs so a run directory is self-describing.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def write_loss_csv(trace, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_joint_loss"])
        for epoch, value in enumerate(trace):
            writer.writerow([epoch, f"{value:.10g}"])


def save_loss_curve(trace, path, title: str = "training loss") -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(len(trace)), trace, marker="o", markersize=3)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean joint loss")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _fold_rows(kfold_report: dict):
    """Flatten fold reports into rows of headline numbers."""
    rows = []
    for fold in kfold_report["folds"]:
        row = {
            "fold": fold["fold"],
            "bully_accuracy": fold["bully"]["accuracy"],
            "bully_macro_f1": fold["bully"]["macro_f1"],
        }
        if "sentiment" in fold:
            row["sentiment_accuracy"] = fold["sentiment"]["accuracy"]
            row["sentiment_macro_f1"] = fold["sentiment"]["macro_f1"]
        if "target" in fold:
            row["target_accuracy"] = fold["target"]["accuracy"]
            row["target_macro_f1"] = fold["target"]["macro_f1"]
        if "rationale" in fold:
            row["rationale_jaccard"] = fold["rationale"]["jaccard"]
            row["rationale_hamming"] = fold["rationale"]["hamming"]
            row["rationale_ros"] = fold["rationale"]["ros"]
        rows.append(row)
    return rows


def write_fold_csv(kfold_report: dict, path) -> None:
    rows = _fold_rows(kfold_report)
    if not rows:
        return
    fields = list(rows[0].keys())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v)
                             for k, v in row.items()})


def save_fold_metrics(kfold_report: dict, path) -> None:
    rows = _fold_rows(kfold_report)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    folds = [r["fold"] for r in rows]
    for key in rows[0]:
        if key == "fold":
            continue
        ax.plot(folds, [r[key] for r in rows], marker="o", markersize=4, label=key)
    ax.set_xlabel("fold")
    ax.set_ylabel("score")
    ax.set_xticks(folds)
    ax.set_title("per-fold scores")
    ax.legend(fontsize=7, loc="best")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_stats_outputs(stats, out_dir) -> list:
    """Dataset statistics as CSVs plus label-distribution figures.

    Returns the list of paths written.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    counts_path = out_dir / "counts.csv"
    with open(counts_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["group", "label", "count"])
        writer.writerow(["bully", "bully", stats.bully])
        writer.writerow(["bully", "non-bully", stats.non_bully])
        for label, count in stats.sentiment_counts.items():
            writer.writerow(["sentiment", label, count])
        for label, count in stats.target_counts.items():
            writer.writerow(["target", label, count])
    written.append(counts_path)

    words_path = out_dir / "top_rationale_words.csv"
    with open(words_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["word", "share_of_bully_posts_pct"])
        for word, pct in stats.top_rationale_words:
            writer.writerow([word, f"{pct:.4f}"])
    written.append(words_path)

    for name, counts in (("sentiment", stats.sentiment_counts),
                         ("target", stats.target_counts)):
        fig, ax = plt.subplots(figsize=(7, 4))
        labels = list(counts.keys())
        ax.bar(range(len(labels)), [counts[l] for l in labels], color="#4878a8")
        ax.set_xticks(range(len(labels)))
        ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=7)
        ax.set_ylabel("posts")
        ax.set_title(f"{name} distribution")
        fig.tight_layout()
        png = out_dir / f"{name}_histogram.png"
        fig.savefig(png, dpi=120)
        plt.close(fig)
        written.append(png)
    return written
