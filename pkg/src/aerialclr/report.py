"""Offline report rendering: training curves and a results table.

Reads metrics.csv files from one or more run directories and results.csv
rows, then writes static PNG figures (loss curve overlay, kNN accuracy
overlay, results table) plus a summary CSV into a report directory.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .dataio import read_metrics_csv, read_results  # noqa: E402

PLOT_STYLE = {
    "figure.figsize": (7.0, 4.5),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 10,
}


def _run_name(run_dir) -> str:
    return Path(run_dir).name


def plot_loss_curves(run_dirs: list, out_path):
    """One loss-vs-step line per run directory, overlaid."""
    with plt.rc_context(PLOT_STYLE):
        fig, ax = plt.subplots()
        for run_dir in run_dirs:
            rows = read_metrics_csv(Path(run_dir) / "metrics.csv")
            ax.plot([r["step"] for r in rows], [r["loss"] for r in rows],
                    label=_run_name(run_dir), linewidth=1.0)
        ax.set_xlabel("step")
        ax.set_ylabel("training loss")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out_path, dpi=150)
        plt.close(fig)


def plot_knn_curves(run_dirs: list, out_path) -> int:
    """kNN monitor accuracy per epoch, overlaid; returns curves drawn."""
    drawn = 0
    with plt.rc_context(PLOT_STYLE):
        fig, ax = plt.subplots()
        for run_dir in run_dirs:
            rows = read_metrics_csv(Path(run_dir) / "metrics.csv")
            pts = [(r["epoch"], r["knn_acc"]) for r in rows if r["knn_acc"] is not None]
            if not pts:
                continue
            ax.plot([p[0] for p in pts], [100.0 * p[1] for p in pts],
                    marker="o", markersize=3, linewidth=1.0,
                    label=_run_name(run_dir))
            drawn += 1
        ax.set_xlabel("epoch")
        ax.set_ylabel("kNN accuracy (%)")
        if drawn:
            ax.legend()
        fig.tight_layout()
        fig.savefig(out_path, dpi=150)
        plt.close(fig)
    return drawn


TABLE_HEADER = ("Model", "Mode", "Fraction", "Acc", "Prec", "Rec")


def summarize_results(results_rows: list[dict]) -> list[tuple]:
    """One table line per (run, mode, fraction), percentages to one decimal."""
    lines = []
    for r in results_rows:
        lines.append((r["run_id"], r["mode"], f"{r['fraction']:g}",
                      f"{100.0 * r['top1']:.1f}", f"{100.0 * r['prec_fg']:.1f}",
                      f"{100.0 * r['rec_fg']:.1f}"))
    return lines


def render_results_table(results_rows: list[dict], out_png, out_csv):
    lines = summarize_results(results_rows)
    with open(out_csv, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(TABLE_HEADER)
        writer.writerows(lines)
    with plt.rc_context(PLOT_STYLE):
        fig, ax = plt.subplots(figsize=(8.0, 0.5 + 0.35 * max(1, len(lines))))
        ax.axis("off")
        table = ax.table(cellText=[list(l) for l in lines] or [["-"] * 6],
                         colLabels=TABLE_HEADER, loc="center")
        table.auto_set_font_size(False)
        table.set_fontsize(9)
        fig.tight_layout()
        fig.savefig(out_png, dpi=150)
        plt.close(fig)


def build_report(run_dirs: list, results_path, out_dir) -> dict:
    """Render every report artifact; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"loss": out / "loss_curves.png"}
    plot_loss_curves(run_dirs, paths["loss"])
    paths["knn"] = out / "knn_curves.png"
    plot_knn_curves(run_dirs, paths["knn"])
    if results_path is not None and Path(results_path).exists():
        rows = read_results(results_path)
        paths["table_png"] = out / "results_table.png"
        paths["table_csv"] = out / "results_table.csv"
        render_results_table(rows, paths["table_png"], paths["table_csv"])
    return paths
