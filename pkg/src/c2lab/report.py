"""Rendering of metrics tables and robustness matrices.

Every renderer has two outputs: an aligned plain-text table (also written
as CSV by the callers) and a matplotlib figure saved next to the delimited
files.  Figures use the Agg backend so report runs work headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import EvalMatrix, EvalMetrics


def format_metrics_table(rows: list[tuple[str, EvalMetrics]]) -> str:
    """Columns: attack label, accuracy, precision, attack success (1 - recall)."""
    header = ("Attack", "Accuracy", "Precision", "Attack Success")
    width = max(len(header[0]), *(len(name) for name, _ in rows)) if rows else len(header[0])
    lines = [f"{header[0]:<{width}}  {header[1]:>9}  {header[2]:>9}  {header[3]:>14}"]
    lines.append("-" * len(lines[0]))
    for name, m in rows:
        lines.append(
            f"{name:<{width}}  {100 * m.accuracy:>8.1f}%  {100 * m.precision:>8.1f}%  "
            f"{100 * m.attack_success:>13.1f}%"
        )
    return "\n".join(lines) + "\n"


def write_metrics_csv(path, rows: list[tuple[str, EvalMetrics]]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("attack,accuracy,precision,attack_success,tp,fp,tn,fn\n")
        for name, m in rows:
            fh.write(f"{name},{m.accuracy!r},{m.precision!r},{m.attack_success!r},"
                     f"{m.tp},{m.fp},{m.tn},{m.fn}\n")


def read_metrics_csv(path) -> list[tuple[str, EvalMetrics]]:
    import csv

    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append((rec["attack"], EvalMetrics(
                tp=int(rec["tp"]), fp=int(rec["fp"]),
                tn=int(rec["tn"]), fn=int(rec["fn"]))))
    return rows


def format_matrix(matrix: EvalMatrix, title: str = "") -> str:
    """Aligned text rendering with cells at 0.1 percentage point."""
    label_w = max(len("Model"), *(len(r) for r in matrix.row_ids))
    col_w = [max(len(c), 6) for c in matrix.col_ids]
    lines = []
    if title:
        lines.append(title)
    head = f"{'Model':<{label_w}}"
    for c, w in zip(matrix.col_ids, col_w):
        head += f"  {c:>{w}}"
    lines.append(head)
    lines.append("-" * len(head))
    for name, row in zip(matrix.row_ids, matrix.cells):
        line = f"{name:<{label_w}}"
        for v, w in zip(row, col_w):
            line += f"  {v:>{w - 1}.1f}%"
        lines.append(line)
    return "\n".join(lines) + "\n"


def save_matrix_heatmap(matrix: EvalMatrix, path, title: str = "Misclassified malicious flows (%)") -> None:
    fig, ax = plt.subplots(
        figsize=(1.1 * len(matrix.col_ids) + 3, 0.5 * len(matrix.row_ids) + 2))
    im = ax.imshow(matrix.cells, cmap="viridis", vmin=0, vmax=100)
    ax.set_xticks(range(len(matrix.col_ids)), matrix.col_ids, rotation=45, ha="right")
    ax.set_yticks(range(len(matrix.row_ids)), matrix.row_ids)
    for r in range(len(matrix.row_ids)):
        for c in range(len(matrix.col_ids)):
            v = matrix.cells[r, c]
            ax.text(c, r, f"{v:.1f}", ha="center", va="center",
                    color="white" if v < 60 else "black", fontsize=7)
    ax.set_title(title)
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_metrics_bars(rows: list[tuple[str, EvalMetrics]], path) -> None:
    names = [name for name, _ in rows]
    acc = [100 * m.accuracy for _, m in rows]
    prec = [100 * m.precision for _, m in rows]
    atk = [100 * m.attack_success for _, m in rows]
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(max(7, 0.65 * len(names) + 2), 4.5))
    ax.bar(x - 0.25, acc, width=0.25, label="Accuracy")
    ax.bar(x, prec, width=0.25, label="Precision")
    ax.bar(x + 0.25, atk, width=0.25, label="Attack success")
    ax.set_xticks(x, names, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("%")
    ax.set_ylim(0, 100)
    ax.legend()
    ax.set_title("Detection and evasion per attack")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_duration_cdf(curves: dict[str, np.ndarray], path) -> None:
    """Empirical CDFs of normalized flow duration, one curve per attack."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for name in curves:
        values = np.sort(np.asarray(curves[name]))
        y = np.arange(1, len(values) + 1) / len(values)
        ax.step(values, y, where="post", label=name)
    ax.set_xlabel("Normalized flow duration")
    ax.set_ylabel("CDF")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.02)
    ax.legend(fontsize=8)
    ax.set_title("Flow duration after multiplier attacks")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_loss_curve(epoch_losses: list[float], path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(range(1, len(epoch_losses) + 1), epoch_losses, marker="o", ms=3)
    ax.set_xlabel("Epoch")
    ax.set_ylabel("Mean training loss")
    ax.set_title("Training loss")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
