"""Delimited report output plus matplotlib figures rendered alongside it."""

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def write_rows(rows, path, delimiter="\t"):
    """Delimiter-separated report rows; one header line from the dict keys."""
    if not rows:
        raise ValueError("no rows to write")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()),
                                delimiter=delimiter)
        writer.writeheader()
        writer.writerows(rows)
    return path


def format_matrix(matrix):
    lines = [f"patch sparsity: {100 * matrix.sparsity:.1f}%"]
    label = "occluded-dense" if matrix.occlusion else "dense"
    lines.append(f"{'model':<10} {label:>15} {'sparse':>10}")
    for row in matrix.rows():
        dense = "-" if row["dense_acc"] is None else f"{row['dense_acc']:.2f}"
        sparse = "-" if row["sparse_acc"] is None else f"{row['sparse_acc']:.2f}"
        lines.append(f"{row['model']:<10} {dense:>15} {sparse:>10}")
    return "\n".join(lines)


def plot_matrix(matrix, path):
    """Grouped bars of the accuracy matrix."""
    rows = matrix.rows()
    names = [r["model"] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    width = 0.38
    for off, key, label in ((-width / 2, "dense_acc",
                             "occluded dense" if matrix.occlusion else "dense"),
                            (width / 2, "sparse_acc", "sparse")):
        xs, ys = [], []
        for i, r in enumerate(rows):
            if r[key] is not None:
                xs.append(i + off)
                ys.append(r[key])
        if ys:
            ax.bar(xs, ys, width, label=label)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names)
    ax.set_ylabel("top-1 accuracy (%)")
    ax.set_title(f"patch sparsity {100 * matrix.sparsity:.1f}%")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_history(histories, path, labels=None):
    """Training-loss and accuracy curves for one or more runs."""
    if isinstance(histories, dict):
        labels = list(histories.keys())
        histories = list(histories.values())
    elif labels is None:
        labels = [f"run {i}" for i in range(len(histories))]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.2))
    for hist, label in zip(histories, labels):
        epochs = [h["epoch"] for h in hist]
        ax1.plot(epochs, [h["loss"] for h in hist], label=label)
        ax2.plot(epochs, [h["train_acc"] for h in hist], label=label)
    ax1.set_xlabel("epoch"); ax1.set_ylabel("loss")
    ax2.set_xlabel("epoch"); ax2.set_ylabel("train accuracy (%)")
    ax1.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_macs(points, path):
    """MACs ratio vs patch sparsity curve; points = [(sparsity, ratio), ...]."""
    points = sorted(points)
    fig, ax = plt.subplots(figsize=(4.2, 3.2))
    ax.plot([100 * s for s, _ in points], [r for _, r in points], marker="o")
    ax.set_xlabel("patch sparsity (%)")
    ax.set_ylabel("sparse / dense MACs")
    ax.set_ylim(0, 1.05)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
