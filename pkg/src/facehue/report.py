"""Figure and table rendering for training and evaluation runs.

Reports pair delimited output (CSV / line-delimited JSON) with rendered
matplotlib figures in a figures/ directory next to them.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import MetricsReport

_LOSS_KEYS = ("total", "l1", "adv", "cyc", "perc", "disc")


def save_loss_curves(rows: list[dict], path: str | Path) -> Path:
    """Training-loss curves from log rows (one dict per step)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    steps = [r["step"] for r in rows]
    fig, axes = plt.subplots(2, 3, figsize=(12, 6), sharex=True)
    for ax, key in zip(axes.ravel(), _LOSS_KEYS):
        ax.plot(steps, [r.get(key, 0.0) for r in rows], lw=0.8)
        ax.set_title(key)
        ax.set_xlabel("step")
    fig.suptitle("training losses")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def write_per_image_csv(rows: list[dict], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        path.write_text("")
        return path
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    return path


def save_metric_histograms(rows: list[dict], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    keys = ("psnr", "ssim", "cf")
    fig, axes = plt.subplots(1, len(keys), figsize=(12, 3.2))
    for ax, key in zip(axes, keys):
        vals = [r[key] for r in rows if key in r]
        ax.hist(vals, bins=min(20, max(3, len(vals) // 2)), color="#4878cf")
        ax.set_title(f"{key} (n={len(vals)})")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_comparison_grid(
    preds: list[np.ndarray], reals: list[np.ndarray], path: str | Path, max_cols: int = 8
) -> Path:
    """Top row: generated; bottom row: ground truth."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = min(len(preds), max_cols)
    fig, axes = plt.subplots(2, n, figsize=(1.6 * n, 3.4))
    axes = np.asarray(axes).reshape(2, n)
    for j in range(n):
        axes[0, j].imshow(preds[j])
        axes[1, j].imshow(reals[j])
        for i in (0, 1):
            axes[i, j].set_axis_off()
    axes[0, 0].set_title("generated", loc="left", fontsize=9)
    axes[1, 0].set_title("ground truth", loc="left", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def write_eval_outputs(
    out_dir: Path,
    report: MetricsReport,
    rows: list[dict],
    preds_rgb: list[np.ndarray],
    reals_rgb: list[np.ndarray],
) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.json").write_text(report.to_json())
    write_per_image_csv(rows, out_dir / "per_image.csv")
    save_metric_histograms(rows, out_dir / "figures" / "metric_histograms.png")
    if preds_rgb:
        save_comparison_grid(preds_rgb, reals_rgb, out_dir / "figures" / "samples.png")
