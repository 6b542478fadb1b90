"""Delimited-text reports and the matplotlib figures rendered next to them."""

from __future__ import annotations

from typing import Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import DEFAULT_FPR_GRID, MetricsReport, RocCurve, vertical_average

METRIC_COLUMNS = ("Se", "Sp", "Pr", "F1", "G", "MCC", "ACC", "AUC", "EER")


def _cell(v: Optional[float], digits: int = 4) -> str:
    return "NA" if v is None else f"{v:.{digits}f}"


def metrics_table(rows: list) -> str:
    """CSV with one trial per row and a mean +/- std footer.

    ``rows`` holds (name, MetricsReport, auc, eer) tuples; undefined values
    print as NA and stay out of the footer statistics.
    """
    lines = ["trial," + ",".join(METRIC_COLUMNS)]
    columns = {k: [] for k in METRIC_COLUMNS}
    for name, rep, auc, eer_pct in rows:
        vals = rep.as_dict()
        vals["AUC"] = auc
        vals["EER"] = eer_pct
        cells = [name]
        for k in METRIC_COLUMNS:
            digits = 2 if k in ("ACC", "EER") else 4
            cells.append(_cell(vals[k], digits))
            if vals[k] is not None:
                columns[k].append(vals[k])
        lines.append(",".join(cells))
    for stat, fn in (("mean", np.mean), ("std", lambda v: np.std(v, ddof=1) if len(v) > 1 else 0.0)):
        cells = [stat]
        for k in METRIC_COLUMNS:
            digits = 2 if k in ("ACC", "EER") else 4
            cells.append(_cell(float(fn(columns[k])) if columns[k] else None, digits))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def write_text(path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def roc_table(curve: RocCurve) -> str:
    lines = ["fpr,tpr"]
    lines += [f"{f:.6f},{t:.6f}" for f, t in zip(curve.fpr, curve.tpr)]
    return "\n".join(lines) + "\n"


def mean_roc_table(grid: np.ndarray, mean: np.ndarray, std: np.ndarray) -> str:
    lines = ["fpr,mean_tpr,std_tpr"]
    lines += [f"{f:.6f},{m:.6f},{s:.6f}" for f, m, s in zip(grid, mean, std)]
    return "\n".join(lines) + "\n"


def plot_rocs(path, curves: list, names: list, title: str = "ROC") -> None:
    """Per-trial ROC curves plus their vertical average with a std band."""
    fig, ax = plt.subplots(figsize=(6, 6))
    for curve, name in zip(curves, names):
        label = name if curve.auc is None else f"{name} (AUC {curve.auc:.3f})"
        ax.plot(curve.fpr, curve.tpr, lw=1.0, alpha=0.7, label=label)
    if len(curves) > 1:
        grid = DEFAULT_FPR_GRID
        mean, std = vertical_average(curves, grid)
        ax.plot(grid, mean, "k-", lw=2.0, label="vertical average")
        ax.fill_between(grid, np.clip(mean - std, 0, 1), np.clip(mean + std, 0, 1),
                        color="k", alpha=0.15, label="+/- std")
    ax.plot([0, 1], [0, 1], ":", color="gray", lw=0.8)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.set_title(title)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_training(path, log, title: str = "training") -> None:
    """Per-epoch data loss and full-pass top-1 error."""
    epochs = np.arange(1, len(log.losses) + 1)
    fig, ax1 = plt.subplots(figsize=(7, 4))
    ax1.plot(epochs, log.losses, "b-", label="mean data loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss", color="b")
    ax2 = ax1.twinx()
    ax2.plot(epochs, log.errors, "r-", label="top-1 error")
    ax2.set_ylabel("top-1 training error", color="r")
    ax2.set_ylim(0, max(0.05, max(log.errors) * 1.1))
    ax1.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_overlay_png(path, rgb: np.ndarray) -> None:
    plt.imsave(path, rgb)


def surface_table(curve) -> str:
    lines = ["column,row,pre_shift,flag"]
    lines += [
        f"{c},{int(r)},{p:.3f},{int(fl)}"
        for c, (r, p, fl) in enumerate(zip(curve.rows, curve.pre_shift, curve.flags))
    ]
    return "\n".join(lines) + "\n"
