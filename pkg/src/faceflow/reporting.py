"""Report rendering: delimited tables plus matplotlib figures.

Every report path writes the numbers as a tab-separated table (and JSON where
the structure is nested) and renders matching figures next to them, so a run
directory is self-describing.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def write_tsv(path, header: Sequence[str], rows: Sequence[Sequence]) -> Path:
    path = Path(path)
    lines = ["\t".join(header)]
    for row in rows:
        lines.append("\t".join(f"{v:.6g}" if isinstance(v, float) else str(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def write_json(path, payload) -> Path:
    path = Path(path)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def save_loss_curves(log_columns: Dict[str, np.ndarray], path) -> Path:
    """Two-panel training curves: generator-side terms and discriminator totals."""
    fig, axes = plt.subplots(1, 2, figsize=(11, 4))
    steps = log_columns["step"]
    for key in ("rec", "adv_g", "adv_f", "cls_f", "tv"):
        if key in log_columns:
            axes[0].plot(steps, log_columns[key], label=key, linewidth=0.9)
    if "lm" in log_columns:
        axes[0].plot(steps, np.asarray(log_columns["lm"]) / 100.0, label="lm / 100", linewidth=0.9)
    axes[0].set_xlabel("step")
    axes[0].set_ylabel("raw term value")
    axes[0].set_yscale("log")
    axes[0].legend(fontsize=8)
    axes[0].set_title("objective terms")
    for key in ("d_total", "g_total", "ema_rec"):
        if key in log_columns:
            axes[1].plot(steps, log_columns[key], label=key, linewidth=0.9)
    axes[1].set_xlabel("step")
    axes[1].set_yscale("log")
    axes[1].legend(fontsize=8)
    axes[1].set_title("weighted totals")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def save_metric_bars(summary: List[dict], path, keys=("fid_like", "faithfulness", "accuracy")) -> Path:
    """Grouped bars per variant for each metric column, with std whiskers."""
    keys = [k for k in keys if k in summary[0]]
    if not keys:
        keys = [k for k, v in summary[0].items() if isinstance(v, float) and not k.endswith("_std")][:3]
    fig, axes = plt.subplots(1, len(keys), figsize=(4 * len(keys), 3.4))
    if len(keys) == 1:
        axes = [axes]
    variants = [row["variant"] for row in summary]
    for ax, key in zip(axes, keys):
        vals = [row[key] for row in summary]
        errs = [row.get(key + "_std", 0.0) for row in summary]
        ax.bar(range(len(variants)), vals, yerr=errs, capsize=3, color="#5b8dbf")
        ax.set_xticks(range(len(variants)))
        ax.set_xticklabels(variants, rotation=20, fontsize=8)
        ax.set_title(key)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def save_sample_grid(rows: List[List[np.ndarray]], path, row_titles: Sequence[str] | None = None) -> Path:
    """Image grid; each row is a list of (3, H, W) arrays in [-1, 1]."""
    n_rows = len(rows)
    n_cols = max(len(r) for r in rows)
    fig, axes = plt.subplots(n_rows, n_cols, figsize=(1.6 * n_cols, 1.7 * n_rows), squeeze=False)
    for i, row in enumerate(rows):
        for j in range(n_cols):
            ax = axes[i][j]
            ax.axis("off")
            if j < len(row):
                img = np.clip((np.asarray(row[j]).transpose(1, 2, 0) + 1.0) / 2.0, 0.0, 1.0)
                ax.imshow(img, interpolation="nearest")
        if row_titles is not None and i < len(row_titles):
            axes[i][0].set_ylabel(row_titles[i], fontsize=8)
            axes[i][0].axis("on")
            axes[i][0].set_xticks([])
            axes[i][0].set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def save_eval_report(summary: List[dict], out_dir, prefix: str = "metrics") -> dict:
    """TSV + JSON + bar figure for a list of per-variant metric rows."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    keys = [k for k in summary[0] if k != "variant"]
    paths = {
        "tsv": write_tsv(out / f"{prefix}.tsv", ["variant"] + keys, [[r["variant"]] + [r[k] for k in keys] for r in summary]),
        "json": write_json(out / f"{prefix}.json", summary),
        "figure": save_metric_bars(summary, out / f"{prefix}.png"),
    }
    return paths
