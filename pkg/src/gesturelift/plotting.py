"""PNG figures written next to the CSV reports (headless Agg backend)."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# no Software/date chunks, so repeated runs produce identical files
_PNG_META = {"Software": None}


def _numeric(rows, key):
    out = []
    for r in rows:
        v = r.get(key)
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            out.append(float(v))
        else:
            out.append(math.nan)
    return out


def plot_training_curve(rows, path, title="training"):
    """Line plot of every numeric column against the first column (epoch or step)."""
    rows = [r for r in rows if isinstance(next(iter(r.values())), (int, float))]
    if not rows:
        return None
    keys = list(rows[0])
    x_key, series = keys[0], keys[1:]
    xs = _numeric(rows, x_key)
    fig, ax = plt.subplots(figsize=(6, 4), dpi=100)
    for key in series:
        ys = _numeric(rows, key)
        if all(math.isnan(y) for y in ys):
            continue
        ax.plot(xs, ys, marker="o", markersize=3, label=key)
    ax.set_xlabel(x_key)
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_metric_bars(rows, path, title="metrics"):
    """One panel per metric with a bar per setting; ``rows`` hold setting/metric/value."""
    settings = list(dict.fromkeys(r["setting"] for r in rows))
    metrics = list(dict.fromkeys(r["metric"] for r in rows))
    value = {(r["setting"], r["metric"]): float(r["value"]) for r in rows}
    fig, axes = plt.subplots(1, len(metrics), figsize=(4 * len(metrics), 3.5), dpi=100, squeeze=False)
    for ax, metric in zip(axes[0], metrics):
        ys = [value.get((s, metric), math.nan) for s in settings]
        ax.bar(range(len(settings)), ys, color=[f"C{i}" for i in range(len(settings))])
        ax.set_xticks(range(len(settings)))
        ax.set_xticklabels(settings, rotation=20, ha="right", fontsize=8)
        ax.set_title(metric)
        ax.grid(axis="y", alpha=0.3)
    fig.suptitle(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
    return path
