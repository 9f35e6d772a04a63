"""Report figures: conservation error over time and mean-error bars."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

VARIANT_STYLE = {
    "pinn": dict(color="tab:red", label="PINN"),
    "pinn_sc": dict(color="tab:orange", label="PINN-SC"),
    "pinn_proj": dict(color="tab:blue", label="PINN-Proj"),
}
FLOOR = 1e-18  # keeps exact zeros visible on log axes


def new_figure(width=6.0, height=None):
    height = height or width * 0.62
    fig, ax = plt.subplots(figsize=(width, height))
    ax.tick_params(labelsize=9)
    return fig, ax


def read_c_series(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    t = np.array([float(r["t"]) for r in rows])
    err = np.array([float(r["abs_err"]) for r in rows])
    return t, err


def collect_series(in_dir):
    """``{dataset: {variant: [(t, abs_err), ...]}}`` from the series files."""
    out = defaultdict(lambda: defaultdict(list))
    for p in sorted(Path(in_dir).glob("c_series_*.csv")):
        stem = p.stem[len("c_series_"):]
        for variant in sorted(VARIANT_STYLE, key=len, reverse=True):
            tag = f"_{variant}_"
            if tag in stem:
                dataset, trial = stem.rsplit(tag, 1)
                if trial.isdigit():
                    out[dataset][variant].append(read_c_series(p))
                break
    return out


def plot_c_error(series: dict, dataset: str, path):
    """|c(t) - c_true| on a log axis, one line per trial."""
    fig, ax = new_figure()
    for variant, style in VARIANT_STYLE.items():
        for k, (t, err) in enumerate(series.get(variant, [])):
            ax.semilogy(t, np.maximum(err, FLOOR), color=style["color"], lw=1.0, alpha=0.8,
                        label=style["label"] if k == 0 else None)
    ax.set_xlabel("t")
    ax.set_ylabel("|c(t) - c|")
    ax.set_title(dataset)
    ax.legend(fontsize=8, frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_mean_errors(header, table, path):
    """Grouped bars of mean error_u and error_c per dataset and variant."""
    variants = [v for v in VARIANT_STYLE if f"{v}_error_u" in header]
    fig, axes = plt.subplots(1, 2, figsize=(9.0, 3.6))
    width = 0.8 / max(len(variants), 1)
    pos = np.arange(len(table))
    for ax, metric in zip(axes, ("error_u", "error_c")):
        for i, v in enumerate(variants):
            vals = [float(row[f"{v}_{metric}"]) for row in table]
            vals = np.maximum(np.nan_to_num(vals, nan=FLOOR), FLOOR)
            ax.bar(pos + i * width, vals, width, **VARIANT_STYLE[v])
        ax.set_yscale("log")
        ax.set_xticks(pos + width * (len(variants) - 1) / 2)
        ax.set_xticklabels([row["dataset"] for row in table])
        ax.set_title(f"mean {metric}")
    axes[0].legend(fontsize=8, frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_report(in_dir, header, table) -> list:
    """Write all figures under ``<in_dir>/figures``; returns their paths."""
    fig_dir = Path(in_dir) / "figures"
    fig_dir.mkdir(exist_ok=True)
    paths = []
    if table:
        p = fig_dir / "mean_errors.png"
        plot_mean_errors(header, table, p)
        paths.append(p)
    for dataset, series in collect_series(in_dir).items():
        p = fig_dir / f"c_error_{dataset}.png"
        plot_c_error(series, dataset, p)
        paths.append(p)
    return paths
