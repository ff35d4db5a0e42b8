"""Report outputs: plot-ready CSV tables and rendered figures.

Every CLI report writes delimited output first; figure rendering is a
side product saved to files (no interactive display).
"""

from __future__ import annotations

import io
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .estimators import EffectEstimate
from .inference import IntervalEstimate
from .panel import PanelDataset
from .simulation import MetricsRow
from .published import published_cell


def group_trajectories(dataset: PanelDataset, by: str = "stratum") -> list[dict]:
    """Group-mean outcome per (t, m), relative to the group's pre-period mean.

    One row per (group, t, m) with the raw mean and the mean divided by
    the group's average pre-period outcome, mirroring the usual
    sales-relative-to-baseline trajectory plots.
    """
    groups = dataset.strata if by == "stratum" else tuple(dataset.exposure_labels)
    rows: list[dict] = []
    for g in dict.fromkeys(groups):
        mask = np.array([s == g for s in groups])
        pre_mean = float(dataset.y[mask, 0, :].mean())
        for t in (0, 1):
            for m in range(dataset.n_m):
                mean = float(dataset.y[mask, t, m].mean())
                rows.append(
                    {
                        "group": g,
                        "t": t,
                        "m": m + 1,
                        "mean_outcome": mean,
                        "relative_to_pre": mean / pre_mean if pre_mean != 0 else float("nan"),
                    }
                )
    return rows


def trajectories_csv(rows: Sequence[dict], header_lines: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    buf.write("group,t,m,mean_outcome,relative_to_pre\n")
    for r in rows:
        buf.write(f"{r['group']},{r['t']},{r['m']},{r['mean_outcome']!r},{r['relative_to_pre']!r}\n")
    return buf.getvalue()


def save_trajectories_figure(rows: Sequence[dict], path: str | Path) -> Path:
    """Line plot of relative group means over the combined time axis."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(8, 4.5))
    groups = list(dict.fromkeys(r["group"] for r in rows))
    n_m = max(r["m"] for r in rows)
    for g in groups:
        series = sorted(
            ((r["t"] * n_m + r["m"], r["relative_to_pre"]) for r in rows if r["group"] == g)
        )
        ax.plot([s[0] for s in series], [s[1] for s in series], marker="o", markersize=3, label=g)
    ax.axvline(n_m + 0.5, color="grey", linestyle="--", linewidth=1)
    ax.set_xlabel("observation time (pre period then post period)")
    ax.set_ylabel("group mean relative to pre-period average")
    ax.legend(fontsize=8, loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_effects_figure(
    estimate: EffectEstimate,
    per_m_intervals: Sequence[IntervalEstimate] | None,
    path: str | Path,
) -> Path:
    """Per-m effect estimates with interval whiskers when available."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(7, 4))
    ms = np.arange(1, estimate.n_m + 1)
    ax.plot(ms, estimate.per_m, "o-", color="C0", label=f"{estimate.method} {estimate.estimand}")
    if per_m_intervals:
        lower = [iv.lower for iv in per_m_intervals]
        upper = [iv.upper for iv in per_m_intervals]
        ax.fill_between(ms, lower, upper, alpha=0.2, color="C0")
    ref = 1.0 if estimate.scale == "relative" else 0.0
    ax.axhline(ref, color="grey", linewidth=1)
    ax.set_xlabel("observation time m")
    ax.set_ylabel("relative effect" if estimate.scale == "relative" else "effect")
    ax.set_xticks(ms)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_pretrends_figure(
    intervals: Mapping[int, IntervalEstimate], estimand: str, path: str | Path
) -> Path:
    """Placebo pre-period effects with interval whiskers per m."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(7, 4))
    ms = sorted(intervals)
    points = [intervals[m].point for m in ms]
    yerr = np.array(
        [[intervals[m].point - intervals[m].lower for m in ms], [intervals[m].upper - intervals[m].point for m in ms]]
    )
    ax.errorbar(ms, points, yerr=yerr, fmt="o", capsize=3, color="C1")
    ax.axhline(0.0, color="grey", linewidth=1)
    ax.set_xlabel("pre-period observation time m")
    ax.set_ylabel(f"placebo {estimand} effect")
    ax.set_xticks(ms)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_metrics_figure(rows: Sequence[MetricsRow], path: str | Path, compare: bool = False) -> Path:
    """Grouped bar chart of bias per scenario cell and method."""
    path = Path(path)
    fig, axes = plt.subplots(1, 2, figsize=(11, 4), sharey=False)
    for ax, estimand in zip(axes, ("att", "atn")):
        cells = sorted({r.scenario for r in rows})
        methods = list(dict.fromkeys(r.method for r in rows))
        width = 0.8 / max(1, len(methods))
        for j, method in enumerate(methods):
            vals = []
            for c in cells:
                match = [r for r in rows if r.scenario == c and r.method == method and r.estimand == estimand]
                vals.append(match[0].bias_pct if match else np.nan)
            xs = np.arange(len(cells)) + j * width
            ax.bar(xs, vals, width=width, label=method)
            if compare:
                for x, c in zip(xs, cells):
                    ref = published_cell(c, estimand, method)
                    if ref is not None:
                        ax.plot([x], [ref["bias_pct"]], marker="_", color="black", markersize=10)
        ax.axhline(0, color="grey", linewidth=1)
        ax.set_title(f"{estimand.upper()} bias (%)" + (" (dashes: published)" if compare else ""))
        ax.set_xticks(np.arange(len(cells)) + 0.4 - width / 2)
        ax.set_xticklabels(cells)
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
