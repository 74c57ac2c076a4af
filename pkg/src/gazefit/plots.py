"""Static figure emission for the report paths (SVG, deterministic)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "gazefit"

import matplotlib.pyplot as plt  # noqa: E402

from .analysis import PLOT_PPL_CEILING, LMRecord, UidReport  # noqa: E402

_ARCH_MARKERS = {"trans_lg": "o", "trans_sm": "s", "lstm": "^", "ngram": "x"}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def scatter_ppl_power(records: Sequence[LMRecord], path: str | Path,
                      split_ppl: float | None = 400.0) -> Path:
    """PPL (log x) against psychometric power; one point per LM."""
    fig, ax = plt.subplots(figsize=(5.2, 3.8))
    shown = [r for r in records if r.ppl <= PLOT_PPL_CEILING]
    for arch, marker in _ARCH_MARKERS.items():
        pts = [r for r in shown if r.architecture == arch]
        if pts:
            ax.scatter([r.ppl for r in pts], [r.delta_loglik for r in pts],
                       marker=marker, label=arch, alpha=0.8)
    rest = [r for r in shown if r.architecture not in _ARCH_MARKERS]
    if rest:
        ax.scatter([r.ppl for r in rest], [r.delta_loglik for r in rest],
                   marker="o", color="gray", alpha=0.8)
    if split_ppl:
        ax.axvline(split_ppl, color="gray", linestyle=":", linewidth=1)
    ax.set_xscale("log")
    ax.set_xlabel("perplexity (log scale)")
    ax.set_ylabel("delta log-likelihood per point")
    if any(r.architecture for r in shown):
        ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def position_curve_plot(report: UidReport, path: str | Path) -> Path:
    """Smoothed gaze duration by position in sentence with 95% bands."""
    xs = [p for p, _, _ in report.position_curve]
    ys = [v for _, v, _ in report.position_curve]
    hw = [h for _, _, h in report.position_curve]
    fig, ax = plt.subplots(figsize=(4.6, 3.4))
    ax.fill_between(xs, [y - h for y, h in zip(ys, hw)],
                    [y + h for y, h in zip(ys, hw)], alpha=0.25, linewidth=0)
    ax.plot(xs, ys, marker="o", markersize=3)
    ax.set_xlabel("position in sentence")
    ax.set_ylabel("gaze duration")
    ax.set_title(f"cv={report.cv:.3f}  slope p={report.position_slope_p:.3g}",
                 fontsize=9)
    fig.tight_layout()
    return _save(fig, path)


def factor_box_plot(records: Sequence[LMRecord], path: str | Path) -> Path:
    """Power grouped by architecture, data size, and update count."""
    fig, axes = plt.subplots(1, 3, figsize=(9.0, 3.2), sharey=True)
    groupings = (("architecture", lambda r: r.architecture),
                 ("data size", lambda r: r.data_size),
                 ("updates", lambda r: r.updates))
    for ax, (label, keyfn) in zip(axes, groupings):
        keys = sorted({keyfn(r) for r in records if keyfn(r) is not None},
                      key=str)
        data = [[r.delta_loglik for r in records if keyfn(r) == k] for k in keys]
        if data:
            ax.boxplot(data, tick_labels=[str(k) for k in keys])
        ax.set_xlabel(label)
        ax.tick_params(axis="x", labelsize=8)
    axes[0].set_ylabel("delta log-likelihood per point")
    fig.tight_layout()
    return _save(fig, path)
