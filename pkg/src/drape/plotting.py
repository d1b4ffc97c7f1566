"""Static SVG figures for coverage runs and nuisance-error tables."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

COVERED = "#2b8cbe"
MISSED = "#d7301f"
TRUTH = "#252525"

STYLE = {
    "font.family": "sans-serif",
    "font.size": 8,
    "axes.labelsize": 8,
    "axes.titlesize": 8,
    "axes.linewidth": 0.5,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "xtick.labelsize": 7,
    "ytick.labelsize": 7,
    "xtick.major.width": 0.5,
    "ytick.major.width": 0.5,
    "lines.linewidth": 0.8,
    "legend.fontsize": 7,
    "legend.frameon": False,
    # fixed ids and no timestamp keep SVG output byte-identical across runs
    "svg.hashsalt": "drape",
    "svg.fonttype": "none",
}
METADATA = {"Date": None, "Creator": None}


def _save(fig, path) -> None:
    fig.savefig(path, format="svg", metadata=METADATA)
    plt.close(fig)


def coverage_strips(reports, path, ncols: int = 3) -> None:
    """One panel per report: every repeat's interval, sorted by estimate.

    Intervals that miss the truth are drawn in red; the panel title carries
    the setting, the observed coverage and the median interval width.
    """
    reports = list(reports)
    ncols = min(ncols, len(reports))
    nrows = math.ceil(len(reports) / ncols)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(nrows, ncols, figsize=(2.4 * ncols, 1.9 * nrows),
                                 squeeze=False)
        for ax, rep in zip(axes.flat, reports):
            rec = sorted(rep.records, key=lambda r: r["theta"])
            idx = np.arange(len(rec))
            lo = np.array([r["ci_lo"] for r in rec])
            hi = np.array([r["ci_hi"] for r in rec])
            colours = [COVERED if r["covered"] else MISSED for r in rec]
            ax.vlines(idx, lo, hi, colors=colours, linewidth=0.6)
            ax.axhline(rep.truth, color=TRUTH, linewidth=0.8)
            ax.set_title(f"{rep.setting}/{rep.noise} {rep.method}: "
                         f"{100 * rep.coverage:.0f}% (w={rep.median_width:.3f})")
            ax.set_xticks([])
            ax.set_xlabel("repeat (sorted)")
        for ax in list(axes.flat)[len(reports):]:
            ax.set_visible(False)
        axes[0, 0].set_ylabel("interval")
        fig.tight_layout()
        _save(fig, path)


def mse_boxes(rows, path, pairs=(("score_spline", "score_basis"),
                                 ("deriv_resmooth", "deriv_difference"))) -> None:
    """Side-by-side boxes of per-repeat squared errors for competing estimators."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(pairs), figsize=(2.6 * len(pairs), 2.2), squeeze=False)
        for ax, pair in zip(axes.flat, pairs):
            data = [[r[k] for r in rows] for k in pair]
            ax.boxplot(data, widths=0.5, medianprops={"color": MISSED})
            ax.set_xticks(range(1, len(pair) + 1), [k.split("_", 1)[1] for k in pair])
            ax.set_ylabel(f"{pair[0].split('_')[0]} MSE")
        fig.tight_layout()
        _save(fig, path)
