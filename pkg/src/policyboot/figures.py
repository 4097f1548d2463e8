"""Static PNG renderings of summaries and experiment reports.

Rendering is headless (Agg) and deterministic: fixed figure sizes, fixed
dpi, no timestamps.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .inference import SummaryReport
from .simlab import RateReport, SelectionReport

DPI = 150

__all__ = [
    "DPI",
    "diff_cdf_figure",
    "rate_figure",
    "render_summary_figures",
    "selection_figure",
    "welfare_cdf_figure",
]


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return path


def _step(ax, values, probs, label: str) -> None:
    v = np.asarray(values, dtype=float)
    p = np.asarray(probs, dtype=float)
    # prepend the pre-jump zero so the first riser is drawn
    ax.step(np.concatenate([v[:1], v]), np.concatenate([[0.0], p]), where="post", label=label)


def welfare_cdf_figure(report: SummaryReport, path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for cs in report.classes:
        _step(ax, cs.cdf_values, cs.cdf_probs, cs.label)
        if cs.ewm is not None:
            ax.axvline(cs.ewm.value, color="gray", lw=0.8, ls=":")
    ax.set_xlabel("optimal welfare")
    ax.set_ylabel("posterior CDF")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(frameon=False)
    return _save(fig, path)


def diff_cdf_figure(report: SummaryReport, path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for c in report.comparisons:
        _step(ax, c.diff_cdf_values, c.diff_cdf_probs, f"{c.label_a} - {c.label_b}")
    ax.axvline(0.0, color="black", lw=0.8)
    ax.set_xlabel("welfare difference")
    ax.set_ylabel("posterior CDF")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(frameon=False)
    return _save(fig, path)


def render_summary_figures(report: SummaryReport, outdir: str | Path) -> list[Path]:
    outdir = Path(outdir)
    paths = [welfare_cdf_figure(report, outdir / "welfare_cdf.png")]
    if report.comparisons:
        paths.append(diff_cdf_figure(report, outdir / "diff_cdf.png"))
    return paths


def rate_figure(report: RateReport, path: str | Path) -> Path:
    """Median posterior regret against n on log-log axes with the fit line."""
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    ns = np.array([pt.n for pt in report.points], dtype=float)
    med = np.array([pt.median_regret for pt in report.points])
    q90 = np.array([pt.q90_regret for pt in report.points])
    keep = med > 0
    ax.loglog(ns[keep], med[keep], "o-", label="median regret")
    if np.any(q90 > 0):
        k9 = q90 > 0
        ax.loglog(ns[k9], q90[k9], "s--", lw=0.9, label="0.9 quantile")
    if report.slope is not None and np.any(keep):
        fit = np.exp(report.intercept) * ns[keep] ** report.slope
        ax.loglog(ns[keep], fit, ":", color="black", label=f"slope {report.slope:.2f}")
    ax.set_xlabel("sample size n")
    ax.set_ylabel("posterior regret")
    ax.legend(frameon=False)
    return _save(fig, path)


def selection_figure(report: SelectionReport, path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    ns = [pt.n for pt in report.points]
    if abs(report.delta) > 1e-12:
        ys = [pt.correct_fraction for pt in report.points]
        label = "correct-sign fraction"
    else:
        ys = [pt.near_zero_fraction for pt in report.points]
        label = f"Pr(|diff| < {report.eps:.2e})"
    ax.plot(ns, ys, "o-", label=label)
    ax.axhline(1.0, color="gray", lw=0.8, ls=":")
    ax.set_xscale("log")
    ax.set_ylim(0.0, 1.05)
    ax.set_xlabel("sample size n")
    ax.set_ylabel("posterior fraction")
    ax.legend(frameon=False, loc="lower right")
    return _save(fig, path)
