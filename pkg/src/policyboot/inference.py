"""Posterior summaries, class comparisons, and the EWM frequentist companion.

Summaries are computed from an :class:`~policyboot.posterior.NbplRun` and are
purely deterministic given the run.  Quantiles use linear interpolation of
order statistics: for a sorted sample ``v[1] <= ... <= v[S]`` and level ``q``,
the rank is ``r = q (S - 1) + 1`` and the result interpolates ``v[floor r]``
and ``v[ceil r]``.  This matches ``numpy.quantile`` with its default method,
which is used directly.
"""

from __future__ import annotations

import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .data import Dataset, compute_scores
from .errors import ConfigError, DataError
from .policies import Policy, PolicyClassSpec, policy_to_dict, treated_share
from .posterior import NbplRun
from .seeding import rng_for
from .solvers import solve_class

VALUE_TIE_TOL = 1e-12

__all__ = [
    "VALUE_TIE_TOL",
    "ClassSummary",
    "Comparison",
    "EwmFit",
    "SummaryReport",
    "compare_classes",
    "ewm_bootstrap_ci",
    "ewm_fit",
    "export_figure_data",
    "render_markdown",
    "summarize",
]


def _quantile(values: np.ndarray, q: float) -> float:
    return float(np.quantile(values, q))


def _cdf_table(values: np.ndarray) -> tuple[tuple[float, ...], tuple[float, ...]]:
    """Distinct sorted values with the empirical CDF evaluated at each."""
    order = np.sort(values)
    distinct = np.unique(order)
    probs = np.searchsorted(order, distinct, side="right") / order.size
    return tuple(float(v) for v in distinct), tuple(float(p) for p in probs)


@dataclass(frozen=True)
class EwmFit:
    """Point estimate from empirical welfare maximization (uniform weights)."""

    label: str
    policy: Policy
    value: float
    share: float
    ci: Optional[tuple[float, float]] = None
    n_skipped: int = 0

    def to_dict(self) -> dict:
        out = {
            "label": self.label,
            "policy": policy_to_dict(self.policy),
            "value": self.value,
            "share": self.share,
        }
        if self.ci is not None:
            out["ci"] = [self.ci[0], self.ci[1]]
            out["n_skipped"] = self.n_skipped
        return out


@dataclass(frozen=True)
class ClassSummary:
    label: str
    n_draws: int
    value_median: float
    value_ci: tuple[float, float]
    share_median: float
    share_ci: tuple[float, float]
    cdf_values: tuple[float, ...]
    cdf_probs: tuple[float, ...]
    ewm: Optional[EwmFit] = None
    ewm_percentile: Optional[float] = None

    def to_dict(self) -> dict:
        out = {
            "label": self.label,
            "n_draws": self.n_draws,
            "value_median": self.value_median,
            "value_ci": [self.value_ci[0], self.value_ci[1]],
            "share_median": self.share_median,
            "share_ci": [self.share_ci[0], self.share_ci[1]],
            "cdf": {"values": list(self.cdf_values), "probs": list(self.cdf_probs)},
        }
        if self.ewm is not None:
            out["ewm"] = self.ewm.to_dict()
            out["ewm_percentile"] = self.ewm_percentile
        return out


@dataclass(frozen=True)
class Comparison:
    """Posterior ordering of two classes by optimal welfare."""

    label_a: str
    label_b: str
    pr_greater: float
    pr_equal: float
    pr_less: float
    diff_median: float
    diff_cdf_values: tuple[float, ...]
    diff_cdf_probs: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "label_a": self.label_a,
            "label_b": self.label_b,
            "pr_greater": self.pr_greater,
            "pr_equal": self.pr_equal,
            "pr_less": self.pr_less,
            "diff_median": self.diff_median,
            "diff_cdf": {
                "values": list(self.diff_cdf_values),
                "probs": list(self.diff_cdf_probs),
            },
        }


@dataclass(frozen=True)
class SummaryReport:
    alpha: float
    classes: tuple[ClassSummary, ...]
    comparisons: tuple[Comparison, ...]

    def class_summary(self, label: str) -> ClassSummary:
        for cs in self.classes:
            if cs.label == label:
                return cs
        raise KeyError(label)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "classes": [cs.to_dict() for cs in self.classes],
            "comparisons": [c.to_dict() for c in self.comparisons],
        }


def summarize(
    run: NbplRun,
    alpha: float = 0.05,
    ewm: Optional[Mapping[str, EwmFit]] = None,
    pairs: Optional[Sequence[tuple[str, str]]] = None,
) -> SummaryReport:
    """Summarize a posterior run: per-class medians, equal-tailed credible
    intervals, ECDF tables, and pairwise comparisons.

    ``ewm`` optionally maps class labels to their EWM fits; for each one the
    report records the fit and the fraction of posterior draws strictly below
    the EWM value (its posterior percentile).  ``pairs`` defaults to all
    ordered pairs in label order.
    """
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must be in (0, 1), got {alpha}")
    summaries = []
    for label in run.labels:
        values = run.values(label)
        shares = run.treated_shares(label)
        lo, hi = alpha / 2.0, 1.0 - alpha / 2.0
        cdf_v, cdf_p = _cdf_table(values)
        fit = ewm.get(label) if ewm else None
        pct = None
        if fit is not None:
            pct = float(np.mean(values < fit.value))
        summaries.append(
            ClassSummary(
                label=label,
                n_draws=values.size,
                value_median=_quantile(values, 0.5),
                value_ci=(_quantile(values, lo), _quantile(values, hi)),
                share_median=_quantile(shares, 0.5),
                share_ci=(_quantile(shares, lo), _quantile(shares, hi)),
                cdf_values=cdf_v,
                cdf_probs=cdf_p,
                ewm=fit,
                ewm_percentile=pct,
            )
        )
    if pairs is None:
        pairs = [
            (a, b)
            for i, a in enumerate(run.labels)
            for b in run.labels[i + 1 :]
        ]
    comparisons = tuple(compare_classes(run, a, b) for a, b in pairs)
    return SummaryReport(alpha=alpha, classes=tuple(summaries), comparisons=comparisons)


def compare_classes(run: NbplRun, label_a: str, label_b: str) -> Comparison:
    """Pr(W*_a > W*_b), Pr(=), Pr(<) across shared-weight draws.

    Differences within ``VALUE_TIE_TOL`` count as ties, so a class compared
    against itself reports Pr(=) == 1 exactly.
    """
    va = run.values(label_a)
    vb = run.values(label_b)
    if va.size != vb.size:
        raise ConfigError("classes were run with different draw counts")
    diff = va - vb
    s = diff.size
    n_greater = int(np.count_nonzero(diff > VALUE_TIE_TOL))
    n_less = int(np.count_nonzero(diff < -VALUE_TIE_TOL))
    n_equal = s - n_greater - n_less
    cdf_v, cdf_p = _cdf_table(diff)
    return Comparison(
        label_a=label_a,
        label_b=label_b,
        pr_greater=n_greater / s,
        pr_equal=n_equal / s,
        pr_less=n_less / s,
        diff_median=_quantile(diff, 0.5),
        diff_cdf_values=cdf_v,
        diff_cdf_probs=cdf_p,
    )


def ewm_fit(ds: Dataset, spec: PolicyClassSpec, label: str = "") -> EwmFit:
    """Empirical welfare maximization: solve once under uniform weights."""
    scores = compute_scores(ds)
    w = np.full(ds.n, 1.0 / ds.n)
    res = solve_class(scores, w, spec)
    share = treated_share(w, ds.x, res.policy)
    return EwmFit(label=label, policy=res.policy, value=res.value, share=share)


def _ewm_replicate(args) -> Optional[float]:
    scores, spec, n, seed, r = args
    rng = rng_for(seed, r)
    idx = rng.integers(0, n, size=n)
    # Pairs bootstrap: resampling rows is a multinomial reweighting of the
    # score table, so solve on the original table with counted weights.
    counts = np.bincount(idx, minlength=n).astype(float)
    w = counts / n
    try:
        res = solve_class(scores, w, spec)
    except Exception:
        return None
    return res.value


def ewm_bootstrap_ci(
    ds: Dataset,
    spec: PolicyClassSpec,
    seed: int,
    n_boot: int = 1000,
    alpha: float = 0.05,
    workers: int = 1,
    label: str = "",
) -> EwmFit:
    """EWM fit plus a percentile pairs-bootstrap confidence interval.

    Replicates that fail to solve (for example a capacity made infeasible by
    the resampled weights) are skipped and counted; more than 10% skipped is
    an error rather than a silently shifted interval.
    """
    if n_boot < 2:
        raise ConfigError(f"n_boot must be at least 2, got {n_boot}")
    base = ewm_fit(ds, spec, label=label)
    scores = compute_scores(ds)
    tasks = [(scores, spec, ds.n, seed, r) for r in range(1, n_boot + 1)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_ewm_replicate, tasks, chunksize=64))
    else:
        results = [_ewm_replicate(t) for t in tasks]
    values = [v for v in results if v is not None]
    n_skipped = n_boot - len(values)
    if n_skipped > 0.1 * n_boot:
        raise DataError(
            f"bootstrap skipped {n_skipped} of {n_boot} replicates; "
            "the class is too fragile under resampling for a percentile interval"
        )
    arr = np.asarray(values, dtype=float)
    ci = (_quantile(arr, alpha / 2.0), _quantile(arr, 1.0 - alpha / 2.0))
    return EwmFit(
        label=label,
        policy=base.policy,
        value=base.value,
        share=base.share,
        ci=ci,
        n_skipped=n_skipped,
    )


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def render_markdown(report: SummaryReport) -> str:
    """Markdown table with one row per (method, class)."""
    lines = [
        "| method | class | treated share | welfare | 95% CI |",
        "| --- | --- | --- | --- | --- |",
    ]
    width = f"{(1.0 - report.alpha) * 100:.6g}%"
    if width != "95%":
        lines[0] = lines[0].replace("95% CI", f"{width} CI")
    for cs in report.classes:
        ci = f"({_fmt(cs.value_ci[0])}, {_fmt(cs.value_ci[1])})"
        lines.append(
            f"| posterior | {cs.label} | {_fmt(cs.share_median)} "
            f"| {_fmt(cs.value_median)} | {ci} |"
        )
        if cs.ewm is not None:
            if cs.ewm.ci is not None:
                ewm_ci = f"({_fmt(cs.ewm.ci[0])}, {_fmt(cs.ewm.ci[1])})"
            else:
                ewm_ci = ""
            lines.append(
                f"| ewm | {cs.label} | {_fmt(cs.ewm.share)} "
                f"| {_fmt(cs.ewm.value)} | {ewm_ci} |"
            )
    if report.comparisons:
        lines.append("")
        lines.append("| comparison | Pr(>) | Pr(=) | Pr(<) | median diff |")
        lines.append("| --- | --- | --- | --- | --- |")
        for c in report.comparisons:
            lines.append(
                f"| {c.label_a} vs {c.label_b} | {_fmt(c.pr_greater)} "
                f"| {_fmt(c.pr_equal)} | {_fmt(c.pr_less)} | {_fmt(c.diff_median)} |"
            )
    return "\n".join(lines) + "\n"


def _safe_name(label: str) -> str:
    out = re.sub(r"[^A-Za-z0-9_.-]+", "_", label)
    return out or "class"


def export_figure_data(report: SummaryReport, outdir: str | Path) -> list[Path]:
    """Write one CSV per figure panel and return the paths.

    Welfare CDFs get columns ``value,cdf``; pairwise difference CDFs get
    ``diff_value,cdf``.  Files are written with LF newlines so repeated runs
    are byte-identical.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for cs in report.classes:
        path = outdir / f"cdf_welfare_{_safe_name(cs.label)}.csv"
        rows = ["value,cdf"]
        rows += [f"{v!r},{p!r}" for v, p in zip(cs.cdf_values, cs.cdf_probs)]
        path.write_text("\n".join(rows) + "\n", encoding="utf-8", newline="\n")
        paths.append(path)
    for c in report.comparisons:
        name = f"cdf_diff_{_safe_name(c.label_a)}_vs_{_safe_name(c.label_b)}.csv"
        path = outdir / name
        rows = ["diff_value,cdf"]
        rows += [f"{v!r},{p!r}" for v, p in zip(c.diff_cdf_values, c.diff_cdf_probs)]
        path.write_text("\n".join(rows) + "\n", encoding="utf-8", newline="\n")
        paths.append(path)
    return paths
