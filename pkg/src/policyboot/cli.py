"""Command-line front end.

Subcommands: validate, scores, ewm, nbpl, compare, simulate, export-figures.
Global flags live on the group: --seed, --workers, --out, --format.  Exit
codes: 2 for configuration problems, 3 for data problems, 4 for solver
failures; messages go to standard error.  Every command overwrites its
outputs byte-identically when rerun with the same inputs and seed, and
writes only under --out (or to standard output when --out is not set).
"""

from __future__ import annotations

import csv
import io
import json
import sys
from importlib import resources
from pathlib import Path
from typing import Optional

import click
import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .data import OverlapConfig, compute_scores, load_dataset, validate_overlap
from .errors import ConfigError, DataError, PolicybootError
from .figures import rate_figure, render_summary_figures, selection_figure
from .inference import (
    compare_classes,
    ewm_bootstrap_ci,
    ewm_fit,
    export_figure_data,
    render_markdown,
    summarize,
)
from .policies import PolicyClassSpec, class_spec_from_dict, treated_share
from .solvers import solve_class
from .posterior import NbplRun, run_nbpl
from .simlab import (
    ConstantFn,
    DgpSpec,
    FiniteGrid,
    GridLookupFn,
    LinearFn,
    ProductUniform,
    RateReport,
    SelectionReport,
    one_hot_grid,
    one_hot_subset_class,
    regret_experiment,
    selection_experiment,
)

_EXT = {"json": "json", "csv": "csv", "md": "md"}


# ---- small plumbing ----


def _load_structured(path: Path) -> dict:
    """Parse a TOML or JSON config file by suffix (TOML tried first otherwise)."""
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    suffix = path.suffix.lower()
    if suffix == ".json":
        try:
            return json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    try:
        return tomllib.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, tomllib.TOMLDecodeError) as exc:
        if suffix in (".toml", ".tml"):
            raise ConfigError(f"{path}: {exc}") from exc
    try:
        return json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: neither TOML nor JSON parsed: {exc}") from exc


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _csv_text(rows: list) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def _md_kv(d: dict) -> str:
    lines = ["| key | value |", "| --- | --- |"]
    for k in sorted(d):
        v = d[k]
        if isinstance(v, (dict, list)):
            v = json.dumps(v, sort_keys=True)
        lines.append(f"| {k} | {v} |")
    return "\n".join(lines) + "\n"


def _kv_rows(d: dict) -> list:
    rows = [["key", "value"]]
    for k in sorted(d):
        v = d[k]
        if isinstance(v, (dict, list)):
            v = json.dumps(v, sort_keys=True)
        rows.append([k, "" if v is None else str(v)])
    return rows


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="\n")


def _emit(out: Optional[Path], filename: str, text: str) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        _write_text(out / filename, text)


def _require_out(ctx_obj: dict, command: str) -> Path:
    out = ctx_obj["out"]
    if out is None:
        raise ConfigError(f"{command} writes multiple files; --out is required")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_seed(ctx_obj: dict, fallback=None) -> int:
    seed = ctx_obj["seed"] if ctx_obj["seed"] is not None else fallback
    if seed is None:
        raise ConfigError("this command is stochastic; --seed is required")
    return int(seed)


def _progress_printer(total_label: str):
    if not sys.stderr.isatty():
        return None

    def show(done: int, total: int) -> None:
        end = "\n" if done >= total else ""
        print(f"\r{total_label} {done}/{total}", end=end, file=sys.stderr, flush=True)

    return show


# ---- config resolution ----


def _parse_propensity(spec: str):
    parts = [p.strip() for p in str(spec).split(",")]
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        return parts[0] if len(parts) == 1 else parts
    return vals[0] if len(vals) == 1 else vals


def _resolve_dataset(data: Path, cfg: dict, outcome, arm, covariates, propensity):
    outcome = outcome if outcome is not None else cfg.get("outcome")
    arm = arm if arm is not None else cfg.get("arm")
    covs = covariates if covariates is not None else cfg.get("covariates")
    prop = propensity if propensity is not None else cfg.get("propensity")
    if not outcome or not arm or not covs:
        raise ConfigError("outcome, arm, and covariates must be given by flag or config")
    if prop is None:
        raise ConfigError("propensity must be given by flag or config")
    if isinstance(covs, str):
        covs = [c.strip() for c in covs.split(",") if c.strip()]
    if isinstance(prop, str):
        prop = _parse_propensity(prop)
    schema = {"outcome": str(outcome), "arm": str(arm), "covariates": list(covs)}
    return load_dataset(str(data), schema, prop)


def _class_body(body) -> PolicyClassSpec:
    if not isinstance(body, dict):
        raise ConfigError("a class spec must be a table/object")
    if body.get("kind") == "subset":
        size = body.get("size")
        if size is None:
            raise ConfigError("subset class needs 'size'")
        base = one_hot_subset_class(int(size))
        cap = body.get("capacity")
        if cap is None:
            return base
        return PolicyClassSpec(
            kind=base.kind,
            capacity=float(cap),
            capacity_basis=str(body.get("capacity_basis", "uniform-share")),
        )
    try:
        return class_spec_from_dict(body)
    except KeyError as exc:
        raise ConfigError(f"class spec is missing {exc}") from exc


def _single_class(cfg: dict, class_path: Optional[Path]) -> PolicyClassSpec:
    if class_path is not None:
        d = _load_structured(class_path)
        return _class_body(d.get("class", d))
    if "class" in cfg:
        return _class_body(cfg["class"])
    raise ConfigError("a policy class must be given via --class-config or config 'class'")


def _labeled_classes(cfg: dict, classes_path: Optional[Path]) -> list:
    source = cfg
    if classes_path is not None:
        source = _load_structured(classes_path)
    items = source.get("classes")
    if not items:
        raise ConfigError("'classes' must list labeled class specs")
    out = []
    for i, item in enumerate(items):
        if not isinstance(item, dict):
            raise ConfigError(f"classes[{i}] must be a table/object")
        body = dict(item)
        label = body.pop("label", None)
        if not label:
            raise ConfigError(f"classes[{i}] needs a 'label'")
        out.append((str(label), _class_body(body)))
    labels = [lab for lab, _ in out]
    if len(set(labels)) != len(labels):
        raise ConfigError("class labels must be unique")
    return out


def _need(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigError(f"{where} is missing '{key}'")
    return d[key]


def _fn_from_config(v, what: str):
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return ConstantFn(float(v))
    if isinstance(v, dict):
        if "coef" in v:
            return LinearFn(
                coef=tuple(float(c) for c in v["coef"]),
                intercept=float(v.get("intercept", 0.0)),
            )
        if "points" in v and "values" in v:
            return GridLookupFn(
                points=np.asarray(v["points"], dtype=float),
                values=np.asarray(v["values"], dtype=float),
            )
    raise ConfigError(
        f"cannot interpret {what}: use a number, {{coef, intercept}}, or "
        "{points, values}"
    )


def _dgp_from_config(d: dict) -> DgpSpec:
    design = d.get("design", "grid")
    noise = float(d.get("noise_sd", 1.0))
    e = float(d.get("propensity", 0.5))
    if design == "one_hot":
        return one_hot_grid(
            _need(d, "taus", "one_hot design"), d.get("probs"), noise, e
        )
    if design == "grid":
        points = np.asarray(_need(d, "points", "grid design"), dtype=float)
        law = FiniteGrid(points=points, probs=np.asarray(_need(d, "probs", "grid design"), dtype=float))
        cate = d.get("cate")
        if cate is None and "taus" in d:
            cate = {"points": d["points"], "values": d["taus"]}
        if cate is None:
            raise ConfigError("grid design needs 'cate' or 'taus'")
        return DgpSpec(
            law=law,
            cate=_fn_from_config(cate, "cate"),
            baseline=_fn_from_config(d.get("baseline", 0.0), "baseline"),
            noise_sd=noise,
            propensity=e,
        )
    if design == "uniform":
        law = ProductUniform(
            lows=tuple(_need(d, "lows", "uniform design")),
            highs=tuple(_need(d, "highs", "uniform design")),
        )
        return DgpSpec(
            law=law,
            cate=_fn_from_config(_need(d, "cate", "uniform design"), "cate"),
            baseline=_fn_from_config(d.get("baseline", 0.0), "baseline"),
            noise_sd=noise,
            propensity=e,
        )
    raise ConfigError(f"unknown design '{design}'")


def _load_experiment(spec: str) -> dict:
    path = Path(spec)
    if path.exists():
        return _load_structured(path)
    # fall back to the bundled experiment files
    bundle = resources.files("policyboot") / "experiments" / f"{spec}.toml"
    try:
        raw = bundle.read_bytes()
    except (FileNotFoundError, OSError):
        raise ConfigError(
            f"experiment '{spec}' is neither a file nor a bundled experiment"
        ) from None
    try:
        return tomllib.loads(raw.decode("utf-8"))
    except tomllib.TOMLDecodeError as exc:  # pragma: no cover - ships valid
        raise ConfigError(f"bundled experiment '{spec}': {exc}") from exc


# ---- the command group ----


def _data_options(f):
    opts = [
        click.option(
            "--config",
            "config_path",
            type=click.Path(path_type=Path),
            default=None,
            help="TOML/JSON file supplying any of the other options.",
        ),
        click.option("--outcome", default=None, help="Outcome column name."),
        click.option("--arm", default=None, help="Assigned-arm column name."),
        click.option("--covariates", default=None, help="Comma-separated covariate columns."),
        click.option(
            "--propensity",
            default=None,
            help="Number, comma-separated numbers, or propensity column name(s).",
        ),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


@click.group(name="policyboot")
@click.option("--seed", type=int, default=None, help="RNG seed; required for stochastic commands.")
@click.option("--workers", type=int, default=1, show_default=True, help="Worker processes.")
@click.option(
    "--out",
    type=click.Path(path_type=Path),
    default=None,
    help="Output directory; single-file commands print to stdout without it.",
)
@click.option(
    "--format",
    "fmt",
    type=click.Choice(["json", "csv", "md"]),
    default="json",
    show_default=True,
    help="Rendering for single-document outputs.",
)
@click.pass_context
def cli(ctx, seed, workers, out, fmt):
    """Posterior policy learning from experimental data."""
    if workers < 1:
        raise ConfigError("--workers must be >= 1")
    ctx.obj = {"seed": seed, "workers": workers, "out": out, "fmt": fmt}


@cli.command()
@click.argument("data", type=click.Path(path_type=Path))
@_data_options
@click.option("--kappa", type=float, default=None, help="Overlap margin (default 0.01).")
@click.option("--strict/--no-strict", "strict", default=None)
@click.pass_context
def validate(ctx, data, config_path, outcome, arm, covariates, propensity, kappa, strict):
    """Check strict overlap of the propensities; report violations."""
    cfg = _load_structured(config_path) if config_path else {}
    ds = _resolve_dataset(data, cfg, outcome, arm, covariates, propensity)
    kappa = float(kappa if kappa is not None else cfg.get("kappa", 0.01))
    strict = bool(strict if strict is not None else cfg.get("strict", True))
    report = validate_overlap(ds, OverlapConfig(kappa=kappa, strict=strict))
    fmt = ctx.obj["fmt"]
    if fmt == "json":
        text = _dump_json(report.to_dict())
    elif fmt == "csv":
        rows = [["row", "arm", "value"]]
        rows += [[str(v.row), str(v.arm), repr(v.value)] for v in report.violations]
        text = _csv_text(rows)
    else:
        lines = [f"overlap passed: {str(report.passed).lower()}", ""]
        lines += ["| row | arm | value |", "| --- | --- | --- |"]
        lines += [f"| {v.row} | {v.arm} | {v.value!r} |" for v in report.violations]
        text = "\n".join(lines) + "\n"
    _emit(ctx.obj["out"], f"overlap.{_EXT[fmt]}", text)


@cli.command()
@click.argument("data", type=click.Path(path_type=Path))
@_data_options
@click.pass_context
def scores(ctx, data, config_path, outcome, arm, covariates, propensity):
    """Emit the per-row welfare score table."""
    cfg = _load_structured(config_path) if config_path else {}
    ds = _resolve_dataset(data, cfg, outcome, arm, covariates, propensity)
    tbl = compute_scores(ds)
    j = tbl.z.shape[1]
    header = [f"z{a}" for a in range(j)] + [f"g{a}" for a in range(j)]
    cols = [tbl.z[:, a] for a in range(j)] + [tbl.g[:, a] for a in range(j)]
    if tbl.g_binary is not None:
        header.append("g_binary")
        cols.append(tbl.g_binary)
    fmt = ctx.obj["fmt"]
    if fmt == "json":
        payload = {name: [float(v) for v in col] for name, col in zip(header, cols)}
        text = _dump_json(payload)
    elif fmt == "csv":
        rows = [header]
        for i in range(ds.n):
            rows.append([repr(float(col[i])) for col in cols])
        text = _csv_text(rows)
    else:
        lines = ["| " + " | ".join(header) + " |", "|" + " --- |" * len(header)]
        for i in range(ds.n):
            lines.append("| " + " | ".join(repr(float(col[i])) for col in cols) + " |")
        text = "\n".join(lines) + "\n"
    _emit(ctx.obj["out"], f"scores.{_EXT[fmt]}", text)


@cli.command()
@click.argument("data", type=click.Path(path_type=Path))
@_data_options
@click.option(
    "--class-config",
    "class_path",
    type=click.Path(path_type=Path),
    default=None,
    help="TOML/JSON class spec ('class' table or bare).",
)
@click.option("--boot", "n_boot", type=int, default=None, help="Bootstrap replicates for a CI.")
@click.option("--alpha", type=float, default=None, help="CI level (default 0.05).")
@click.pass_context
def ewm(ctx, data, config_path, outcome, arm, covariates, propensity, class_path, n_boot, alpha):
    """Empirical welfare maximization over a policy class."""
    cfg = _load_structured(config_path) if config_path else {}
    ds = _resolve_dataset(data, cfg, outcome, arm, covariates, propensity)
    spec = _single_class(cfg, class_path)
    n_boot = int(n_boot if n_boot is not None else cfg.get("boot", 0))
    alpha = float(alpha if alpha is not None else cfg.get("alpha", 0.05))
    w = np.full(ds.n, 1.0 / ds.n)
    res = solve_class(compute_scores(ds), w, spec)
    payload = res.to_dict()
    payload["treated_share"] = treated_share(w, ds.x, res.policy)
    if n_boot > 0:
        seed = _require_seed(ctx.obj, cfg.get("seed"))
        withci = ewm_bootstrap_ci(
            ds, spec, seed=seed, n_boot=n_boot, alpha=alpha,
            workers=ctx.obj["workers"], label="ewm",
        )
        payload["ci"] = [withci.ci[0], withci.ci[1]]
        payload["alpha"] = alpha
        payload["n_boot"] = n_boot
        payload["n_skipped"] = withci.n_skipped
    fmt = ctx.obj["fmt"]
    if fmt == "json":
        text = _dump_json(payload)
    elif fmt == "csv":
        text = _csv_text(_kv_rows(payload))
    else:
        text = _md_kv(payload)
    _emit(ctx.obj["out"], f"ewm.{_EXT[fmt]}", text)


@cli.command()
@click.argument("data", type=click.Path(path_type=Path))
@_data_options
@click.option(
    "--classes-config",
    "classes_path",
    type=click.Path(path_type=Path),
    default=None,
    help="TOML/JSON file with a 'classes' list of labeled class specs.",
)
@click.option("--draws", "-S", "n_draws", type=int, default=None, help="Posterior draws.")
@click.option("--alpha", type=float, default=None, help="Credible level (default 0.05).")
@click.option("--with-ewm/--no-ewm", "with_ewm", default=None, help="Add EWM rows to the summary.")
@click.pass_context
def nbpl(ctx, data, config_path, outcome, arm, covariates, propensity, classes_path, n_draws, alpha, with_ewm):
    """Posterior policy learning: draws, summary, comparisons, figure data."""
    out = _require_out(ctx.obj, "nbpl")
    cfg = _load_structured(config_path) if config_path else {}
    ds = _resolve_dataset(data, cfg, outcome, arm, covariates, propensity)
    classes = _labeled_classes(cfg, classes_path)
    n_draws = n_draws if n_draws is not None else cfg.get("draws")
    if n_draws is None:
        raise ConfigError("--draws is required")
    alpha = float(alpha if alpha is not None else cfg.get("alpha", 0.05))
    with_ewm = bool(with_ewm if with_ewm is not None else cfg.get("with_ewm", False))
    seed = _require_seed(ctx.obj, cfg.get("seed"))

    run = run_nbpl(
        ds,
        classes,
        S=int(n_draws),
        seed=seed,
        workers=ctx.obj["workers"],
        progress=_progress_printer("draws"),
    )
    run.to_jsonl(str(out / "run.jsonl"))
    ewm_map = None
    if with_ewm:
        ewm_map = {label: ewm_fit(ds, spec, label=label) for label, spec in classes}
    report = summarize(run, alpha=alpha, ewm=ewm_map)
    fmt = ctx.obj["fmt"]
    if fmt == "json":
        _write_text(out / "summary.json", _dump_json(report.to_dict()))
    elif fmt == "md":
        _write_text(out / "summary.md", render_markdown(report))
    else:
        rows = [["method", "class", "treated_share", "welfare", "ci_lo", "ci_hi"]]
        for cs in report.classes:
            rows.append(
                [
                    "posterior",
                    cs.label,
                    repr(cs.share_median),
                    repr(cs.value_median),
                    repr(cs.value_ci[0]),
                    repr(cs.value_ci[1]),
                ]
            )
            if cs.ewm is not None:
                rows.append(
                    ["ewm", cs.label, repr(cs.ewm.share), repr(cs.ewm.value), "", ""]
                )
        _write_text(out / "summary.csv", _csv_text(rows))
    comp = [c.to_dict() for c in report.comparisons]
    _write_text(out / "comparisons.json", _dump_json(comp))
    export_figure_data(report, out / "figures")


@cli.command()
@click.argument("run_path", type=click.Path(path_type=Path))
@click.option("-a", "--label-a", "label_a", required=True)
@click.option("-b", "--label-b", "label_b", required=True)
@click.pass_context
def compare(ctx, run_path, label_a, label_b):
    """Posterior Pr(class a beats class b) from a saved run."""
    try:
        run = NbplRun.from_jsonl(str(run_path))
    except OSError as exc:
        raise DataError(f"cannot read {run_path}: {exc}") from exc
    c = compare_classes(run, label_a, label_b)
    fmt = ctx.obj["fmt"]
    if fmt == "json":
        text = _dump_json(c.to_dict())
    elif fmt == "csv":
        rows = [
            ["label_a", "label_b", "pr_greater", "pr_equal", "pr_less", "diff_median"],
            [
                c.label_a,
                c.label_b,
                repr(c.pr_greater),
                repr(c.pr_equal),
                repr(c.pr_less),
                repr(c.diff_median),
            ],
        ]
        text = _csv_text(rows)
    else:
        d = c.to_dict()
        d.pop("diff_cdf")
        text = _md_kv(d)
    _emit(ctx.obj["out"], f"comparison.{_EXT[fmt]}", text)


@cli.command()
@click.argument("experiment")
@click.pass_context
def simulate(ctx, experiment):
    """Run a rate or selection experiment from a TOML/JSON file.

    EXPERIMENT is a file path or the name of a bundled experiment
    (rate_smoke, selection_smoke).  Writes <kind>.json and <kind>.csv.
    """
    out = _require_out(ctx.obj, "simulate")
    d = _load_experiment(experiment)
    kind = d.get("kind")
    if kind not in ("rate", "selection"):
        raise ConfigError("experiment 'kind' must be 'rate' or 'selection'")
    seed = _require_seed(ctx.obj, d.get("seed"))
    dgp = _dgp_from_config(_need(d, "dgp", "experiment"))
    ns = _need(d, "ns", "experiment")
    reps = int(_need(d, "reps", "experiment"))
    n_draws = int(_need(d, "draws", "experiment"))
    workers = ctx.obj["workers"]
    if kind == "rate":
        spec = _class_body(_need(d, "class", "rate experiment"))
        report = regret_experiment(
            dgp,
            spec,
            ns=ns,
            S=n_draws,
            reps=reps,
            seed=seed,
            workers=workers,
            check_lemma=bool(d.get("check_lemma", False)),
            uniform_weights=bool(d.get("uniform_weights", False)),
        )
        _write_text(out / "rate.json", _dump_json(report.to_dict()))
        _write_text(out / "rate.csv", _csv_text(report.csv_rows()))
    else:
        class_a = _class_body(_need(d, "class_a", "selection experiment"))
        class_b = _class_body(_need(d, "class_b", "selection experiment"))
        eps = d.get("eps")
        report = selection_experiment(
            dgp,
            class_a,
            class_b,
            ns=ns,
            S=n_draws,
            reps=reps,
            seed=seed,
            workers=workers,
            eps=float(eps) if eps is not None else None,
        )
        _write_text(out / "selection.json", _dump_json(report.to_dict()))
        _write_text(out / "selection.csv", _csv_text(report.csv_rows()))


@cli.command("export-figures")
@click.option("--run", "run_path", type=click.Path(path_type=Path), default=None)
@click.option("--rate", "rate_path", type=click.Path(path_type=Path), default=None)
@click.option("--selection", "sel_path", type=click.Path(path_type=Path), default=None)
@click.option("--alpha", type=float, default=0.05, show_default=True)
@click.pass_context
def export_figures(ctx, run_path, rate_path, sel_path, alpha):
    """Render PNG figures from saved artifacts (run.jsonl, rate.json, selection.json)."""
    out = _require_out(ctx.obj, "export-figures")
    if run_path is None and rate_path is None and sel_path is None:
        raise ConfigError("give at least one of --run, --rate, --selection")
    if run_path is not None:
        try:
            run = NbplRun.from_jsonl(str(run_path))
        except OSError as exc:
            raise DataError(f"cannot read {run_path}: {exc}") from exc
        render_summary_figures(summarize(run, alpha=alpha), out)
    if rate_path is not None:
        try:
            payload = json.loads(Path(rate_path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise DataError(f"cannot read {rate_path}: {exc}") from exc
        rate_figure(RateReport.from_dict(payload), out / "rate.png")
    if sel_path is not None:
        try:
            payload = json.loads(Path(sel_path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise DataError(f"cannot read {sel_path}: {exc}") from exc
        selection_figure(SelectionReport.from_dict(payload), out / "selection.png")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)
    except click.exceptions.Abort:
        sys.exit(130)
    except click.ClickException as exc:
        exc.show()
        sys.exit(2)
    except PolicybootError as exc:
        print(f"error: {exc}", file=sys.stderr)
        sys.exit(exc.exit_code)
    return 0


if __name__ == "__main__":
    main()
