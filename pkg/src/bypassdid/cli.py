"""Batch command-line front end.

Subcommands: ``validate``, ``estimate``, ``pretrends``, ``simulate``, and
``subgroup``.  All machine output is CSV with ``#``-prefixed header lines
echoing the resolved run configuration; figures are rendered to files
next to the delimited output when ``--plot-dir`` is given.

Exit codes: 0 success, 2 input error, 3 estimation or inference error.
"""

from __future__ import annotations

import csv
import io
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .analysis import AnalysisSpec, run_estimate
from .errors import DidError, InputError, SchemaError
from .estimators import RELATIVE
from .inference import (
    BootstrapSpec,
    IntervalEstimate,
    bootstrap_ci,
    bootstrap_pretrend_ci,
    parametric_cis,
    parametric_pretrend_ci,
)
from .panel import PanelDataset, PanelSchema, apply_exclusion, load_panel
from .published import published_cell
from .simulation import (
    builtin_scenario_ids,
    load_scenario,
    metrics_to_csv,
    run_grid,
    twfe_heterogeneity_demo,
)
from .subgroups import compute_proxies, estimate_subgroup, kmeans

EXIT_INPUT = 2
EXIT_ESTIMATION = 3

_PS_MODES = {"invariant": "time_invariant", "per-m": "per_m"}


def _fail(err: Exception) -> None:
    code = EXIT_INPUT if isinstance(err, InputError) else EXIT_ESTIMATION
    click.echo(f"error: {err}", err=True)
    sys.exit(code)


def _load(input_path: str, m_varying: str | None) -> PanelDataset:
    schema = PanelSchema(m_varying=m_varying)
    dataset = load_panel(input_path, schema)
    if "excluded" in dataset.labels:
        flags = [v not in ("", "0") for v in dataset.labels["excluded"]]
        if any(flags):
            dataset = apply_exclusion(dataset, flags)
    return dataset


def _covs(raw: str | None) -> tuple[str, ...] | None:
    if raw is None or raw == "" or raw.lower() == "all":
        return None
    return tuple(s.strip() for s in raw.split(",") if s.strip())


def _config_lines(**kwargs) -> list[str]:
    lines = [f"bypassdid {__version__}"]
    for key in sorted(kwargs):
        lines.append(f"{key}={kwargs[key]}")
    return lines


def _write_output(text: str, out: str | None) -> None:
    if out is None or out == "-":
        click.echo(text, nl=False)
    else:
        Path(out).write_text(text, encoding="utf-8")


@click.group()
@click.version_option(__version__)
def main() -> None:
    """Difference-in-differences estimation for policies with bypass effects."""


@main.command()
@click.argument("input_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--m-varying", default=None, help="Covariate column that varies over observation times.")
def validate(input_path: str, m_varying: str | None) -> None:
    """Load and validate a panel CSV, printing a summary."""
    try:
        dataset = load_panel(input_path, PanelSchema(m_varying=m_varying))
    except DidError as err:
        _fail(err)
    click.echo(f"units: {dataset.n_units}")
    click.echo(f"observation times per period (n_m): {dataset.n_m}")
    click.echo(f"covariates: {', '.join(dataset.covariate_names) or '(none)'}")
    if dataset.m_varying:
        click.echo(f"m-varying covariate: {dataset.m_varying}")
    click.echo("exposure counts:")
    for label, count in dataset.exposure_counts().items():
        click.echo(f"  {label}: {count}")
    click.echo("strata:")
    for label, count in sorted(dataset.stratum_counts().items()):
        click.echo(f"  {label}: {count}")
    if "excluded" in dataset.labels:
        flagged = sum(1 for v in dataset.labels["excluded"] if v not in ("", "0"))
        click.echo(f"excluded flags set: {flagged}")
    for w in dataset.warnings:
        click.echo(f"warning: {w}")


def _interval_csv_rows(names, points, intervals) -> list[list[str]]:
    rows = []
    for name, point in zip(names, points):
        iv = intervals.get(name) if intervals else None
        rows.append(
            [
                str(name),
                repr(float(point)),
                "" if iv is None else repr(float(iv.lower)),
                "" if iv is None else repr(float(iv.upper)),
            ]
        )
    return rows


def _render_csv(header_lines, columns, rows) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(rows)
    return buf.getvalue()


@main.command()
@click.argument("input_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--estimand", type=click.Choice(["att", "atn"]), required=True)
@click.option("--method", type=click.Choice(["twfe", "or", "ipw", "dr"]), required=True)
@click.option("--ps-mode", type=click.Choice(["invariant", "per-m"]), default="invariant", show_default=True)
@click.option("--mu-covs", default=None, help="Comma-separated outcome-model covariates (default: all).")
@click.option("--pi-covs", default=None, help="Comma-separated propensity covariates (default: all).")
@click.option("--windows", type=click.Choice(["annual", "seasonal", "all-m"]), default="annual", show_default=True)
@click.option("--scale", type=click.Choice(["additive", "relative"]), default="additive", show_default=True)
@click.option("--ci", type=click.Choice(["none", "stratified", "bayesian", "parametric"]), default="none", show_default=True)
@click.option("--reps", default=500, show_default=True, help="Bootstrap replicates.")
@click.option("--seed", default=0, show_default=True)
@click.option("--m-varying", default=None)
@click.option("--out", default=None, help="Output CSV path (default: stdout).")
@click.option("--plot-dir", type=click.Path(file_okay=False), default=None, help="Render figures into this directory.")
def estimate(input_path, estimand, method, ps_mode, mu_covs, pi_covs, windows, scale, ci, reps, seed, m_varying, out, plot_dir):
    """Estimate effects per window, optionally with confidence intervals."""
    try:
        dataset = _load(input_path, m_varying)
        spec = AnalysisSpec(
            estimand=estimand,
            method=method,
            ps_mode=_PS_MODES[ps_mode],
            mu_covariates=_covs(mu_covs),
            pi_covariates=_covs(pi_covs),
            windows=windows,
            scale=scale,
        )
        intervals = {}
        per_m_intervals = None
        if ci == "none":
            effect = run_estimate(dataset, spec)
        elif ci == "parametric":
            result = parametric_cis(dataset, spec)
            effect, intervals, per_m_intervals = result.point, result.intervals, result.per_m
        else:
            boot = BootstrapSpec(replicates=reps, seed=seed, flavor=ci)
            result = bootstrap_ci(dataset, spec, boot)
            effect, intervals, per_m_intervals = result.point, result.intervals, result.per_m
            if result.n_failed:
                click.echo(f"note: {result.n_failed} bootstrap replicates failed and were excluded", err=True)
    except DidError as err:
        _fail(err)

    header = _config_lines(
        command="estimate", input=input_path, estimand=estimand, method=method, ps_mode=ps_mode,
        mu_covs=mu_covs or "all", pi_covs=pi_covs or "all", windows=windows, scale=scale, ci=ci,
        reps=reps if ci in ("stratified", "bayesian") else "", seed=seed,
    )
    names = list(effect.aggregates)
    rows = _interval_csv_rows(names, [effect.aggregates[n] for n in names], intervals)
    text = _render_csv(header, ["window", "estimate", "lower", "upper"], rows)
    _write_output(text, out)

    if plot_dir:
        from . import reporting

        plot_path = Path(plot_dir)
        plot_path.mkdir(parents=True, exist_ok=True)
        reporting.save_effects_figure(effect, per_m_intervals, plot_path / "effects.png")
        rows_t = reporting.group_trajectories(dataset)
        (plot_path / "trajectories.csv").write_text(
            reporting.trajectories_csv(rows_t, header), encoding="utf-8"
        )
        reporting.save_trajectories_figure(rows_t, plot_path / "trajectories.png")


@main.command()
@click.argument("input_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--estimand", type=click.Choice(["att", "atn"]), required=True)
@click.option("--method", type=click.Choice(["twfe", "or", "ipw", "dr"]), default="dr", show_default=True)
@click.option("--ps-mode", type=click.Choice(["invariant", "per-m"]), default="invariant", show_default=True)
@click.option("--mu-covs", default=None)
@click.option("--pi-covs", default=None)
@click.option("--ci", type=click.Choice(["stratified", "bayesian", "parametric"]), default="stratified", show_default=True)
@click.option("--reps", default=500, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--m-varying", default=None)
@click.option("--out", default=None)
@click.option("--plot-dir", type=click.Path(file_okay=False), default=None)
def pretrends(input_path, estimand, method, ps_mode, mu_covs, pi_covs, ci, reps, seed, m_varying, out, plot_dir):
    """Placebo effects between pre-period time 1 and each later pre-period time."""
    try:
        dataset = _load(input_path, m_varying)
        spec = AnalysisSpec(
            estimand=estimand,
            method=method,
            ps_mode=_PS_MODES[ps_mode],
            mu_covariates=_covs(mu_covs),
            pi_covariates=_covs(pi_covs),
        )
        intervals: dict[int, IntervalEstimate] = {}
        for m in range(2, dataset.n_m + 1):
            if ci == "parametric":
                intervals[m] = parametric_pretrend_ci(dataset, spec, m)
            else:
                boot = BootstrapSpec(replicates=reps, seed=seed, flavor=ci)
                intervals[m], _ = bootstrap_pretrend_ci(dataset, spec, m, boot)
    except DidError as err:
        _fail(err)

    header = _config_lines(
        command="pretrends", input=input_path, estimand=estimand, method=method,
        ps_mode=ps_mode, ci=ci, reps=reps, seed=seed,
    )
    rows = [
        [str(m), repr(iv.point), repr(iv.lower), repr(iv.upper)] for m, iv in sorted(intervals.items())
    ]
    text = _render_csv(header, ["m", "estimate", "lower", "upper"], rows)
    _write_output(text, out)

    if plot_dir:
        from . import reporting

        plot_path = Path(plot_dir)
        plot_path.mkdir(parents=True, exist_ok=True)
        reporting.save_pretrends_figure(intervals, estimand, plot_path / "pretrends.png")


@main.command()
@click.option("--scenario", default=None, help="Scenario id (1a..3d), 'all', or a preset file path.")
@click.option("--methods", default="twfe,or,ipw,dr", show_default=True)
@click.option("--reps", default=1000, show_default=True, help="Monte Carlo replicates.")
@click.option("--seed", default=0, show_default=True)
@click.option("--ci", type=click.Choice(["none", "stratified"]), default="none", show_default=True)
@click.option("--boot-reps", default=200, show_default=True, help="Bootstrap replicates per Monte Carlo replicate.")
@click.option("--compare-paper", is_flag=True, help="Append published benchmark values per cell.")
@click.option("--demo", type=click.Choice(["twfe-het"]), default=None, help="Run the effect-heterogeneity bias demo instead of the grid.")
@click.option("--n", "demo_n", default=10_000, show_default=True, help="Sample size for --demo.")
@click.option("--out", default=None)
@click.option("--plot-dir", type=click.Path(file_okay=False), default=None)
def simulate(scenario, methods, reps, seed, ci, boot_reps, compare_paper, demo, demo_n, out, plot_dir):
    """Run the Monte Carlo grid (or the TWFE heterogeneity demo) and emit metrics."""
    try:
        if demo == "twfe-het":
            lines = _config_lines(command="simulate", demo=demo, n=demo_n, reps=reps, seed=seed)
            rows = []
            for het in (False, True):
                res = twfe_heterogeneity_demo(n=demo_n, replicates=reps, heterogeneous=het, seed=seed)
                rows.append(
                    [
                        "heterogeneous" if het else "homogeneous",
                        repr(res.truth),
                        repr(res.mean_estimate),
                        f"{res.bias_pct:.3f}",
                    ]
                )
            text = _render_csv(lines, ["setting", "truth", "mean_estimate", "bias_pct"], rows)
            _write_output(text, out)
            return

        if scenario is None:
            raise SchemaError("either --scenario or --demo is required")
        ids = list(builtin_scenario_ids()) if scenario == "all" else [scenario]
        scenarios = [load_scenario(s) for s in ids]
        method_list = tuple(s.strip() for s in methods.split(",") if s.strip())
        boot = BootstrapSpec(replicates=boot_reps, seed=seed) if ci == "stratified" else None
        metrics = run_grid(scenarios, method_list, replicates=reps, boot=boot, seed=seed)
    except DidError as err:
        _fail(err)

    header = _config_lines(
        command="simulate", scenario=scenario, methods=methods, reps=reps, seed=seed,
        ci=ci, boot_reps=boot_reps if ci == "stratified" else "",
    )
    if compare_paper:
        buf = io.StringIO()
        for line in header:
            buf.write(f"# {line}\n")
        buf.write(
            "scenario,estimand,method,bias_pct,std_err,coverage_pct,n_failed,"
            "paper_bias_pct,paper_std_err,paper_coverage_pct\n"
        )
        for r in metrics:
            ref = published_cell(r.scenario, r.estimand, r.method)
            cov = "" if np.isnan(r.coverage_pct) else f"{r.coverage_pct:.1f}"
            extra = ",," if ref is None else f"{ref['bias_pct']},{ref['std_err']},{ref['coverage_pct']}"
            buf.write(
                f"{r.scenario},{r.estimand},{r.method},{r.bias_pct:.3f},{r.std_err:.4f},{cov},{r.n_failed},{extra}\n"
            )
        text = buf.getvalue()
    else:
        text = metrics_to_csv(metrics, header)
    _write_output(text, out)

    if plot_dir:
        from . import reporting

        plot_path = Path(plot_dir)
        plot_path.mkdir(parents=True, exist_ok=True)
        reporting.save_metrics_figure(metrics, plot_path / "simulation_bias.png", compare=compare_paper)


@main.command()
@click.argument("input_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--estimand", type=click.Choice(["att", "atn"]), required=True)
@click.option("--method", type=click.Choice(["twfe", "or", "ipw", "dr"]), default="dr", show_default=True)
@click.option("--scale", type=click.Choice(["additive", "relative"]), default="relative", show_default=True)
@click.option("--windows", type=click.Choice(["annual", "seasonal", "all-m"]), default="annual", show_default=True)
@click.option("--ps-mode", type=click.Choice(["invariant", "per-m"]), default="invariant", show_default=True)
@click.option("--mu-covs", default=None)
@click.option("--pi-covs", default=None)
@click.option("--filter-column", default=None, help="Label column defining subgroups of exposed units.")
@click.option("--adjacency", type=click.Path(exists=True, dir_okay=False), default=None, help="CSV edge list taxed_zone,neighbor_zone.")
@click.option("--zone-measures", type=click.Path(exists=True, dir_okay=False), default=None, help="CSV zone,population,yty_diff.")
@click.option("--unit-zones", type=click.Path(exists=True, dir_okay=False), default=None, help="CSV unit_id,zone mapping exposed units to zones.")
@click.option("--k", default=2, show_default=True, help="Number of proxy clusters.")
@click.option("--ci", type=click.Choice(["none", "stratified", "bayesian"]), default="stratified", show_default=True)
@click.option("--reps", default=500, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--m-varying", default=None)
@click.option("--out", default=None)
def subgroup(input_path, estimand, method, scale, windows, ps_mode, mu_covs, pi_covs, filter_column,
             adjacency, zone_measures, unit_zones, k, ci, reps, seed, m_varying, out):
    """Estimate effects on subgroups of exposed units (labels or proxy clusters)."""
    try:
        label_columns = ("excluded",) if filter_column is None else ("excluded", filter_column)
        dataset = load_panel(input_path, PanelSchema(m_varying=m_varying, label_columns=label_columns))
        if "excluded" in dataset.labels:
            flags = [v not in ("", "0") for v in dataset.labels["excluded"]]
            if any(flags):
                dataset = apply_exclusion(dataset, flags)
        spec = AnalysisSpec(
            estimand=estimand,
            method=method,
            ps_mode=_PS_MODES[ps_mode],
            mu_covariates=_covs(mu_covs),
            pi_covariates=_covs(pi_covs),
            windows=windows,
            scale=scale,
        )
        exposed_label = "treated" if estimand == "att" else "neighbor"
        exposed_mask = dataset.exposure_labels == exposed_label

        groups: dict[str, np.ndarray] = {}
        cluster_note = None
        if filter_column is not None:
            if filter_column not in dataset.labels:
                raise SchemaError(f"input has no column {filter_column!r}")
            values = dataset.labels[filter_column]
            for value in dict.fromkeys(v for v, e in zip(values, exposed_mask) if e):
                groups[value] = exposed_mask & np.array([v == value for v in values])
        elif adjacency is not None and zone_measures is not None and unit_zones is not None:
            measures = {}
            with open(zone_measures, newline="", encoding="utf-8") as fh:
                for row in csv.DictReader(fh):
                    measures[row["zone"]] = (float(row["population"]), float(row["yty_diff"]))
            edges = []
            with open(adjacency, newline="", encoding="utf-8") as fh:
                for row in csv.DictReader(fh):
                    edges.append((row["taxed_zone"], row["neighbor_zone"]))
            proxies = compute_proxies(measures, edges)
            pts = proxies.values
            std = pts.std(axis=0)
            std[std == 0] = 1.0
            assignment = kmeans((pts - pts.mean(axis=0)) / std, k=k, seed=seed)
            zone_cluster = dict(zip(proxies.zones, assignment.labels))
            unit_zone = {}
            with open(unit_zones, newline="", encoding="utf-8") as fh:
                for row in csv.DictReader(fh):
                    unit_zone[row["unit_id"]] = row["zone"]
            order = np.argsort(assignment.centers.sum(axis=1))
            names = {int(order[i]): ("low" if i == 0 else "high" if i == len(order) - 1 else f"mid{i}") for i in range(len(order))}
            for cluster_id in range(k):
                mask = exposed_mask & np.array(
                    [zone_cluster.get(unit_zone.get(uid)) == cluster_id for uid in dataset.unit_ids]
                )
                groups[f"cluster_{names[cluster_id]}"] = mask
            cluster_note = f"k-means inertia {assignment.inertia!r}; cluster sizes " + ", ".join(
                f"{name}:{int(mask.sum())}" for name, mask in groups.items()
            )
        else:
            raise SchemaError(
                "subgroup needs either --filter-column or all of --adjacency/--zone-measures/--unit-zones"
            )

        results = []
        ci_spec = BootstrapSpec(replicates=reps, seed=seed, flavor=ci) if ci != "none" else None
        for name, mask in groups.items():
            effect, boot, warnings = estimate_subgroup(dataset, mask, spec, ci_spec)
            for w in warnings:
                click.echo(f"warning: {name}: {w}", err=True)
            for window, value in effect.aggregates.items():
                iv = boot.intervals.get(window) if boot is not None else None
                results.append(
                    [
                        name,
                        str(int(mask.sum())),
                        window,
                        repr(float(value)),
                        "" if iv is None else repr(float(iv.lower)),
                        "" if iv is None else repr(float(iv.upper)),
                    ]
                )
    except DidError as err:
        _fail(err)

    header = _config_lines(
        command="subgroup", input=input_path, estimand=estimand, method=method, scale=scale,
        windows=windows, ci=ci, reps=reps if ci != "none" else "", seed=seed, k=k if cluster_note else "",
        filter_column=filter_column or "",
    )
    if cluster_note:
        header.append(cluster_note)
    text = _render_csv(header, ["subgroup", "n_exposed", "window", "estimate", "lower", "upper"], results)
    _write_output(text, out)


if __name__ == "__main__":
    main()
