"""Batch command-line interface.

Study verbs read an optional JSON config mirroring the scenario fields;
command-line flags override config values.  Outputs are CSV tables plus a
run-manifest JSON and rendered figures in the chosen output directory.
"""

from __future__ import annotations

import json
import pathlib
import time

import click
import numpy as np
import pandas as pd

from . import __version__, emissions as em
from .criteria import (
    information_criteria,
    select_by_gof,
    select_by_ic,
    write_criteria_csv,
)
from .dgp import DgpSpec, export_series, simulate_dgp
from .em import EmConfig, em_fit
from .forecast import (
    forecast_panel,
    load_panel,
    observed_vs_predicted,
    results_table,
)
from .gof import AVG_CVM, CVM, KS, bootstrap_pvalue
from .mc import McScenario, power_curve, run_power_study, run_selection_study
from .model import HmmModel, SeriesData
from . import report

FAMILIES = {
    "gaussian": em.GAUSSIAN_FAMILY,
    "poisson-log": em.POISSON_LOG,
    "poisson-linear": em.POISSON_LINEAR,
}


def read_series_csv(path) -> SeriesData:
    """CSV with a y column and optional z2..zr columns; z1 is implied."""
    df = pd.read_csv(path)
    y = df["y"].to_numpy(dtype=float)
    zcols = sorted(
        (c for c in df.columns if c.startswith("z") and c[1:].isdigit()),
        key=lambda c: int(c[1:]),
    )
    if zcols:
        z = df[zcols].to_numpy(dtype=float)
        if not np.all(z[:, 0] == 1.0):
            z = np.column_stack([np.ones(len(y)), z])
    else:
        z = np.ones((len(y), 1))
    return SeriesData(y=y, z=z)


def _write_manifest(out: pathlib.Path, command: str, config: dict, t0: float) -> None:
    manifest = {
        "command": command,
        "config": config,
        "wall_time_s": time.time() - t0,
        "version": __version__,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, default=str)


def _load_config(config_path) -> dict:
    if config_path is None:
        return {}
    with open(config_path) as fh:
        return json.load(fh)


@click.group()
def main():
    """ARX-HMM fitting, goodness-of-fit testing, and regime selection."""


@main.command()
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--ell", required=True, type=int)
@click.option("--p", "lag_order", default=0, type=int, show_default=True)
@click.option("--family", default="gaussian", type=click.Choice(sorted(FAMILIES)))
@click.option("--zero-inflated", is_flag=True)
@click.option("--restarts", default=10, show_default=True)
@click.option("--seed", default=None, type=int)
@click.option("--out", "out_path", default="model.json", show_default=True)
def fit(data_path, ell, lag_order, family, zero_inflated, restarts, seed, out_path):
    """Fit an ARX-HMM by EM and write the model as JSON."""
    data = read_series_csv(data_path)
    cfg = EmConfig(restarts=restarts, seed=seed)
    result = em_fit(
        data, ell, lag_order, family=FAMILIES[family],
        zero_inflated=zero_inflated, config=cfg,
    )
    pathlib.Path(out_path).write_text(result.model.to_json())
    click.echo(
        f"loglik={result.loglik:.6f} iters={result.iters} "
        f"converged={result.converged} n_params={result.n_params}"
    )


@main.command()
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--ell", required=True, type=int)
@click.option("--p", "lag_order", default=0, type=int, show_default=True)
@click.option("--family", default="gaussian", type=click.Choice(sorted(FAMILIES)))
@click.option("--zero-inflated", is_flag=True)
@click.option("--statistic", default=AVG_CVM, type=click.Choice([CVM, KS, AVG_CVM]))
@click.option("--bootstrap", "-B", "B", default=100, show_default=True)
@click.option("--randomizations", "-M", "M", default=50, show_default=True)
@click.option("--seed", default=None, type=int)
@click.option("--workers", default=1, show_default=True)
@click.option("--out", "out_path", default=None)
def gof(data_path, ell, lag_order, family, zero_inflated, statistic, B, M, seed, workers, out_path):
    """Bootstrap goodness-of-fit P-value for a fitted model."""
    data = read_series_csv(data_path)
    rep = bootstrap_pvalue(
        data, ell, lag_order, family=FAMILIES[family], zero_inflated=zero_inflated,
        statistic=statistic, B=B, M=M, seed=seed, workers=workers,
    )
    click.echo(f"statistic={rep.observed:.6f} p_value={rep.p_value:.4f}")
    if out_path:
        pathlib.Path(out_path).write_text(rep.to_json())


@main.command()
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--ell-min", default=1, show_default=True)
@click.option("--ell-max", default=4, show_default=True)
@click.option("--p", "lag_order", default=0, type=int, show_default=True)
@click.option("--family", default="gaussian", type=click.Choice(sorted(FAMILIES)))
@click.option("--zero-inflated", is_flag=True)
@click.option("--method", default="gof", type=click.Choice(["gof", "aic", "bic", "icl"]))
@click.option("--statistic", default=AVG_CVM, type=click.Choice([CVM, KS, AVG_CVM]))
@click.option("--bootstrap", "-B", "B", default=100, show_default=True)
@click.option("--randomizations", "-M", "M", default=50, show_default=True)
@click.option("--alpha", default=0.05, show_default=True)
@click.option("--seed", default=None, type=int)
@click.option("--workers", default=1, show_default=True)
@click.option("--out", "out_path", default=None, help="criteria table CSV")
def select(data_path, ell_min, ell_max, lag_order, family, zero_inflated, method,
           statistic, B, M, alpha, seed, workers, out_path):
    """Select the number of regimes by GoF sequence or criterion minimum."""
    data = read_series_csv(data_path)
    ells = list(range(max(ell_min, 2 if zero_inflated else 1), ell_max + 1))
    if method == "gof":
        sel = select_by_gof(
            data, ells, lag_order, family=FAMILIES[family], zero_inflated=zero_inflated,
            statistic=statistic, B=B, M=M, alpha=alpha, seed=seed, workers=workers,
        )
        click.echo(f"selected ell={sel.selected} adequate={sel.adequate}")
        for ell, pv in sel.p_values.items():
            click.echo(f"  ell={ell}: p={pv:.4f}")
        if out_path:
            rows = []
            for ell, repto in sel.reports.items():
                row = information_criteria(repto.fit, data)
                row.gof_pvalue = repto.p_value
                rows.append(row)
            write_criteria_csv(rows, out_path)
    else:
        rows = []
        for ell in ells:
            fitres = em_fit(
                data, ell, lag_order, family=FAMILIES[family],
                zero_inflated=zero_inflated, config=EmConfig(seed=seed),
            )
            rows.append(information_criteria(fitres, data))
        chosen = select_by_ic(rows, method)
        click.echo(f"selected ell={chosen} by {method}")
        if out_path:
            write_criteria_csv(rows, out_path)


@main.command()
@click.option("--dgp", "model_id", required=True, type=click.Choice(["M1", "M2", "M3", "M4"]))
@click.option("--experiment", default=1, type=click.IntRange(1, 2), show_default=True)
@click.option("--ell1", default=1, type=click.IntRange(1, 2), show_default=True)
@click.option("--n", "n_obs", default=250, show_default=True)
@click.option("--seed", default=None, type=int)
@click.option("--out", "out_path", default="series.csv", show_default=True)
def simulate(model_id, experiment, ell1, n_obs, seed, out_path):
    """Simulate one series from a built-in data-generating process."""
    spec = DgpSpec(model_id, experiment, ell1, n_obs, seed=seed)
    data, states = simulate_dgp(spec)
    export_series(data, states, out_path)
    click.echo(f"wrote {n_obs} observations to {out_path}")


def _scenario_from(config, model_id, experiment, ell1, n_obs, ell_test, statistic,
                   M, N, B, seed, workers) -> McScenario:
    base = dict(config)
    dgp_cfg = base.pop("dgp", {})
    if model_id:
        dgp_cfg.update({"model_id": model_id})
    dgp_cfg.setdefault("model_id", "M1")
    if experiment is not None:
        dgp_cfg["experiment"] = experiment
    if ell1 is not None:
        dgp_cfg["ell1"] = ell1
    if n_obs is not None:
        dgp_cfg["n"] = n_obs
    dgp_cfg.setdefault("experiment", 1)
    dgp_cfg.setdefault("ell1", 1)
    dgp_cfg.setdefault("n", 250)
    if ell_test:
        base["ell_test"] = list(ell_test)
    if statistic is not None:
        base["statistic"] = statistic
    for key, val in (("M", M), ("N", N), ("B", B), ("seed", seed), ("workers", workers)):
        if val is not None:
            base[key] = val
    base["dgp"] = dgp_cfg
    return McScenario.from_dict(base)


@main.command("power-study")
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@click.option("--dgp", "model_id", default=None, type=click.Choice(["M1", "M2", "M3", "M4"]))
@click.option("--experiment", default=None, type=click.IntRange(1, 2))
@click.option("--ell1", default=None, type=click.IntRange(1, 2))
@click.option("--n", "n_obs", default=None, type=int)
@click.option("--ell-test", multiple=True, type=int)
@click.option("--statistic", default=None, type=click.Choice([CVM, KS, AVG_CVM]))
@click.option("-M", "--randomizations", "M", default=None, type=int)
@click.option("-N", "--replications", "N", default=None, type=int)
@click.option("-B", "--bootstrap", "B", default=None, type=int)
@click.option("--seed", default=None, type=int)
@click.option("--workers", default=None, type=int)
@click.option("--out", "out_dir", default="power_study_out", show_default=True)
def power_study_cmd(config_path, model_id, experiment, ell1, n_obs, ell_test, statistic,
                    M, N, B, seed, workers, out_dir):
    """Rejection rates of the goodness-of-fit test across regime counts."""
    t0 = time.time()
    scenario = _scenario_from(
        _load_config(config_path), model_id, experiment, ell1, n_obs,
        ell_test, statistic, M, N, B, seed, workers,
    )
    out = pathlib.Path(out_dir)
    table, _ = run_power_study(scenario, out_dir=out)
    report.plot_power_study(table, out / "power_study.png")
    _write_manifest(out, "power-study", scenario.to_dict(), t0)
    click.echo(table.to_string(index=False))


@main.command("selection-study")
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@click.option("--dgp", "model_id", default=None, type=click.Choice(["M1", "M2", "M3", "M4"]))
@click.option("--experiment", default=None, type=click.IntRange(1, 2))
@click.option("--ell1", default=None, type=click.IntRange(1, 2))
@click.option("--n", "n_obs", default=None, type=int)
@click.option("--method", "methods", multiple=True,
              type=click.Choice(["gof", "aic", "bic", "icl"]))
@click.option("--statistic", default=None, type=click.Choice([CVM, KS, AVG_CVM]))
@click.option("-M", "--randomizations", "M", default=None, type=int)
@click.option("-N", "--replications", "N", default=None, type=int)
@click.option("-B", "--bootstrap", "B", default=None, type=int)
@click.option("--seed", default=None, type=int)
@click.option("--workers", default=None, type=int)
@click.option("--out", "out_dir", default="selection_study_out", show_default=True)
def selection_study_cmd(config_path, model_id, experiment, ell1, n_obs, methods,
                        statistic, M, N, B, seed, workers, out_dir):
    """Selection frequencies of GoF and information-criterion methods."""
    t0 = time.time()
    scenario = _scenario_from(
        _load_config(config_path), model_id, experiment, ell1, n_obs,
        (), statistic, M, N, B, seed, workers,
    )
    methods = methods or ("gof", "aic", "bic", "icl")
    out = pathlib.Path(out_dir)
    table, _ = run_selection_study(scenario, methods=methods, out_dir=out)
    report.plot_selection_study(table, out / "selection_study.png")
    _write_manifest(out, "selection-study", scenario.to_dict(), t0)
    click.echo(table.to_string(index=False))


@main.command("power-curve")
@click.option("--lambda-grid", default="1,2,3,4,5,6", show_default=True,
              help="comma-separated means of the extra regime")
@click.option("--n-grid", default="250,500", show_default=True)
@click.option("--base-means", default="1", show_default=True)
@click.option("--null-ell", default=None, type=int)
@click.option("-N", "--replications", "N", default=200, show_default=True)
@click.option("-B", "--bootstrap", "B", default=100, show_default=True)
@click.option("-M", "--randomizations", "M", default=25, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--workers", default=1, show_default=True)
@click.option("--out", "out_dir", default="power_curve_out", show_default=True)
def power_curve_cmd(lambda_grid, n_grid, base_means, null_ell, N, B, M, seed, workers, out_dir):
    """Power of the test vs. separation of Poisson regime means."""
    t0 = time.time()
    lams = [float(v) for v in lambda_grid.split(",")]
    ns = [int(v) for v in n_grid.split(",")]
    base = [float(v) for v in base_means.split(",")]
    out = pathlib.Path(out_dir)
    table = power_curve(
        lams, ns, base_means=base, null_ell=null_ell, N=N, B=B, M=M,
        seed=seed, workers=workers, out_dir=out,
    )
    report.plot_power_curve(table, out / "power_curve.png")
    _write_manifest(out, "power-curve", {"lambda_grid": lams, "n_grid": ns}, t0)
    click.echo(table.to_string(index=False))


@main.command("forecast")
@click.option("--data", "cases_path", required=True, type=click.Path(exists=True))
@click.option("--adjacency", "adj_path", required=True, type=click.Path(exists=True))
@click.option("--train-end", required=True,
              help="last training date (YYYY-MM-DD) or observation count")
@click.option("--horizon", default=7, show_default=True)
@click.option("--ell-range", default="2,3,4", show_default=True)
@click.option("--p-max", default=14, show_default=True)
@click.option("-B", "--bootstrap", "B", default=100, show_default=True)
@click.option("-M", "--randomizations", "M", default=50, show_default=True)
@click.option("--seed", default=None, type=int)
@click.option("--workers", default=1, show_default=True)
@click.option("--out", "out_dir", default="forecast_out", show_default=True)
def forecast_cmd(cases_path, adj_path, train_end, horizon, ell_range, p_max, B, M,
                 seed, workers, out_dir):
    """Scan models per unit and predict the held-out window."""
    t0 = time.time()
    panel = load_panel(cases_path, adj_path)
    if train_end.isdigit():
        train_n = int(train_end)
    else:
        cutoff = pd.Timestamp(train_end)
        train_n = int((panel.dates <= cutoff).sum())
    ells = tuple(int(v) for v in ell_range.split(","))
    results = forecast_panel(
        panel, train_n, horizon=horizon, ell_range=ells,
        p_range=tuple(range(p_max + 1)), B=B, M=M, seed=seed, workers=workers,
    )
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = results_table(results)
    table.to_csv(out / "forecast.csv", index=False)
    scatter = observed_vs_predicted(panel, results, train_n, horizon)
    scatter.to_csv(out / "observed_vs_predicted.csv", index=False)
    report.plot_observed_vs_predicted(scatter, out / "observed_vs_predicted.png")
    _write_manifest(out, "forecast", {"train_end": train_end, "horizon": horizon}, t0)
    click.echo(table.to_string(index=False))


if __name__ == "__main__":
    main()
