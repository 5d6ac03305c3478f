"""Command-line front end.

Subcommands: ingest, synth, fit, forecast, evaluate, experiment. All
randomness flows from explicit --seed values; nothing is seeded from the
clock, so identical invocations produce identical artifacts.

Set LCNET_DATA_DIR to a directory containing Mx_1x1/, Deaths_1x1/ and
Exposures_1x1/ subdirectories to omit the ingest path options.
"""

import json
import os

import click
import numpy as np

from . import data, serialize, snapshot
from .errors import LcnetError
from .evaluation import score
from .experiment import (
    CLASSIC_MODELS,
    MODEL_IDS,
    ExperimentConfig,
    fit_classic,
    neural_config_for,
    poisson_ready_populations,
    predict_from_parameters,
    project_parameters,
    report_payload,
    run_experiment,
    subset_panel,
    write_fan_csv,
)
from .forecast import fit_rwd, forecast_rates, project_k
from .model import train
from .synth import GeneratorSpec, generate, truth_to_payload

ENV_DATA_DIR = "LCNET_DATA_DIR"


def _fail(err):
    raise click.ClickException(str(err))


@click.group()
def main():
    """Lee-Carter mortality modelling: classic, Poisson, and neural fits."""


def _default_subdir(name):
    base = os.environ.get(ENV_DATA_DIR)
    if base:
        candidate = os.path.join(base, name)
        if os.path.isdir(candidate):
            return candidate
    return None


@main.command()
@click.option("--rates", "rates_dir", type=click.Path(exists=True, file_okay=False),
              default=lambda: _default_subdir("Mx_1x1"),
              help="Directory of Mx_1x1 files (default: $LCNET_DATA_DIR/Mx_1x1).")
@click.option("--deaths", "deaths_dir", type=click.Path(exists=True, file_okay=False),
              default=lambda: _default_subdir("Deaths_1x1"))
@click.option("--exposures", "exposures_dir",
              type=click.Path(exists=True, file_okay=False),
              default=lambda: _default_subdir("Exposures_1x1"))
@click.option("--cutoff-year", default=data.DEFAULT_CUTOFF_YEAR, show_default=True)
@click.option("--min-years", default=data.DEFAULT_MIN_YEARS, show_default=True)
@click.option("--train-max-year", default=data.DEFAULT_TRAIN_MAX_YEAR,
              show_default=True)
@click.option("--max-age", default=99, show_default=True,
              help="Highest age kept (grid runs 0..max-age).")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--report", "report_path", type=click.Path(),
              help="Where to write the ingestion report (default: <out>.report.txt).")
def ingest(rates_dir, deaths_dir, exposures_dir, cutoff_year, min_years,
           train_max_year, max_age, out_path, report_path):
    """Parse source files, select and impute populations, write a snapshot."""
    if rates_dir is None and (deaths_dir is None or exposures_dir is None):
        _fail("need --rates, or both --deaths and --exposures "
              f"(or set ${ENV_DATA_DIR})")
    try:
        rates = data.load_directory(rates_dir, "rates") if rates_dir else None
        deaths = data.load_directory(deaths_dir, "deaths") if deaths_dir else None
        expos = (
            data.load_directory(exposures_dir, "exposures")
            if exposures_dir else None
        )
        primary = rates if rates is not None else deaths
        selected = data.select_populations(primary, cutoff_year, min_years)
        ages = range(max_age + 1)
        surfaces = data.build_surfaces(
            rate_tables=rates, deaths_tables=deaths, exposure_tables=expos,
            populations=selected, ages=ages,
        )
        surfaces = data.impute_missing(surfaces)
        panel = data.assemble_panel(surfaces, train_max_year, ages=ages)
        snapshot.save_panel(panel, out_path)
    except LcnetError as err:
        _fail(err)

    countries = sorted({pop.country for pop in panel.surfaces})
    lines = [
        f"countries selected: {len(countries)}",
        f"populations selected: {len(panel.surfaces)}",
        f"training examples (years <= {panel.train_max_year}): "
        f"{panel.n_training_examples}",
        f"counts available: {'yes' if deaths and expos else 'no'}",
        "",
        "imputed cells per population:",
    ]
    total_imputed = 0
    for pop in panel.population_ids():
        n = int(panel.surfaces[pop].imputed.sum())
        total_imputed += n
        if n:
            lines.append(f"  {pop.label()}: {n}")
    lines.append(f"total imputed cells: {total_imputed}")
    report_text = "\n".join(lines) + "\n"
    report_path = report_path or out_path + ".report.txt"
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write(report_text)
    click.echo(report_text.rstrip())
    click.echo(f"panel snapshot written to {out_path}")


@main.command()
@click.option("--populations", default=8, show_default=True)
@click.option("--ages", default=100, show_default=True)
@click.option("--years", default=30, show_default=True)
@click.option("--test-years", default=0, show_default=True)
@click.option("--start-year", default=1970, show_default=True)
@click.option("--noise", type=click.Choice(["none", "gaussian", "poisson"]),
              default="none", show_default=True)
@click.option("--exposure", default=1e5, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--truth-out", "truth_path", type=click.Path(),
              help="Ground-truth sidecar (default: <out>.truth.json).")
def synth(populations, ages, years, test_years, start_year, noise, exposure,
          seed, out_path, truth_path):
    """Generate a synthetic panel with known ground-truth parameters."""
    spec = GeneratorSpec(
        n_populations=populations, n_ages=ages, n_years=years,
        test_years=test_years, start_year=start_year, noise=noise,
        exposure=exposure, seed=seed,
    )
    try:
        result = generate(spec)
        snapshot.save_panel(result.panel, out_path)
    except LcnetError as err:
        _fail(err)
    truth_path = truth_path or out_path + ".truth.json"
    with open(truth_path, "w", encoding="utf-8") as fh:
        fh.write(serialize.dumps(truth_to_payload(result.truth)))
    click.echo(
        f"synthetic panel ({populations} populations, {ages} ages, {years} "
        f"years, noise={noise}) written to {out_path}"
    )
    click.echo(f"ground truth written to {truth_path}")


def _training_log_mse(params_map, panel):
    total, cells = 0.0, 0
    for pop, params in params_map.items():
        surf = panel.surfaces[pop]
        cols = surf.years <= panel.train_max_year
        resid = params.fitted() - surf.log_rates[:, cols]
        total += float(np.sum(resid**2))
        cells += resid.size
    return total / cells


@main.command()
@click.option("--panel", "panel_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--model", "model_id", required=True,
              type=click.Choice(list(MODEL_IDS)))
@click.option("--seed", default=0, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True),
              help="JSON file of neural-network settings.")
@click.option("--epochs", type=int, help="Override training epochs.")
@click.option("--batch-size", type=int, help="Override batch size (0 = full batch).")
@click.option("--out", "out_path", required=True, type=click.Path())
def fit(panel_path, model_id, seed, config_path, epochs, batch_size, out_path):
    """Fit one model on a panel snapshot and write its artifact."""
    try:
        panel = snapshot.load_panel(panel_path)
        if model_id in CLASSIC_MODELS:
            fit_panel = panel
            if model_id == "lc-poisson":
                ok, excluded = poisson_ready_populations(panel)
                for pop, reason in sorted(excluded.items()):
                    click.echo(f"excluding {pop.label()}: {reason}", err=True)
                if not ok:
                    _fail("no population has complete counts for lc-poisson")
                fit_panel = subset_panel(panel, ok)
            params = fit_classic(fit_panel, model_id)
            serialize.save_model(
                out_path, serialize.classic_payload(model_id, params)
            )
            n_values = sum(p.a.size + p.b.size + p.k.size for p in params.values())
            click.echo(
                f"{model_id}: {len(params)} populations, "
                f"{n_values} parameter values, training log-scale MSE "
                f"{_training_log_mse(params, fit_panel):.6e}"
            )
        else:
            overrides = {}
            if config_path:
                with open(config_path, "r", encoding="utf-8") as fh:
                    overrides.update(json.load(fh))
            if epochs is not None:
                overrides["epochs"] = epochs
            if batch_size is not None:
                overrides["batch_size"] = batch_size or None
            cfg = neural_config_for(model_id, overrides, seed)
            fit_panel = panel
            if cfg.loss == "poisson":
                ok, excluded = poisson_ready_populations(panel)
                for pop, reason in sorted(excluded.items()):
                    click.echo(f"excluding {pop.label()}: {reason}", err=True)
                if not ok:
                    _fail(f"no population has complete counts for {model_id}")
                fit_panel = subset_panel(panel, ok)
            run = train(fit_panel, cfg)
            serialize.save_model(out_path, serialize.run_payload(run))
            click.echo(
                f"{model_id}: {run.weights.size} trainable parameters, "
                f"{run.n_examples} training examples, final loss "
                f"{run.loss_curve[-1]:.6e} ({run.wall_seconds:.1f}s)"
            )
    except LcnetError as err:
        _fail(err)
    click.echo(f"model artifact written to {out_path}")


@main.command()
@click.option("--model", "model_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--horizon", required=True, type=int)
@click.option("--level", default=0.95, show_default=True,
              help="Central interval coverage (1 - alpha).")
@click.option("--drift-uncertainty", is_flag=True,
              help="Include estimated-drift variance in the intervals.")
@click.option("--out", "out_path", required=True, type=click.Path())
def forecast(model_path, horizon, level, drift_uncertainty, out_path):
    """Project a fitted model's period indices and write the fan CSV."""
    if horizon <= 0:
        raise click.UsageError("--horizon must be positive")
    if not 0.0 < level < 1.0:
        raise click.UsageError("--level must be in (0, 1)")
    try:
        _, params_map, _ = serialize.load_model(model_path)
        alpha = 1.0 - level
        fans = {}
        for pop, params in params_map.items():
            fan = project_k(fit_rwd(params.k), horizon, alpha=alpha,
                            drift_uncertainty=drift_uncertainty)
            fans[pop] = forecast_rates(params, fan)
        write_fan_csv(out_path, fans, alpha)
    except LcnetError as err:
        _fail(err)
    click.echo(
        f"forecast fans for {len(fans)} populations (horizon {horizon}, "
        f"level {level:g}) written to {out_path}"
    )


@main.command()
@click.option("--model", "model_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--panel", "panel_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--csv", "csv_path", type=click.Path(),
              help="Also write the per-population MSEs as CSV.")
def evaluate(model_path, panel_path, out_path, csv_path):
    """Score a fitted model on a panel's held-out years."""
    try:
        kind, params_map, _ = serialize.load_model(model_path)
        panel = snapshot.load_panel(panel_path)
        missing = set(params_map) - set(panel.surfaces)
        if missing:
            _fail(
                "model populations absent from panel: "
                + ", ".join(sorted(p.label() for p in missing))
            )
        grid_panel = (
            panel if set(params_map) == set(panel.surfaces)
            else subset_panel(panel, params_map)
        )
        preds = predict_from_parameters(params_map, grid_panel)
        report = score(preds, grid_panel, run_id=kind)
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(serialize.dumps(report_payload(report)))
        if csv_path:
            import csv as csv_mod

            with open(csv_path, "w", newline="", encoding="utf-8") as fh:
                writer = csv_mod.writer(fh)
                writer.writerow(["country", "gender", "mse", "cells"])
                for pop in sorted(report.per_population):
                    writer.writerow([
                        pop.country, pop.gender,
                        repr(report.per_population[pop]),
                        report.cells_per_population[pop],
                    ])
    except LcnetError as err:
        _fail(err)
    click.echo(
        f"{kind}: forecasting MSE {report.global_mse * 1e4:.2f} x 1e-4 over "
        f"{len(report.per_population)} populations"
    )
    click.echo(f"report written to {out_path}")


def _load_population_sizes(value):
    if value is None or isinstance(value, dict):
        return value
    sizes = {}
    with open(value, "r", encoding="utf-8") as fh:
        import csv as csv_mod

        for row in csv_mod.reader(fh):
            if not row or row[0].lower() == "country":
                continue
            sizes[row[0]] = float(row[1])
    return sizes


def _experiment_config(config_path, overrides):
    payload = {}
    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    payload.update({k: v for k, v in overrides.items() if v is not None})

    synth_spec = payload.get("synth")
    if synth_spec is not None:
        synth_spec = GeneratorSpec(**synth_spec)
    models = payload.get("models") or ()
    seeds = payload.get("seeds", [0])
    return ExperimentConfig(
        models=tuple(models),
        output_dir=payload.get("output_dir", "experiment-out"),
        panel_path=payload.get("panel"),
        synth=synth_spec,
        seeds=tuple(seeds),
        train_max_year=payload.get("train_max_year"),
        horizon=payload.get("horizon"),
        alpha=payload.get("alpha", 0.05),
        drift_uncertainty=payload.get("drift_uncertainty", False),
        neural=payload.get("neural", {}),
        population_sizes=_load_population_sizes(payload.get("population_sizes")),
        workers=payload.get("workers", 1),
        figures=payload.get("figures", True),
    )


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True),
              help="JSON experiment description (see README for the schema).")
@click.option("--panel", "panel_path", type=click.Path(exists=True))
@click.option("--models", "models_csv",
              help="Comma-separated model list, e.g. lc-svd,nlc-lcn-mse.")
@click.option("--seeds", "seeds_csv", help="Comma-separated seed list.")
@click.option("--out", "output_dir", type=click.Path())
@click.option("--workers", type=int, default=None,
              help="Parallel (model, seed) runs.")
@click.option("--figures/--no-figures", "figures_flag", default=None,
              help="Render matplotlib figures next to the CSV tables.")
def experiment(config_path, panel_path, models_csv, seeds_csv, output_dir,
               workers, figures_flag):
    """Run every requested (model, seed), score them, write the bundle.

    Precedence: command-line flags > config file > defaults. The bundle is
    resumable: completed runs are skipped on rerun.
    """
    overrides = {
        "panel": panel_path,
        "models": models_csv.split(",") if models_csv else None,
        "seeds": [int(s) for s in seeds_csv.split(",")] if seeds_csv else None,
        "output_dir": output_dir,
        "workers": workers,
        "figures": figures_flag,
    }
    try:
        config = _experiment_config(config_path, overrides)
        status, outdir = run_experiment(config)
    except LcnetError as err:
        _fail(err)
    for run_id in status["runs"]:
        click.echo(f"completed: {run_id}")
    for run_id, message in status["failures"].items():
        click.echo(f"FAILED {run_id}: {message}", err=True)
    summary = os.path.join(outdir, "tables", "summary_full.txt")
    if os.path.exists(summary):
        click.echo(open(summary, "r", encoding="utf-8").read().rstrip())
    click.echo(f"bundle written to {outdir}")
    if not status["complete"]:
        raise SystemExit(1)


if __name__ == "__main__":
    main()
