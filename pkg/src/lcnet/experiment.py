"""End-to-end experiment runner: fit, forecast, score, report, render.

A bundle directory holds one subdirectory per (model, seed) run with its
serialized artifact, loss curve, forecast fan, and score report, plus
cross-model tables, boxplot series, parameter envelopes, optional figures,
and a digest manifest. Runs are deterministic given (inputs, config,
seeds), reruns are byte-identical, and completed runs are skipped on
resume.
"""

import csv
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import serialize, snapshot
from .data import GENDERS, PanelDataset
from .errors import ConfigError, DataError, LcnetError
from .evaluation import compare, format_comparison, gender_mse, score, variability_summary
from .forecast import fit_rwd, forecast_rates, project_k
from .lc_poisson import fit_lc_poisson
from .lc_svd import fit_lc_svd
from .model import NeuralLcConfig, train
from .synth import GeneratorSpec, generate, truth_to_payload

CLASSIC_MODELS = ("lc-svd", "lc-poisson")
NEURAL_MODELS = (
    "nlc-fcn-mse", "nlc-lcn-mse", "nlc-cnn-mse",
    "nlc-fcn-poisson", "nlc-lcn-poisson", "nlc-cnn-poisson",
)
MODEL_IDS = CLASSIC_MODELS + NEURAL_MODELS


@dataclass
class ExperimentConfig:
    """Resolved experiment settings (CLI overrides > file > defaults)."""

    models: tuple
    output_dir: str
    panel_path: str | None = None
    synth: GeneratorSpec | None = None
    seeds: tuple = (0,)
    train_max_year: int | None = None
    horizon: int | None = None
    alpha: float = 0.05
    drift_uncertainty: bool = False
    neural: dict = field(default_factory=dict)
    population_sizes: dict | None = None
    workers: int = 1
    figures: bool = True

    def validate(self):
        if not self.models:
            raise ConfigError("at least one model is required")
        unknown = [m for m in self.models if m not in MODEL_IDS]
        if unknown:
            raise ConfigError(f"unknown models {unknown}; choose from {MODEL_IDS}")
        if any(m in NEURAL_MODELS for m in self.models) and not self.seeds:
            raise ConfigError("neural models need at least one seed")
        if (self.panel_path is None) == (self.synth is None):
            raise ConfigError("exactly one of panel_path or synth is required")
        return self


def neural_config_for(model_id, overrides, seed):
    """NeuralLcConfig for a model id like nlc-lcn-mse, plus overrides."""
    _, variant, loss = model_id.split("-")
    loss = "mse-scaled" if loss == "mse" else "poisson"
    allowed = set(NeuralLcConfig.__dataclass_fields__) - {"variant", "loss", "seed"}
    bad = set(overrides) - allowed
    if bad:
        raise ConfigError(f"unknown neural config keys {sorted(bad)}")
    return NeuralLcConfig(variant=variant, loss=loss, seed=seed, **overrides)


def poisson_ready_populations(panel):
    """Populations with complete, positive counts on their training years.

    Populations with missing or zero exposures (or missing deaths) on any
    training cell are excluded from Poisson fits, mirroring the treatment
    of incomplete count data in the reference experiments.
    """
    ok, excluded = [], {}
    for pop in panel.population_ids():
        surf = panel.surfaces[pop]
        cols = surf.years <= panel.train_max_year
        if surf.deaths is None or surf.exposures is None:
            excluded[pop] = "no death/exposure counts"
            continue
        deaths = surf.deaths[:, cols]
        exposures = surf.exposures[:, cols]
        if not (np.all(np.isfinite(deaths)) and np.all(deaths >= 0)):
            excluded[pop] = "incomplete death counts"
        elif not (np.all(np.isfinite(exposures)) and np.all(exposures > 0)):
            excluded[pop] = "incomplete exposures"
        else:
            ok.append(pop)
    return ok, excluded


def subset_panel(panel, populations):
    keep = set(populations)
    return replace(
        panel,
        surfaces={pop: s for pop, s in panel.surfaces.items() if pop in keep},
    )


def fit_classic(panel, model_id):
    """Per-population classic fits over the panel's training years."""
    params = {}
    for pop in panel.population_ids():
        surf = panel.surfaces[pop]
        train_years = panel.train_years(pop)
        if model_id == "lc-svd":
            params[pop] = fit_lc_svd(surf, train_years=train_years)
        else:
            cols = surf.years <= panel.train_max_year
            fitted = fit_lc_poisson(surf.deaths[:, cols], surf.exposures[:, cols])
            params[pop] = replace(
                fitted, population=pop, ages=surf.ages.copy(),
                years=surf.years[cols].copy(),
            )
    return params


def project_parameters(params_map, panel, alpha=0.05, drift_uncertainty=False,
                       horizon=None):
    """Per-population forecast fans covering the panel's test years."""
    fans = {}
    for pop, params in params_map.items():
        test_years = panel.test_years(pop)
        needed = (
            int(test_years.max() - params.years.max()) if test_years.size else 1
        )
        h = max(needed, horizon or 1)
        if horizon is not None and horizon < needed:
            raise ConfigError(
                f"horizon {horizon} does not cover test years of {pop.label()}"
            )
        fan = project_k(fit_rwd(params.k), h, alpha=alpha,
                        drift_uncertainty=drift_uncertainty)
        fans[pop] = forecast_rates(params, fan)
    return fans


def predict_from_parameters(params_map, panel, alpha=0.05,
                            drift_uncertainty=False):
    """Point log-rate predictions on each population's test grid."""
    fans = project_parameters(params_map, panel, alpha, drift_uncertainty)
    out = {}
    for pop, fan in fans.items():
        test_years = panel.test_years(pop)
        last = int(params_years_max(params_map[pop]))
        idx = np.asarray(test_years, dtype=int) - last - 1
        out[pop] = fan.log_point[:, idx]
    return out


def params_years_max(params):
    if params.years is None:
        raise DataError("parameters carry no year labels")
    return np.max(params.years)


def _float(value):
    return repr(float(value))


def write_fan_csv(path, fans, alpha):
    """population, age, year, point, lower, upper, level (log-rate scale)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["population", "age", "year", "point", "lower", "upper", "level"]
        )
        level = repr(1.0 - alpha)
        for pop in sorted(fans):
            fan = fans[pop]
            years = (
                fan.years
                if fan.years is not None
                else np.arange(1, fan.horizon + 1)
            )
            ages = np.arange(fan.log_point.shape[0])
            for i, age in enumerate(ages):
                for j, year in enumerate(years):
                    writer.writerow([
                        pop.label(), int(age), int(year),
                        _float(fan.log_point[i, j]),
                        _float(fan.log_lower[i, j]),
                        _float(fan.log_upper[i, j]),
                        level,
                    ])


def write_loss_csv(path, loss_curve):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss"])
        for epoch, value in enumerate(loss_curve):
            writer.writerow([epoch, _float(value)])


def report_payload(report):
    return {
        "run_id": report.run_id,
        "global_mse": report.global_mse,
        "log_scale_mse": report.log_scale_mse,
        "per_population": {
            pop.label(): report.per_population[pop]
            for pop in sorted(report.per_population)
        },
        "per_age": {str(age): report.per_age[age] for age in sorted(report.per_age)},
        "cells_per_population": {
            pop.label(): report.cells_per_population[pop]
            for pop in sorted(report.cells_per_population)
        },
    }


@dataclass
class RunResult:
    run_id: str
    model_id: str
    seed: int | None
    params: dict
    run: object = None  # TrainingRun for neural models
    error: str | None = None


def _run_dir(outdir, model_id, seed):
    name = model_id if seed is None else f"{model_id}/seed{seed}"
    return os.path.join(outdir, "runs", name)


def _execute_job(panel, config, model_id, seed):
    """Fit one (model, seed) and write its artifacts. Returns a RunResult."""
    run_dir = _run_dir(config.output_dir, model_id, seed)
    os.makedirs(run_dir, exist_ok=True)
    marker = os.path.join(run_dir, "done")
    artifact = os.path.join(run_dir, "model.json")
    run_id = model_id if seed is None else f"{model_id}#s{seed}"

    if os.path.exists(marker) and os.path.exists(artifact):
        kind, params, run = serialize.load_model(artifact)
        return RunResult(run_id, model_id, seed, params, run)

    if model_id in CLASSIC_MODELS:
        fit_panel = panel
        if model_id == "lc-poisson":
            ok, _ = poisson_ready_populations(panel)
            if not ok:
                raise DataError("no population has complete counts for lc-poisson")
            fit_panel = subset_panel(panel, ok)
        params = fit_classic(fit_panel, model_id)
        serialize.save_model(artifact, serialize.classic_payload(model_id, params))
        run = None
    else:
        cfg = neural_config_for(model_id, config.neural, seed)
        fit_panel = panel
        if cfg.loss == "poisson":
            ok, _ = poisson_ready_populations(panel)
            if not ok:
                raise DataError(f"no population has complete counts for {model_id}")
            fit_panel = subset_panel(panel, ok)
        run = train(fit_panel, cfg)
        serialize.save_model(artifact, serialize.run_payload(run))
        write_loss_csv(os.path.join(run_dir, "loss_curve.csv"), run.loss_curve)
        params = run.parameters

    fans = project_parameters(
        params, panel, alpha=config.alpha,
        drift_uncertainty=config.drift_uncertainty, horizon=config.horizon,
    )
    write_fan_csv(os.path.join(run_dir, "forecast.csv"), fans, config.alpha)
    with open(marker, "w", encoding="utf-8") as fh:
        fh.write("complete\n")
    return RunResult(run_id, model_id, seed, params, run)


def _job_wrapper(args):
    panel, config, model_id, seed = args
    try:
        return _execute_job(panel, config, model_id, seed)
    except Exception as err:  # recorded per run; the bundle continues
        kind = type(err).__name__ if not isinstance(err, LcnetError) else ""
        message = f"{kind}: {err}" if kind else str(err)
        return RunResult(
            model_id if seed is None else f"{model_id}#s{seed}",
            model_id, seed, {}, error=message,
        )


def resolve_panel(config):
    """Load or generate the experiment panel (and write the synth sidecars)."""
    if config.panel_path is not None:
        panel = snapshot.load_panel(config.panel_path)
    else:
        result = generate(config.synth)
        panel = result.panel
        os.makedirs(config.output_dir, exist_ok=True)
        snapshot.save_panel(panel, os.path.join(config.output_dir, "panel.txt"))
        with open(os.path.join(config.output_dir, "truth.json"), "w",
                  encoding="utf-8") as fh:
            fh.write(serialize.dumps(truth_to_payload(result.truth)))
    if config.train_max_year is not None:
        panel = replace(panel, train_max_year=int(config.train_max_year))
    if not panel.test_years():
        raise ConfigError("panel has no test years to evaluate on")
    return panel


def run_experiment(config):
    """Run every (model, seed), score, and write the report bundle.

    Returns (status dict, output_dir). The bundle is marked incomplete when
    any run fails; completed runs are never recomputed on resume.
    """
    config.validate()
    os.makedirs(config.output_dir, exist_ok=True)
    panel = resolve_panel(config)

    with open(os.path.join(config.output_dir, "config.json"), "w",
              encoding="utf-8") as fh:
        fh.write(serialize.dumps(_config_payload(config)))

    jobs = []
    for model_id in config.models:
        if model_id in CLASSIC_MODELS:
            jobs.append((model_id, None))
        else:
            jobs.extend((model_id, seed) for seed in config.seeds)

    args = [(panel, config, model_id, seed) for model_id, seed in jobs]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_job_wrapper, args))
    else:
        results = [_job_wrapper(a) for a in args]

    failures = {r.run_id: r.error for r in results if r.error}
    completed = [r for r in results if not r.error]

    if completed:
        _write_reports(config, panel, completed)

    status = {
        "complete": not failures,
        "runs": sorted(r.run_id for r in completed),
        "failures": dict(sorted(failures.items())),
    }
    with open(os.path.join(config.output_dir, "status.json"), "w",
              encoding="utf-8") as fh:
        fh.write(serialize.dumps(status))
    write_manifest(config.output_dir)
    return status, config.output_dir


def _config_payload(config):
    payload = {
        "models": list(config.models),
        "seeds": list(config.seeds),
        "panel_path": config.panel_path,
        "synth": None if config.synth is None else {
            k: (v.tolist() if isinstance(v, np.ndarray) else v)
            for k, v in vars(config.synth).items()
        },
        "train_max_year": config.train_max_year,
        "horizon": config.horizon,
        "alpha": config.alpha,
        "drift_uncertainty": config.drift_uncertainty,
        "neural": dict(sorted(config.neural.items())),
        "population_sizes": config.population_sizes,
        "workers": config.workers,
        "figures": config.figures,
    }
    return payload


def _grid_key(params):
    return tuple(sorted(params))


def _write_reports(config, panel, results):
    """Cross-model tables, boxplot series, envelopes, and figures."""
    tables_dir = os.path.join(config.output_dir, "tables")
    os.makedirs(tables_dir, exist_ok=True)

    # Score every run on its own grid; group runs by grid for comparisons.
    reports = {}
    predictions = {}
    for res in results:
        grid_panel = (
            panel
            if set(res.params) == set(panel.surfaces)
            else subset_panel(panel, res.params)
        )
        preds = predict_from_parameters(
            res.params, grid_panel, alpha=config.alpha,
            drift_uncertainty=config.drift_uncertainty,
        )
        predictions[res.run_id] = preds
        reports[res.run_id] = score(preds, grid_panel, run_id=res.run_id)
        run_dir = _run_dir(config.output_dir, res.model_id, res.seed)
        with open(os.path.join(run_dir, "report.json"), "w",
                  encoding="utf-8") as fh:
            fh.write(serialize.dumps(report_payload(reports[res.run_id])))

    _write_global_csv(tables_dir, results, reports)

    grids = {}
    for res in results:
        grids.setdefault(_grid_key(res.params), set()).add(res.run_id)

    primary = {}  # model_id -> first-seed run_id
    for res in results:
        primary.setdefault(res.model_id, res.run_id)

    for gi, (grid, run_ids) in enumerate(sorted(grids.items())):
        tag = "full" if set(grid) == set(panel.surfaces) else f"subset{gi}"
        grid_panel = (
            panel if tag == "full" else subset_panel(panel, list(grid))
        )
        grid_reports = []
        for model_id, run_id in sorted(primary.items()):
            rep = reports[run_id]
            if _grid_key(rep.per_population) == grid:
                grid_reports.append(rep)
            elif set(grid) < set(rep.per_population):
                # Restrict a full-grid model onto the smaller grid so the
                # comparison stays apples-to-apples.
                restricted = {
                    pop: predictions[run_id][pop] for pop in grid
                }
                grid_reports.append(
                    score(restricted, grid_panel, run_id=rep.run_id)
                )
        if len(grid_reports) < 1:
            continue
        table = compare(grid_reports, population_sizes=config.population_sizes)
        _write_comparison_tables(tables_dir, tag, table, grid_reports)

    _write_boxplot_series(tables_dir, results, reports)
    summaries = _write_envelopes(config, tables_dir, results, reports)

    if config.figures:
        _render_figures(config, panel, results, reports, summaries, primary)


def _write_global_csv(tables_dir, results, reports):
    with open(os.path.join(tables_dir, "global_mse.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "seed", "run_id", "populations",
                         "global_mse", "log_scale_mse"])
        for res in sorted(results, key=lambda r: r.run_id):
            rep = reports[res.run_id]
            writer.writerow([
                res.model_id,
                "" if res.seed is None else res.seed,
                res.run_id,
                len(rep.per_population),
                _float(rep.global_mse),
                _float(rep.log_scale_mse),
            ])


def _write_comparison_tables(tables_dir, tag, table, grid_reports):
    with open(os.path.join(tables_dir, f"beats_{tag}.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model_a", "model_b", "populations_won",
                         "populations_total", "ages_won", "ages_total"])
        for (a, b), bc in sorted(table.beat_counts.items()):
            writer.writerow([a, b, bc.populations_won, bc.populations_total,
                             bc.ages_won, bc.ages_total])

    by_report = {r.run_id: r for r in grid_reports}
    pops = sorted(grid_reports[0].per_population)
    with open(os.path.join(tables_dir, f"per_population_{tag}.csv"), "w",
              newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["country", "gender"] + table.run_ids + ["winner"])
        for pop in pops:
            writer.writerow(
                [pop.country, pop.gender]
                + [_float(by_report[rid].per_population[pop]) for rid in table.run_ids]
                + [table.population_winners[pop]]
            )

    with open(os.path.join(tables_dir, f"per_age_{tag}.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["age"] + table.run_ids)
        for age in sorted(table.per_age):
            writer.writerow(
                [age] + [_float(table.per_age[age][rid]) for rid in table.run_ids]
            )

    if table.split is not None:
        with open(os.path.join(tables_dir, f"split_{tag}.csv"), "w", newline="",
                  encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["model", "high_population_mse", "low_population_mse"])
            for rid in table.run_ids:
                writer.writerow([
                    rid, _float(table.split[rid]["high"]),
                    _float(table.split[rid]["low"]),
                ])

    with open(os.path.join(tables_dir, f"summary_{tag}.txt"), "w",
              encoding="utf-8") as fh:
        fh.write(format_comparison(table) + "\n")


def _write_boxplot_series(tables_dir, results, reports):
    with open(os.path.join(tables_dir, "boxplot_series.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "seed", "group", "mse"])
        for res in sorted(results, key=lambda r: r.run_id):
            for group in ("female", "male", "total"):
                writer.writerow([
                    res.model_id,
                    "" if res.seed is None else res.seed,
                    group,
                    _float(gender_mse(reports[res.run_id], group)),
                ])


def _write_envelopes(config, tables_dir, results, reports):
    """Across-seed variability per neural model; returns the summaries."""
    summaries = {}
    by_model = {}
    for res in results:
        if res.run is not None:
            by_model.setdefault(res.model_id, []).append(res)
    for model_id, group in sorted(by_model.items()):
        if len(group) < 2:
            continue
        group = sorted(group, key=lambda r: r.seed)
        summary = variability_summary(
            [r.run for r in group], [reports[r.run_id] for r in group]
        )
        summaries[model_id] = summary
        path = os.path.join(tables_dir, f"envelopes_{model_id}.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["country", "gender", "parameter", "position",
                             "minimum", "maximum"])
            for pop in sorted(summary.envelopes):
                env = summary.envelopes[pop]
                params = group[0].run.parameters[pop]
                for name in ("a", "b", "k"):
                    grid = params.ages if name in ("a", "b") else params.years
                    low, high = env[name]
                    for pos, lo_v, hi_v in zip(grid, low, high):
                        writer.writerow([
                            pop.country, pop.gender, name, int(pos),
                            _float(lo_v), _float(hi_v),
                        ])
    return summaries


def _render_figures(config, panel, results, reports, summaries, primary):
    from . import figures

    fig_dir = os.path.join(config.output_dir, "figures")
    os.makedirs(fig_dir, exist_ok=True)

    by_model = {}
    for res in sorted(results, key=lambda r: r.run_id):
        by_model.setdefault(res.model_id, []).append(res)

    neural_values = {
        model_id: {
            group: [gender_mse(reports[r.run_id], group) for r in group_results]
            for group in ("female", "male", "total")
        }
        for model_id, group_results in by_model.items()
        if group_results[0].run is not None
    }
    benchmarks = {
        model_id: {
            group: gender_mse(reports[group_results[0].run_id], group)
            for group in ("female", "male", "total")
        }
        for model_id, group_results in by_model.items()
        if group_results[0].run is None
    }
    if neural_values:
        figures.render_mse_boxplots(
            neural_values, os.path.join(fig_dir, "boxplot_mse.png"),
            benchmarks=benchmarks or None,
        )

    primary_reports = [reports[rid] for rid in sorted(primary.values())]
    full = [
        r for r in primary_reports
        if set(r.per_population) == set(panel.surfaces)
    ]
    if full:
        per_age = {
            age: {r.run_id: r.per_age[age] for r in full}
            for age in sorted(full[0].per_age)
        }
        figures.render_per_age_mse(
            per_age, os.path.join(fig_dir, "per_age_mse.png")
        )

    for res in sorted(results, key=lambda r: r.run_id):
        if res.run is not None:
            run_dir = _run_dir(config.output_dir, res.model_id, res.seed)
            figures.render_loss_curve(
                res.run.loss_curve, os.path.join(run_dir, "loss_curve.png")
            )

    env_dir = os.path.join(fig_dir, "envelopes")
    for model_id, summary in sorted(summaries.items()):
        os.makedirs(env_dir, exist_ok=True)
        countries = sorted({pop.country for pop in summary.envelopes})
        sample = by_model[model_id][0].run.parameters
        for country in countries:
            by_gender = {
                pop.gender: summary.envelopes[pop]
                for pop in summary.envelopes
                if pop.country == country
            }
            any_pop = next(
                pop for pop in summary.envelopes if pop.country == country
            )
            figures.render_parameter_envelopes(
                country, by_gender,
                sample[any_pop].ages, sample[any_pop].years,
                os.path.join(env_dir, f"{model_id}_{country}.png"),
            )


def write_manifest(outdir):
    """SHA-256 digest of every bundle file, sorted by path."""
    entries = []
    for root, _, files in os.walk(outdir):
        for name in files:
            if name == "MANIFEST.txt":
                continue
            path = os.path.join(root, name)
            rel = os.path.relpath(path, outdir)
            digest = hashlib.sha256(open(path, "rb").read()).hexdigest()
            entries.append((rel.replace(os.sep, "/"), digest))
    entries.sort()
    with open(os.path.join(outdir, "MANIFEST.txt"), "w", encoding="utf-8") as fh:
        for rel, digest in entries:
            fh.write(f"{digest}  {rel}\n")
    return dict(entries)


def load_manifest(outdir):
    path = os.path.join(outdir, "MANIFEST.txt")
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            digest, rel = line.strip().split("  ", 1)
            out[rel] = digest
    return out
