"""Experiment bundles, serialization round trips, and the CLI surface."""

import json
import os

import numpy as np
import pytest
from click.testing import CliRunner

from lcnet import serialize, snapshot
from lcnet.cli import main
from lcnet.data import PopulationId
from lcnet.errors import ConfigError
from lcnet.experiment import (
    ExperimentConfig,
    load_manifest,
    neural_config_for,
    poisson_ready_populations,
    run_experiment,
    subset_panel,
)
from lcnet.model import NeuralLcConfig, train
from lcnet.synth import GeneratorSpec, generate

SMALL_NEURAL = {
    "hidden": 3, "kernel": 4, "stride": 4, "epochs": 25,
    "embed_country_a": 2, "embed_gender_a": 2,
    "embed_country_b": 2, "embed_gender_b": 2,
    "dropout_a": 0.0, "dropout_b": 0.0, "dropout_k": 0.0,
}


def small_synth(**kw):
    spec = dict(n_populations=4, n_ages=12, n_years=12, test_years=4, seed=3,
                noise="poisson", exposure=1e5)
    spec.update(kw)
    return GeneratorSpec(**spec)


def small_experiment(outdir, **kw):
    base = dict(
        models=("lc-svd", "nlc-lcn-mse"),
        output_dir=str(outdir),
        synth=small_synth(),
        seeds=(1, 2),
        neural=dict(SMALL_NEURAL),
        figures=False,
    )
    base.update(kw)
    return ExperimentConfig(**base)


def test_neural_config_for_parses_ids():
    cfg = neural_config_for("nlc-cnn-poisson", {}, 7)
    assert cfg.variant == "cnn"
    assert cfg.loss == "poisson"
    assert cfg.seed == 7
    with pytest.raises(ConfigError, match="unknown neural config keys"):
        neural_config_for("nlc-fcn-mse", {"learning_rate": 0.1}, 0)


def test_config_validation():
    with pytest.raises(ConfigError, match="at least one model"):
        ExperimentConfig(models=(), output_dir="x", synth=small_synth()).validate()
    with pytest.raises(ConfigError, match="unknown models"):
        ExperimentConfig(models=("lc-magic",), output_dir="x",
                         synth=small_synth()).validate()
    with pytest.raises(ConfigError, match="panel_path or synth"):
        ExperimentConfig(models=("lc-svd",), output_dir="x").validate()
    with pytest.raises(ConfigError, match="seed"):
        ExperimentConfig(models=("nlc-fcn-mse",), output_dir="x",
                         synth=small_synth(), seeds=()).validate()


def test_poisson_readiness_rules():
    panel = generate(small_synth()).panel
    ok, excluded = poisson_ready_populations(panel)
    assert len(ok) == 4 and not excluded
    broken = panel.population_ids()[0]
    panel.surfaces[broken].exposures[0, 0] = 0.0
    ok, excluded = poisson_ready_populations(panel)
    assert broken in excluded and len(ok) == 3
    panel.surfaces[broken].deaths = None
    _, excluded = poisson_ready_populations(panel)
    assert "counts" in excluded[broken]


def test_serialize_round_trips(tmp_path):
    panel = generate(small_synth()).panel
    run = train(panel, NeuralLcConfig(variant="lcn", loss="poisson", seed=4,
                                      batch_size=None, **{
        k: v for k, v in SMALL_NEURAL.items() if k not in ("epochs",)
    }, epochs=10))
    path = tmp_path / "run.json"
    serialize.save_model(path, serialize.run_payload(run))
    kind, params, back = serialize.load_model(path)
    assert kind == "nlc"
    assert back.config == run.config
    assert np.array_equal(back.weights.flat, run.weights.flat)
    assert back.loss_curve == run.loss_curve
    for pop in run.parameters:
        np.testing.assert_array_equal(params[pop].a, run.parameters[pop].a)
        np.testing.assert_array_equal(params[pop].k, run.parameters[pop].k)

    from lcnet.experiment import fit_classic

    classic = fit_classic(panel, "lc-svd")
    cpath = tmp_path / "classic.json"
    serialize.save_model(cpath, serialize.classic_payload("lc-svd", classic))
    kind, cparams, none_run = serialize.load_model(cpath)
    assert kind == "lc-svd" and none_run is None
    for pop in classic:
        np.testing.assert_array_equal(cparams[pop].b, classic[pop].b)


def test_experiment_bundle_and_rerun_identical(tmp_path):
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    status_a, _ = run_experiment(small_experiment(out_a))
    status_b, _ = run_experiment(small_experiment(out_b))
    assert status_a["complete"] and status_b["complete"]
    ma, mb = load_manifest(out_a), load_manifest(out_b)
    assert ma == mb
    for required in (
        "config.json", "status.json", "panel.txt", "truth.json",
        "tables/global_mse.csv", "tables/beats_full.csv",
        "tables/per_population_full.csv", "tables/per_age_full.csv",
        "tables/boxplot_series.csv", "tables/envelopes_nlc-lcn-mse.csv",
        "tables/summary_full.txt",
        "runs/lc-svd/model.json", "runs/nlc-lcn-mse/seed1/model.json",
        "runs/nlc-lcn-mse/seed1/loss_curve.csv",
        "runs/nlc-lcn-mse/seed1/forecast.csv",
    ):
        assert required in ma, f"missing {required}"


def test_experiment_resume_skips_completed(tmp_path):
    out = tmp_path / "bundle"
    config = small_experiment(out)
    run_experiment(config)
    before = load_manifest(out)
    # Poison one artifact's marker content; completed runs are detected by
    # the marker, so nothing is refit and the manifest is unchanged.
    stamp = os.path.getmtime(out / "runs" / "lc-svd" / "model.json")
    run_experiment(small_experiment(out))
    after = load_manifest(out)
    assert before == after
    assert os.path.getmtime(out / "runs" / "lc-svd" / "model.json") == stamp


def test_experiment_partial_failure_marks_incomplete(tmp_path):
    panel = generate(small_synth()).panel
    for pop in panel.surfaces:
        panel.surfaces[pop].deaths = None
        panel.surfaces[pop].exposures = None
    panel_path = tmp_path / "panel.txt"
    snapshot.save_panel(panel, panel_path)
    config = small_experiment(
        tmp_path / "out",
        models=("lc-svd", "lc-poisson"),
        synth=None,
        panel_path=str(panel_path),
    )
    status, _ = run_experiment(config)
    assert not status["complete"]
    assert "lc-poisson" in status["failures"]
    assert status["runs"] == ["lc-svd"]
    payload = json.load(open(tmp_path / "out" / "status.json"))
    assert payload["failures"]


def test_experiment_with_population_sizes_writes_split(tmp_path):
    sizes = {"S00": 100.0, "S01": 50.0}
    config = small_experiment(
        tmp_path / "out", population_sizes=sizes, models=("lc-svd", "lc-poisson")
    )
    run_experiment(config)
    split = open(tmp_path / "out" / "tables" / "split_full.csv").read()
    assert "high_population_mse" in split
    assert "lc-poisson" in split


def test_experiment_parallel_workers_match_serial(tmp_path):
    serial = small_experiment(tmp_path / "serial")
    parallel = small_experiment(tmp_path / "parallel", workers=3)
    run_experiment(serial)
    run_experiment(parallel)
    a = load_manifest(tmp_path / "serial")
    b = load_manifest(tmp_path / "parallel")
    # config.json records the worker count; everything else is identical.
    for key in set(a) | set(b):
        if key == "config.json":
            continue
        assert a.get(key) == b.get(key), key


def test_figures_rendered_when_enabled(tmp_path):
    config = small_experiment(tmp_path / "out", figures=True)
    run_experiment(config)
    fig_dir = tmp_path / "out" / "figures"
    assert (fig_dir / "boxplot_mse.png").exists()
    assert (fig_dir / "per_age_mse.png").exists()
    assert list((fig_dir / "envelopes").glob("*.png"))
    assert (tmp_path / "out" / "runs" / "nlc-lcn-mse" / "seed1"
            / "loss_curve.png").exists()


# ---------------------------------------------------------------------------
# CLI surface


HEADER = "Testland, Death rates (period 1x1)\n\n Year Age Female Male Total\n"


def write_hmd_dir(base, kind, value, countries=("AAA", "BBB"),
                  years=range(1988, 2004), ages=range(3)):
    d = base / kind
    d.mkdir(parents=True, exist_ok=True)
    for country in countries:
        rows = []
        for y in years:
            for a in ages:
                rows.append(f"{y} {a} {value} {value} {value}")
        (d / f"{country}.{kind}_1x1.txt").write_text(HEADER + "\n".join(rows) + "\n")
    return d


def test_cli_ingest_fit_evaluate_round_trip(tmp_path):
    runner = CliRunner()
    rates = write_hmd_dir(tmp_path, "Mx", "0.01")
    deaths = write_hmd_dir(tmp_path, "Deaths", "12.0")
    expos = write_hmd_dir(tmp_path, "Exposures", "1200.0")
    panel_path = tmp_path / "panel.txt"
    result = runner.invoke(main, [
        "ingest", "--rates", str(rates), "--deaths", str(deaths),
        "--exposures", str(expos), "--min-years", "5",
        "--max-age", "2", "--train-max-year", "1999",
        "--out", str(panel_path),
    ])
    assert result.exit_code == 0, result.output
    assert "populations selected: 4" in result.output
    assert (tmp_path / "panel.txt.report.txt").exists()

    panel = snapshot.load_panel(panel_path)
    assert panel.n_training_examples == 4 * 12  # 1988..1999 per population

    model_path = tmp_path / "svd.json"
    result = runner.invoke(main, [
        "fit", "--panel", str(panel_path), "--model", "lc-svd",
        "--out", str(model_path),
    ])
    assert result.exit_code == 0, result.output
    assert "training log-scale MSE" in result.output

    report_path = tmp_path / "report.json"
    result = runner.invoke(main, [
        "evaluate", "--model", str(model_path), "--panel", str(panel_path),
        "--out", str(report_path), "--csv", str(tmp_path / "report.csv"),
    ])
    assert result.exit_code == 0, result.output
    payload = json.load(open(report_path))
    assert "global_mse" in payload
    assert (tmp_path / "report.csv").read_text().startswith("country,gender")


def test_cli_ingest_corrupt_file_fails_with_location(tmp_path):
    runner = CliRunner()
    rates = write_hmd_dir(tmp_path, "Mx", "0.01", countries=("AAA",))
    bad = rates / "BAD.Mx_1x1.txt"
    bad.write_text(HEADER + "1990 0 0.01 oops 0.01\n")
    result = runner.invoke(main, [
        "ingest", "--rates", str(rates), "--out", str(tmp_path / "p.txt"),
        "--min-years", "1", "--max-age", "2",
    ])
    assert result.exit_code != 0
    assert "BAD.Mx_1x1.txt" in result.output
    assert "line 4" in result.output


def test_cli_fit_without_counts_fails_fast_for_poisson(tmp_path):
    runner = CliRunner()
    rates = write_hmd_dir(tmp_path, "Mx", "0.01")
    panel_path = tmp_path / "panel.txt"
    result = runner.invoke(main, [
        "ingest", "--rates", str(rates), "--min-years", "5", "--max-age", "2",
        "--out", str(panel_path),
    ])
    assert result.exit_code == 0, result.output
    result = runner.invoke(main, [
        "fit", "--panel", str(panel_path), "--model", "lc-poisson",
        "--out", str(tmp_path / "m.json"),
    ])
    assert result.exit_code != 0
    assert "counts" in result.output


def test_cli_fit_seeded_artifacts_byte_identical(tmp_path):
    runner = CliRunner()
    panel_path = tmp_path / "panel.txt"
    result = runner.invoke(main, [
        "synth", "--populations", "4", "--ages", "12", "--years", "10",
        "--seed", "5", "--out", str(panel_path),
    ])
    assert result.exit_code == 0, result.output
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(SMALL_NEURAL))
    outs = []
    for name in ("one.json", "two.json"):
        result = runner.invoke(main, [
            "fit", "--panel", str(panel_path), "--model", "nlc-lcn-mse",
            "--seed", "9", "--config", str(cfg_path),
            "--out", str(tmp_path / name),
        ])
        assert result.exit_code == 0, result.output
        outs.append((tmp_path / name).read_bytes())
    assert outs[0] == outs[1]
    assert "trainable parameters" in result.output


def test_cli_forecast_usage_errors(tmp_path):
    runner = CliRunner()
    result = runner.invoke(main, [
        "forecast", "--model", __file__, "--horizon", "0", "--out", "x.csv",
    ])
    assert result.exit_code == 2
    assert "horizon" in result.output


def test_cli_forecast_writes_fan(tmp_path):
    runner = CliRunner()
    panel_path = tmp_path / "panel.txt"
    runner.invoke(main, [
        "synth", "--populations", "2", "--ages", "8", "--years", "10",
        "--seed", "2", "--out", str(panel_path),
    ])
    model_path = tmp_path / "m.json"
    runner.invoke(main, [
        "fit", "--panel", str(panel_path), "--model", "lc-svd",
        "--out", str(model_path),
    ])
    fan_path = tmp_path / "fan.csv"
    result = runner.invoke(main, [
        "forecast", "--model", str(model_path), "--horizon", "7",
        "--level", "0.9", "--drift-uncertainty", "--out", str(fan_path),
    ])
    assert result.exit_code == 0, result.output
    lines = fan_path.read_text().splitlines()
    assert lines[0] == "population,age,year,point,lower,upper,level"
    # 2 populations x 8 ages x 7 years.
    assert len(lines) == 1 + 2 * 8 * 7


def test_cli_experiment_with_config_file(tmp_path):
    runner = CliRunner()
    config = {
        "synth": {"n_populations": 4, "n_ages": 12, "n_years": 12,
                  "test_years": 4, "seed": 3},
        "models": ["lc-svd", "nlc-lcn-mse"],
        "seeds": [1],
        "neural": SMALL_NEURAL,
        "output_dir": str(tmp_path / "bundle"),
        "figures": False,
    }
    cfg_path = tmp_path / "exp.json"
    cfg_path.write_text(json.dumps(config))
    result = runner.invoke(main, ["experiment", "--config", str(cfg_path)])
    assert result.exit_code == 0, result.output
    assert "completed: lc-svd" in result.output
    assert (tmp_path / "bundle" / "MANIFEST.txt").exists()


def test_cli_experiment_empty_models_rejected(tmp_path):
    runner = CliRunner()
    cfg_path = tmp_path / "exp.json"
    cfg_path.write_text(json.dumps({
        "synth": {"n_populations": 2, "n_ages": 8, "n_years": 8,
                  "test_years": 2},
        "models": [],
        "output_dir": str(tmp_path / "b"),
    }))
    result = runner.invoke(main, ["experiment", "--config", str(cfg_path)])
    assert result.exit_code != 0
    assert "at least one model" in result.output


def test_subset_panel_roundtrip():
    panel = generate(small_synth()).panel
    keep = panel.population_ids()[:2]
    sub = subset_panel(panel, keep)
    assert sub.population_ids() == keep
    assert sub.train_max_year == panel.train_max_year
