"""Versioned JSON artifacts for fitted models.

Two artifact kinds share one envelope: classic per-population fits
(``lc-svd`` / ``lc-poisson``) and neural training runs (``nlc``). JSON
float round-tripping is exact, and keys are sorted, so identical fits
serialize to identical bytes.
"""

import json

import numpy as np

from .data import PopulationId
from .errors import ConfigError
from .lc_svd import LcParameters
from .model import NeuralLcConfig, TrainingRun
from .nn import weights_from_payload, weights_to_payload

FORMAT_NAME = "lcnet-model"
FORMAT_VERSION = 1


def _params_payload(params_map):
    out = []
    for pop in sorted(params_map):
        p = params_map[pop]
        out.append({
            "country": pop.country,
            "gender": pop.gender,
            "ages": [int(a) for a in p.ages],
            "years": [int(y) for y in p.years],
            "a": [float(v) for v in p.a],
            "b": [float(v) for v in p.b],
            "k": [float(v) for v in p.k],
            "normalized": bool(p.normalized),
        })
    return out


def _params_from_payload(items):
    out = {}
    for item in items:
        pop = PopulationId(item["country"], item["gender"])
        out[pop] = LcParameters(
            a=np.array(item["a"]),
            b=np.array(item["b"]),
            k=np.array(item["k"]),
            normalized=item["normalized"],
            population=pop,
            ages=np.array(item["ages"]),
            years=np.array(item["years"]),
        )
    return out


def classic_payload(kind, params_map):
    if kind not in ("lc-svd", "lc-poisson"):
        raise ConfigError(f"unknown classic model kind {kind!r}")
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "kind": kind,
        "parameters": _params_payload(params_map),
    }


def run_payload(run):
    """Neural artifact; wall-clock metadata is intentionally omitted."""
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "kind": "nlc",
        "config": {k: v for k, v in vars(run.config).items()},
        "seed": run.seed,
        "countries": list(run.countries),
        "genders": list(run.genders),
        "n_ages": run.n_ages,
        "scaling": list(run.scaling) if run.scaling else None,
        "n_examples": run.n_examples,
        "loss_curve": [float(v) for v in run.loss_curve],
        "weights": weights_to_payload(run.weights),
        "parameters": _params_payload(run.parameters),
    }


def dumps(payload):
    return json.dumps(payload, sort_keys=True, indent=1) + "\n"


def save_model(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(payload))


def load_model(path):
    """Load an artifact; returns (kind, parameters_map, run_or_None)."""
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != FORMAT_NAME:
        raise ConfigError(f"{path}: not a {FORMAT_NAME} artifact")
    if payload.get("version") != FORMAT_VERSION:
        raise ConfigError(f"{path}: unsupported version {payload.get('version')!r}")
    kind = payload["kind"]
    params = _params_from_payload(payload["parameters"])
    if kind in ("lc-svd", "lc-poisson"):
        return kind, params, None
    if kind != "nlc":
        raise ConfigError(f"{path}: unknown artifact kind {kind!r}")
    run = TrainingRun(
        config=NeuralLcConfig(**payload["config"]),
        seed=payload["seed"],
        countries=tuple(payload["countries"]),
        genders=tuple(payload["genders"]),
        n_ages=payload["n_ages"],
        loss_curve=list(payload["loss_curve"]),
        weights=weights_from_payload(payload["weights"]),
        parameters=params,
        scaling=tuple(payload["scaling"]) if payload["scaling"] else None,
        n_examples=payload["n_examples"],
    )
    return kind, params, run
