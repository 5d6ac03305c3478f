"""Synthetic mortality panels with known ground-truth parameters.

Every recovery and acceptance test leans on this generator: log-rates are
built exactly as age_profile + sensitivity * period_index (optionally with
gaussian or Poisson observation noise), so fitted parameters can be
compared against the truth.

Poisson counts are drawn with sequential-search inversion for small means
and Hormann's transformed rejection (PTRS) above, so any reimplementation
reproduces the distributions (in law, not bit-streams) from the same
uniform source.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .data import GENDERS, MortalitySurface, PanelDataset, PopulationId, impute_missing
from .errors import DataError

POISSON_INVERSION_LIMIT = 30.0


@dataclass
class GeneratorSpec:
    """What to generate; unset truth arrays fall back to realistic shapes."""

    n_populations: int = 8
    n_ages: int = 100
    n_years: int = 30
    start_year: int = 1970
    exposure: float = 1e5
    noise: str = "none"  # none | gaussian | poisson
    gaussian_sigma: float = 0.05
    seed: int = 0
    test_years: int = 0  # trailing years held out of the fitting period
    a: np.ndarray | None = None  # (n_populations, n_ages)
    b: np.ndarray | None = None
    k: np.ndarray | None = None  # (n_populations, n_years)
    drift: np.ndarray | None = None  # per population, drives k when k is None
    k_sigma: np.ndarray | None = None


@dataclass
class PanelTruth:
    """Ground-truth parameters keyed by population."""

    a: dict
    b: dict
    k: dict
    drift: dict
    k_sigma: dict


@dataclass
class SynthPanel:
    """Generated panel plus its (inert) truth sidecar."""

    panel: PanelDataset
    truth: PanelTruth


def poisson_draw(rng, lam):
    """One Poisson draw: inversion below the limit, PTRS rejection above."""
    if lam < 0 or not math.isfinite(lam):
        raise ValueError(f"invalid Poisson mean {lam}")
    if lam == 0.0:
        return 0
    if lam < POISSON_INVERSION_LIMIT:
        return _poisson_inversion(rng, lam)
    return _poisson_ptrs(rng, lam)


def _poisson_inversion(rng, lam):
    # Sequential search along the CDF with one uniform.
    u = rng.random()
    p = math.exp(-lam)
    cdf = p
    k = 0
    while u > cdf:
        k += 1
        p *= lam / k
        cdf += p
        if p == 0.0:  # numerical tail guard
            break
    return k


def _poisson_ptrs(rng, lam):
    # Hormann's transformed rejection with squeeze; valid for lam >= 10.
    log_lam = math.log(lam)
    b = 0.931 + 2.53 * math.sqrt(lam)
    a = -0.059 + 0.02483 * b
    inv_alpha = 1.1239 + 1.1328 / (b - 3.4)
    v_r = 0.9277 - 3.6224 / (b - 2.0)
    while True:
        u = rng.random() - 0.5
        v = rng.random()
        us = 0.5 - abs(u)
        k = math.floor((2.0 * a / us + b) * u + lam + 0.43)
        if us >= 0.07 and v <= v_r:
            return int(k)
        if k < 0 or (us < 0.013 and v > us):
            continue
        if math.log(v) + math.log(inv_alpha) - math.log(a / (us * us) + b) <= (
            k * log_lam - lam - math.lgamma(k + 1.0)
        ):
            return int(k)


def _default_truth(spec, rng):
    n_pop, n_ages, n_years = spec.n_populations, spec.n_ages, spec.n_years
    x = np.arange(n_ages) / max(1, n_ages - 1)

    a = spec.a
    if a is None:
        # Gompertz-like ramp from infant levels to old-age levels.
        base = -9.5 + 8.0 * x**0.9
        a = base[None, :] + 0.2 * rng.standard_normal((n_pop, 1))
        a = a + 0.05 * rng.standard_normal((n_pop, n_ages))

    b = spec.b
    if b is None:
        centers = rng.uniform(0.25, 0.75, size=n_pop)
        widths = rng.uniform(0.15, 0.3, size=n_pop)
        b = np.exp(-0.5 * ((x[None, :] - centers[:, None]) / widths[:, None]) ** 2)
        b = b + 0.1
        b = b / b.sum(axis=1, keepdims=True)

    drift = spec.drift
    if drift is None:
        drift = rng.uniform(-2.0, -0.5, size=n_pop)
    drift = np.broadcast_to(np.asarray(drift, dtype=float), (n_pop,)).copy()

    k_sigma = spec.k_sigma
    if k_sigma is None:
        k_sigma = np.full(n_pop, 0.2)
    k_sigma = np.broadcast_to(np.asarray(k_sigma, dtype=float), (n_pop,)).copy()

    k = spec.k
    if k is None:
        innovations = drift[:, None] + k_sigma[:, None] * rng.standard_normal(
            (n_pop, n_years - 1)
        )
        k = np.concatenate(
            [np.zeros((n_pop, 1)), np.cumsum(innovations, axis=1)], axis=1
        )
        k = k - k.mean(axis=1, keepdims=True)

    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    k = np.asarray(k, dtype=float)
    if a.shape != (n_pop, n_ages) or b.shape != (n_pop, n_ages):
        raise DataError(
            f"truth a/b must have shape ({n_pop}, {n_ages}), "
            f"got {a.shape} and {b.shape}"
        )
    if k.shape != (n_pop, n_years):
        raise DataError(f"truth k must have shape ({n_pop}, {n_years}), got {k.shape}")
    if np.max(np.abs(b.sum(axis=1) - 1.0)) > 1e-8:
        raise DataError("ground-truth b must sum to 1 per population")
    if np.max(np.abs(k.sum(axis=1))) > 1e-6 * max(1, n_years):
        raise DataError("ground-truth k must sum to 0 per population")
    return a, b, k, drift, k_sigma


def _population_ids(n_populations):
    return [
        PopulationId(f"S{i // 2:02d}", GENDERS[i % 2]) for i in range(n_populations)
    ]


def generate(spec):
    """Build a panel per the spec; returns the panel with its truth sidecar."""
    if spec.n_populations < 1 or spec.n_ages < 2 or spec.n_years < 2:
        raise DataError("need at least 1 population and a 2x2 grid")
    if spec.noise not in ("none", "gaussian", "poisson"):
        raise DataError(f"unknown noise kind {spec.noise!r}")
    if spec.exposure <= 0:
        raise DataError("exposure must be positive")
    if not 0 <= spec.test_years < spec.n_years:
        raise DataError("test_years must leave at least one fitting year")

    rng = np.random.default_rng(spec.seed)
    a, b, k, drift, k_sigma = _default_truth(spec, rng)
    pops = _population_ids(spec.n_populations)
    years = spec.start_year + np.arange(spec.n_years)
    ages = np.arange(spec.n_ages)

    surfaces = {}
    needs_imputation = False
    for i, pop in enumerate(pops):
        log_m = a[i][:, None] + np.outer(b[i], k[i])
        if spec.noise == "gaussian":
            log_m = log_m + spec.gaussian_sigma * rng.standard_normal(log_m.shape)
        exposures = np.full(log_m.shape, float(spec.exposure))
        if spec.noise == "poisson":
            lam = exposures * np.exp(log_m)
            deaths = np.empty_like(lam)
            flat_lam = lam.ravel()
            flat_deaths = deaths.ravel()
            for j in range(flat_lam.size):
                flat_deaths[j] = poisson_draw(rng, flat_lam[j])
            rates = deaths / exposures
            needs_imputation = needs_imputation or np.any(deaths == 0)
            with np.errstate(divide="ignore"):
                log_rates = np.where(rates > 0, np.log(np.where(rates > 0, rates, 1.0)),
                                     np.nan)
        else:
            rates = np.exp(log_m)
            deaths = exposures * rates
            log_rates = np.log(rates)
        surfaces[pop] = MortalitySurface(
            population=pop,
            ages=ages.copy(),
            years=years.copy(),
            rates=rates,
            log_rates=log_rates,
            imputed=np.zeros(log_m.shape, dtype=bool),
            deaths=deaths,
            exposures=exposures,
        )

    if needs_imputation:
        surfaces = impute_missing(surfaces)

    panel = PanelDataset(
        surfaces=dict(sorted(surfaces.items())),
        ages=ages,
        train_max_year=int(years[-1] - spec.test_years),
    )
    truth = PanelTruth(
        a={pop: a[i].copy() for i, pop in enumerate(pops)},
        b={pop: b[i].copy() for i, pop in enumerate(pops)},
        k={pop: k[i].copy() for i, pop in enumerate(pops)},
        drift={pop: float(drift[i]) for i, pop in enumerate(pops)},
        k_sigma={pop: float(k_sigma[i]) for i, pop in enumerate(pops)},
    )
    return SynthPanel(panel=panel, truth=truth)


def truth_to_payload(truth):
    """JSON-ready sidecar for the ground truth."""
    pops = sorted(truth.a)
    return {
        "version": 1,
        "populations": [
            {
                "country": pop.country,
                "gender": pop.gender,
                "a": [float(v) for v in truth.a[pop]],
                "b": [float(v) for v in truth.b[pop]],
                "k": [float(v) for v in truth.k[pop]],
                "drift": truth.drift[pop],
                "k_sigma": truth.k_sigma[pop],
            }
            for pop in pops
        ],
    }
