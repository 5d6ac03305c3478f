"""Out-of-sample scoring and model comparison tables.

Squared errors are computed on the mortality-rate scale (predicted versus
observed central rates), which is the scale on which headline numbers in
this domain are usually quoted; a log-scale MSE is carried alongside for
diagnostics. Aggregates are plain (deaths-unweighted) means over cells.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class BeatCount:
    """How often one model's per-population / per-age MSE is strictly lower."""

    populations_won: int
    populations_total: int
    ages_won: int
    ages_total: int


@dataclass
class EvaluationReport:
    """Scores of one model run on a panel's held-out years."""

    run_id: str
    global_mse: float
    log_scale_mse: float
    per_population: dict
    per_age: dict
    cells_per_population: dict
    beat_counts: dict = field(default_factory=dict)


@dataclass
class ComparisonTable:
    """Cross-model comparison on a shared grid."""

    run_ids: list
    global_mse: dict
    beat_counts: dict
    population_winners: dict
    per_age: dict
    split: dict | None = None


@dataclass
class VariabilitySummary:
    """Across-seed spread of one model's scores and extracted parameters."""

    n_runs: int
    mse_stats: dict
    envelopes: dict


def score(predictions, panel, run_id="model"):
    """Score predicted test-year log-rates against the panel.

    ``predictions`` maps population -> log-rate matrix shaped
    (ages, test years of that population). Every panel population must be
    covered on exactly its test grid.
    """
    missing = set(panel.surfaces) - set(predictions)
    extra = set(predictions) - set(panel.surfaces)
    if missing or extra:
        raise DataError(
            f"prediction grid mismatch: missing {sorted(p.label() for p in missing)}, "
            f"unexpected {sorted(p.label() for p in extra)}"
        )
    per_population = {}
    cells_per_population = {}
    age_sq = None
    age_n = None
    log_total = 0.0
    total = 0.0
    n_cells = 0
    for pop in panel.population_ids():
        surf = panel.surfaces[pop]
        cols = np.nonzero(surf.years > panel.train_max_year)[0]
        pred = np.asarray(predictions[pop], dtype=float)
        if pred.shape != (surf.ages.size, cols.size):
            raise DataError(
                f"{pop.label()}: prediction shape {pred.shape} does not match "
                f"test grid ({surf.ages.size}, {cols.size})"
            )
        actual_log = surf.log_rates[:, cols]
        sq = (np.exp(pred) - np.exp(actual_log)) ** 2
        log_sq = (pred - actual_log) ** 2
        per_population[pop] = float(sq.mean())
        cells_per_population[pop] = int(sq.size)
        if age_sq is None:
            age_sq = np.zeros(surf.ages.size)
            age_n = np.zeros(surf.ages.size)
        age_sq += sq.sum(axis=1)
        age_n += sq.shape[1]
        total += sq.sum()
        log_total += log_sq.sum()
        n_cells += sq.size
    if n_cells == 0:
        raise DataError("panel has no test years to score")
    per_age = {
        int(age): float(age_sq[i] / age_n[i])
        for i, age in enumerate(panel.ages)
    }
    return EvaluationReport(
        run_id=run_id,
        global_mse=float(total / n_cells),
        log_scale_mse=float(log_total / n_cells),
        per_population=per_population,
        per_age=per_age,
        cells_per_population=cells_per_population,
    )


def _check_same_grid(reports):
    first = reports[0]
    for other in reports[1:]:
        if set(other.per_population) != set(first.per_population) or set(
            other.per_age
        ) != set(first.per_age):
            raise DataError(
                f"reports {first.run_id!r} and {other.run_id!r} cover different grids"
            )
        if other.cells_per_population != first.cells_per_population:
            raise DataError(
                f"reports {first.run_id!r} and {other.run_id!r} have different "
                "cell counts"
            )


def beat_count(report_a, report_b):
    """Populations and ages where model a strictly beats model b."""
    _check_same_grid([report_a, report_b])
    pops = sorted(report_a.per_population)
    ages = sorted(report_a.per_age)
    return BeatCount(
        populations_won=sum(
            report_a.per_population[p] < report_b.per_population[p] for p in pops
        ),
        populations_total=len(pops),
        ages_won=sum(report_a.per_age[x] < report_b.per_age[x] for x in ages),
        ages_total=len(ages),
    )


def compare(reports, population_sizes=None):
    """Build the cross-model table: beat counts, winners, per-age curves.

    ``population_sizes`` (country -> size) optionally adds the
    high/low-population split: countries ranked by size, the top half
    (rounded up) against the rest, each scored by cell-weighted MSE.
    """
    if not reports:
        raise DataError("no reports to compare")
    _check_same_grid(reports)
    ids = [r.run_id for r in reports]
    if len(set(ids)) != len(ids):
        raise DataError(f"duplicate run ids: {ids}")

    beat_counts = {}
    for a in reports:
        for b in reports:
            if a is not b:
                beat_counts[(a.run_id, b.run_id)] = beat_count(a, b)
        a.beat_counts = {
            other: beat_counts[(a.run_id, other)]
            for other in ids
            if other != a.run_id
        }

    winners = {}
    for pop in sorted(reports[0].per_population):
        best = min(reports, key=lambda r: r.per_population[pop])
        winners[pop] = best.run_id

    per_age = {
        age: {r.run_id: r.per_age[age] for r in reports}
        for age in sorted(reports[0].per_age)
    }

    split = None
    if population_sizes is not None:
        countries = sorted({pop.country for pop in reports[0].per_population})
        unknown = [c for c in countries if c not in population_sizes]
        if unknown:
            raise DataError(f"population sizes missing for {unknown}")
        ranked = sorted(countries, key=lambda c: -population_sizes[c])
        high = set(ranked[: (len(ranked) + 1) // 2])
        split = {}
        for r in reports:
            split[r.run_id] = {
                "high": _subset_mse(r, lambda pop: pop.country in high),
                "low": _subset_mse(r, lambda pop: pop.country not in high),
            }

    return ComparisonTable(
        run_ids=ids,
        global_mse={r.run_id: r.global_mse for r in reports},
        beat_counts=beat_counts,
        population_winners=winners,
        per_age=per_age,
        split=split,
    )


def _subset_mse(report, keep):
    total = 0.0
    cells = 0
    for pop, mse in report.per_population.items():
        if keep(pop):
            total += mse * report.cells_per_population[pop]
            cells += report.cells_per_population[pop]
    if cells == 0:
        raise DataError("empty population subset")
    return total / cells


def gender_mse(report, gender):
    """Cell-weighted MSE over one gender's populations ('total' for all)."""
    if gender == "total":
        return _subset_mse(report, lambda pop: True)
    return _subset_mse(report, lambda pop: pop.gender == gender)


def _five_numbers(values):
    values = np.asarray(sorted(values), dtype=float)
    q1, median, q3 = np.percentile(values, [25, 50, 75])
    return {
        "min": float(values.min()),
        "q1": float(q1),
        "median": float(median),
        "q3": float(q3),
        "max": float(values.max()),
        "values": values.tolist(),
    }


def variability_summary(runs, reports):
    """Across-run spread: per-gender MSE boxes and parameter envelopes.

    All runs must share the same configuration apart from the seed.
    """
    if len(runs) < 2 or len(runs) != len(reports):
        raise DataError("need at least two runs with their reports")
    base = replace(runs[0].config, seed=0)
    for run in runs[1:]:
        if replace(run.config, seed=0) != base:
            raise DataError("runs differ in more than the seed")

    mse_stats = {
        group: _five_numbers([gender_mse(rep, group) for rep in reports])
        for group in ("female", "male", "total")
    }

    envelopes = {}
    for pop in sorted(runs[0].parameters):
        stacks = {
            name: np.stack([getattr(run.parameters[pop], name) for run in runs])
            for name in ("a", "b", "k")
        }
        envelopes[pop] = {
            name: (arr.min(axis=0), arr.max(axis=0))
            for name, arr in stacks.items()
        }
    return VariabilitySummary(
        n_runs=len(runs), mse_stats=mse_stats, envelopes=envelopes
    )


def format_comparison(table, scale=1e-4, decimals=2):
    """Human-readable table with MSEs printed in units of ``scale``."""
    lines = []
    unit = f"(MSE in {scale:g})"
    header = f"{'model':<24} {'MSE ' + unit:>16}"
    others = table.run_ids
    lines.append(header)
    for rid in others:
        row = f"{rid:<24} {table.global_mse[rid] / scale:>16.{decimals}f}"
        lines.append(row)
    lines.append("")
    lines.append("beat counts (row beats column): populations | ages")
    for a in others:
        cells = []
        for b in others:
            if a == b:
                cells.append("-")
            else:
                bc = table.beat_counts[(a, b)]
                cells.append(
                    f"{bc.populations_won}/{bc.populations_total}|"
                    f"{bc.ages_won}/{bc.ages_total}"
                )
        lines.append(f"{a:<24} " + " ".join(f"{c:>14}" for c in cells))
    if table.split is not None:
        lines.append("")
        lines.append(f"{'model':<24} {'high-pop':>12} {'low-pop':>12}")
        for rid in others:
            lines.append(
                f"{rid:<24} {table.split[rid]['high'] / scale:>12.{decimals}f} "
                f"{table.split[rid]['low'] / scale:>12.{decimals}f}"
            )
    return "\n".join(lines)
