"""HMD-style mortality tables: parsing, selection, imputation, panel assembly.

Input files are the 1x1 period layout: a free-text header, then a column
header line ``Year Age Female Male Total``, then whitespace-separated rows
with "." marking missing values and "110+" the open age category. Deaths
and exposures files share the layout with their own semantics.
"""

import os
import re
from dataclasses import dataclass, replace

import numpy as np

from .errors import DataError, ParseError

GENDERS = ("female", "male")
DEFAULT_AGES = tuple(range(100))
DEFAULT_CUTOFF_YEAR = 1999
DEFAULT_MIN_YEARS = 10
DEFAULT_TRAIN_MAX_YEAR = 1999


@dataclass(frozen=True, order=True)
class PopulationId:
    country: str
    gender: str

    def __post_init__(self):
        if self.gender not in GENDERS:
            raise ValueError(f"gender must be one of {GENDERS}, got {self.gender!r}")

    def label(self):
        return f"{self.country}-{self.gender}"


@dataclass
class RawRateTable:
    """One parsed file: per-gender value matrices on a complete year/age grid."""

    country: str
    kind: str  # rates | deaths | exposures
    years: np.ndarray
    ages: np.ndarray
    open_ages: frozenset
    female: np.ndarray
    male: np.ndarray
    total: np.ndarray

    @property
    def n_rows(self):
        return self.years.size * self.ages.size

    def column(self, gender):
        return {"female": self.female, "male": self.male}[gender]


@dataclass
class MortalitySurface:
    """One population's age-by-year mortality grid.

    ``rates`` holds central death rates with NaN for missing cells;
    ``log_rates`` is their log (NaN until zero/missing cells are imputed).
    ``imputed`` marks exactly the cells whose source rate was zero or
    missing. ``deaths`` and ``exposures`` keep the original counts: zero
    death counts stay zero there, only the rate view is imputed.
    """

    population: PopulationId
    ages: np.ndarray
    years: np.ndarray
    rates: np.ndarray
    log_rates: np.ndarray
    imputed: np.ndarray
    deaths: np.ndarray | None = None
    exposures: np.ndarray | None = None

    def year_index(self, year):
        idx = np.searchsorted(self.years, year)
        if idx >= self.years.size or self.years[idx] != year:
            raise KeyError(f"year {year} not in surface {self.population.label()}")
        return int(idx)


@dataclass(frozen=True)
class PanelDataset:
    """Imputed surfaces on a shared age grid, split at ``train_max_year``.

    Years up to and including ``train_max_year`` are the fitting period;
    later years are held out. ``scaling`` (when set by
    ``minmax_fit_transform``) is the (min, max) of the training log-rates.
    """

    surfaces: dict
    ages: np.ndarray
    train_max_year: int
    scaling: tuple | None = None

    def population_ids(self):
        return sorted(self.surfaces)

    def train_years(self, population=None):
        if population is not None:
            years = self.surfaces[population].years
            return years[years <= self.train_max_year]
        out = set()
        for pop in self.surfaces:
            out.update(self.train_years(pop).tolist())
        return frozenset(out)

    def test_years(self, population=None):
        if population is not None:
            years = self.surfaces[population].years
            return years[years > self.train_max_year]
        out = set()
        for pop in self.surfaces:
            out.update(self.test_years(pop).tolist())
        return frozenset(out)

    @property
    def n_training_examples(self):
        return sum(self.train_years(pop).size for pop in self.surfaces)

    def scale(self, log_rates):
        """MinMax transform of log-rates using the training extrema."""
        if self.scaling is None:
            raise DataError("panel has no scaling; run minmax_fit_transform")
        y_min, y_max = self.scaling
        return (np.asarray(log_rates) - y_min) / (y_max - y_min)

    def unscale(self, scaled):
        if self.scaling is None:
            raise DataError("panel has no scaling; run minmax_fit_transform")
        y_min, y_max = self.scaling
        return y_min + np.asarray(scaled) * (y_max - y_min)


_AGE_RE = re.compile(r"^(\d+)(\+?)$")


def _parse_value(token, line_no):
    if token == ".":
        return np.nan
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"non-numeric value {token!r}", line=line_no) from None
    if value < 0:
        raise ParseError(f"negative value {token!r}", line=line_no)
    return value


def parse_hmd_table(text, country, kind):
    """Parse one 1x1-layout file into a RawRateTable.

    ``text`` may be a string or a file-like object. The header block is
    everything before the ``Year Age Female Male Total`` column line.
    """
    if hasattr(text, "read"):
        text = text.read()
    lines = text.splitlines()

    start = None
    for i, line in enumerate(lines):
        tokens = line.split()
        if tokens[:2] == ["Year", "Age"]:
            start = i + 1
            break
    if start is None:
        raise ParseError(f"{country}: no 'Year Age ...' column header found")

    cells = {}
    open_ages = set()
    for line_no, line in enumerate(lines[start:], start=start + 1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != 5:
            raise ParseError(
                f"expected 5 columns, got {len(tokens)}", line=line_no
            )
        try:
            year = int(tokens[0])
        except ValueError:
            raise ParseError(f"bad year {tokens[0]!r}", line=line_no) from None
        match = _AGE_RE.match(tokens[1])
        if not match:
            raise ParseError(f"bad age {tokens[1]!r}", line=line_no)
        age = int(match.group(1))
        if match.group(2):
            open_ages.add(age)
        if (year, age) in cells:
            raise ParseError(f"duplicate cell ({year}, {age})", line=line_no)
        cells[(year, age)] = tuple(
            _parse_value(tok, line_no) for tok in tokens[2:5]
        )
    if not cells:
        raise ParseError(f"{country}: no data rows")

    years = np.array(sorted({y for y, _ in cells}))
    ages = np.array(sorted({a for _, a in cells}))
    for y in years:
        for a in ages:
            if (int(y), int(a)) not in cells:
                raise ParseError(f"{country}: incomplete grid, missing ({y}, {a})")

    female = np.empty((ages.size, years.size))
    male = np.empty_like(female)
    total = np.empty_like(female)
    for ai, a in enumerate(ages):
        for yi, y in enumerate(years):
            female[ai, yi], male[ai, yi], total[ai, yi] = cells[(int(y), int(a))]
    return RawRateTable(
        country=country,
        kind=kind,
        years=years,
        ages=ages,
        open_ages=frozenset(open_ages),
        female=female,
        male=male,
        total=total,
    )


def parse_rate_file(text, country):
    """Central death rates (Mx_1x1 layout)."""
    return parse_hmd_table(text, country, "rates")


def parse_deaths_file(text, country):
    """Death counts (Deaths_1x1 layout)."""
    return parse_hmd_table(text, country, "deaths")


def parse_exposure_file(text, country):
    """Exposure-to-risk (Exposures_1x1 layout)."""
    return parse_hmd_table(text, country, "exposures")


def select_populations(tables, cutoff_year=DEFAULT_CUTOFF_YEAR,
                       min_years=DEFAULT_MIN_YEARS):
    """(country, gender) pairs with enough history before the cutoff.

    A calendar year counts for a gender if the table holds at least one
    non-missing value for it; a population qualifies with at least
    ``min_years`` such years not later than ``cutoff_year``, each gender
    judged independently.
    """
    if not tables:
        raise DataError("no rate tables given")
    if cutoff_year <= 0 or min_years <= 0:
        raise ValueError("cutoff_year and min_years must be positive")
    selected = []
    for country in sorted(tables):
        table = tables[country]
        early = table.years <= cutoff_year
        for gender in GENDERS:
            values = table.column(gender)
            has_data = ~np.all(np.isnan(values), axis=0)
            if int(np.count_nonzero(has_data & early)) >= min_years:
                selected.append(PopulationId(country, gender))
    return selected


def _check_grids(country, reference, other):
    if not np.array_equal(reference.years, other.years) or not np.array_equal(
        reference.ages, other.ages
    ):
        raise DataError(
            f"{country}: {other.kind} file grid does not match {reference.kind} "
            f"file grid (years {other.years.min()}..{other.years.max()} vs "
            f"{reference.years.min()}..{reference.years.max()})"
        )


def build_surfaces(rate_tables=None, deaths_tables=None, exposure_tables=None,
                   populations=None, ages=DEFAULT_AGES):
    """Assemble per-population surfaces from parsed tables.

    Ages outside ``ages`` are dropped. When deaths and exposures are both
    available the central rates are derived as deaths/exposures (so the
    log-rate identity holds exactly); otherwise the rate file is used.
    Mismatched year/age grids between a country's files are hard errors.
    """
    ages = np.asarray(sorted(ages))
    if rate_tables is None and (deaths_tables is None or exposure_tables is None):
        raise DataError("need rate tables, or deaths and exposures tables")
    primary = rate_tables if rate_tables is not None else deaths_tables
    if populations is None:
        populations = [
            PopulationId(country, gender)
            for country in sorted(primary)
            for gender in GENDERS
        ]

    surfaces = {}
    for pop in sorted(populations):
        table = primary.get(pop.country)
        if table is None:
            raise DataError(f"no input table for {pop.country}")
        deaths = exposures = None
        if deaths_tables is not None:
            _check_grids(pop.country, table, deaths_tables[pop.country])
            deaths = deaths_tables[pop.country]
        if exposure_tables is not None:
            _check_grids(pop.country, table, exposure_tables[pop.country])
            exposures = exposure_tables[pop.country]

        missing_ages = np.setdiff1d(ages, table.ages)
        if missing_ages.size:
            raise DataError(
                f"{pop.country}: ages {missing_ages.tolist()} absent from input"
            )
        rows = np.searchsorted(table.ages, ages)

        deaths_m = deaths.column(pop.gender)[rows] if deaths is not None else None
        expos_m = exposures.column(pop.gender)[rows] if exposures is not None else None
        if deaths_m is not None and expos_m is not None:
            with np.errstate(invalid="ignore", divide="ignore"):
                rates = np.where(expos_m > 0, deaths_m / expos_m, np.nan)
        else:
            rates = (
                rate_tables[pop.country].column(pop.gender)[rows]
                if rate_tables is not None
                else None
            )
            if rates is None:
                raise DataError("rates unavailable without exposures")
            rates = rates.copy()

        with np.errstate(invalid="ignore", divide="ignore"):
            log_rates = np.where(rates > 0, np.log(np.where(rates > 0, rates, 1.0)),
                                 np.nan)
        surfaces[pop] = MortalitySurface(
            population=pop,
            ages=ages.copy(),
            years=table.years.copy(),
            rates=rates,
            log_rates=log_rates,
            imputed=np.zeros(rates.shape, dtype=bool),
            deaths=deaths_m.copy() if deaths_m is not None else None,
            exposures=expos_m.copy() if expos_m is not None else None,
        )
    return surfaces


def impute_missing(surfaces):
    """Replace zero/missing rates with the same-gender cross-country mean.

    The donor pool for an (age, gender, year) cell is every country with a
    valid (present, positive) rate there; the arithmetic mean of those raw
    rates fills the cell and the imputed mask records it. Log-rates are
    recomputed afterwards. Applying this twice is a no-op.
    """
    out = {}
    by_gender = {}
    for pop, surf in surfaces.items():
        by_gender.setdefault(pop.gender, []).append(surf)

    for pop in sorted(surfaces):
        surf = surfaces[pop]
        rates = surf.rates.copy()
        invalid = ~(np.isfinite(rates) & (rates > 0))
        imputed = surf.imputed | invalid
        if np.any(invalid):
            donors = [
                d for d in by_gender[pop.gender]
                if d.population.country != pop.country
            ]
            for age_idx, year_idx in np.argwhere(invalid):
                year = int(surf.years[year_idx])
                pool = []
                for donor in donors:
                    cols = np.nonzero(donor.years == year)[0]
                    if not cols.size:
                        continue
                    value = donor.rates[age_idx, cols[0]]
                    if np.isfinite(value) and value > 0:
                        pool.append(value)
                if not pool:
                    raise DataError(
                        f"no donor country for age {surf.ages[age_idx]}, "
                        f"gender {pop.gender}, year {year}"
                    )
                rates[age_idx, year_idx] = float(np.mean(pool))
        out[pop] = replace(
            surf,
            rates=rates,
            log_rates=np.log(rates),
            imputed=imputed,
        )
    return out


def assemble_panel(surfaces, train_max_year=DEFAULT_TRAIN_MAX_YEAR,
                   ages=DEFAULT_AGES):
    """Bundle imputed surfaces into a train/test panel."""
    if not surfaces:
        raise DataError("no surfaces to assemble")
    ages = np.asarray(sorted(ages))
    for pop in sorted(surfaces):
        surf = surfaces[pop]
        if not np.array_equal(surf.ages, ages):
            raise DataError(
                f"{pop.label()}: age grid differs from the panel grid"
            )
        if not np.all(np.isfinite(surf.log_rates)):
            raise DataError(f"{pop.label()}: unimputed cells remain")
        if not np.any(surf.years <= train_max_year):
            raise DataError(f"{pop.label()}: no training years")
    return PanelDataset(
        surfaces=dict(sorted(surfaces.items())),
        ages=ages,
        train_max_year=int(train_max_year),
    )


def minmax_fit_transform(panel):
    """Attach MinMax scaling fitted on the training log-rates only."""
    lo, hi = np.inf, -np.inf
    for pop in panel.population_ids():
        surf = panel.surfaces[pop]
        cols = surf.years <= panel.train_max_year
        values = surf.log_rates[:, cols]
        if not np.all(np.isfinite(values)):
            raise DataError(f"{pop.label()}: non-finite training log-rates")
        lo = min(lo, float(values.min()))
        hi = max(hi, float(values.max()))
    if not lo < hi:
        raise DataError(f"degenerate panel: min == max == {lo}")
    return replace(panel, scaling=(lo, hi))


def _country_from_filename(name):
    return os.path.basename(name).split(".")[0]


def load_directory(path, kind):
    """Parse every ``<COUNTRY>.*.txt`` file in a directory."""
    parser = {
        "rates": parse_rate_file,
        "deaths": parse_deaths_file,
        "exposures": parse_exposure_file,
    }[kind]
    tables = {}
    for name in sorted(os.listdir(path)):
        if not name.endswith(".txt"):
            continue
        country = _country_from_filename(name)
        with open(os.path.join(path, name), "r", encoding="utf-8") as fh:
            try:
                tables[country] = parser(fh, country)
            except ParseError as err:
                raise ParseError(f"{os.path.join(path, name)}: {err}") from err
    if not tables:
        raise DataError(f"no .txt files found in {path}")
    return tables
