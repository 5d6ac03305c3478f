"""Recorded year coverage of the canonical 40-country mortality panel.

Start/final calendar years per country code, as retained after the
standard pre-processing (data from 1950 onwards, both genders). Used to
check population selection and training-example counts without shipping
the licensed source files.
"""

import numpy as np

from lcnet.data import GENDERS, MortalitySurface, PopulationId

REFERENCE_YEAR_RANGES = {
    "AUS": (1950, 2018), "AUT": (1950, 2017), "BEL": (1950, 2018),
    "BGR": (1950, 2017), "BLR": (1959, 2018), "CAN": (1950, 2018),
    "CHE": (1950, 2018), "CZE": (1950, 2018), "DEUTE": (1956, 2017),
    "DEUTW": (1956, 2017), "DNK": (1950, 2019), "ESP": (1950, 2018),
    "EST": (1959, 2017), "FIN": (1950, 2019), "FRATNP": (1950, 2018),
    "GBRTENW": (1950, 2018), "GBR_NIR": (1950, 2018), "GBR_SCO": (1950, 2018),
    "GRC": (1981, 2017), "HUN": (1950, 2017), "IRL": (1950, 2017),
    "ISL": (1950, 2018), "ISR": (1983, 2016), "ITA": (1950, 2017),
    "JPN": (1950, 2019), "LTU": (1959, 2019), "LUX": (1960, 2019),
    "LVA": (1959, 2017), "NLD": (1950, 2018), "NOR": (1950, 2018),
    "NZL_NM": (1950, 2008), "POL": (1958, 2018), "PRT": (1950, 2018),
    "RUS": (1959, 2014), "SVK": (1950, 2017), "SVN": (1983, 2017),
    "SWE": (1950, 2019), "TWN": (1970, 2019), "UKR": (1959, 2013),
    "USA": (1950, 2018),
}


def reference_tables(n_ages=2, rate=0.01):
    """Constant-rate RawRateTables matching the recorded year coverage."""
    from lcnet.data import RawRateTable

    tables = {}
    ages = np.arange(n_ages)
    for country, (start, final) in REFERENCE_YEAR_RANGES.items():
        years = np.arange(start, final + 1)
        values = np.full((n_ages, years.size), rate)
        tables[country] = RawRateTable(
            country=country,
            kind="rates",
            years=years,
            ages=ages.copy(),
            open_ages=frozenset(),
            female=values.copy(),
            male=values.copy(),
            total=values.copy(),
        )
    return tables


def reference_surfaces(n_ages=3, rate=0.01):
    """Constant-rate surfaces matching the recorded year coverage."""
    ages = np.arange(n_ages)
    surfaces = {}
    for country, (start, final) in REFERENCE_YEAR_RANGES.items():
        years = np.arange(start, final + 1)
        rates = np.full((n_ages, years.size), rate)
        for gender in GENDERS:
            pop = PopulationId(country, gender)
            surfaces[pop] = MortalitySurface(
                population=pop,
                ages=ages.copy(),
                years=years.copy(),
                rates=rates.copy(),
                log_rates=np.log(rates),
                imputed=np.zeros(rates.shape, dtype=bool),
            )
    return surfaces
