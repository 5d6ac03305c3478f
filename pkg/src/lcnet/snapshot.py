"""Versioned text snapshot of a panel, for reproducible round trips.

Schema (line-oriented, whitespace-separated, floats written with ``repr``
so values round-trip bit-exactly):

    lcnet-panel 1
    train_max_year <int>
    scaling none | scaling <float> <float>
    ages <int> <int> ...
    populations <count>
    population <country> <gender>
    years <int> ...
    log_rates           followed by one line per age
    imputed             followed by one 0/1 line per age
    deaths none | deaths data      (data: one line per age)
    exposures none | exposures data
    end
    ... next population ...
"""

import numpy as np

from .data import MortalitySurface, PanelDataset, PopulationId
from .errors import ParseError

FORMAT_NAME = "lcnet-panel"
FORMAT_VERSION = 1


def _write_matrix(lines, matrix):
    for row in matrix:
        lines.append(" ".join(repr(float(v)) for v in row))


def _write_mask(lines, mask):
    for row in mask:
        lines.append(" ".join("1" if v else "0" for v in row))


def dump_panel(panel):
    """Serialize a panel to snapshot text."""
    lines = [f"{FORMAT_NAME} {FORMAT_VERSION}"]
    lines.append(f"train_max_year {panel.train_max_year}")
    if panel.scaling is None:
        lines.append("scaling none")
    else:
        lines.append(f"scaling {panel.scaling[0]!r} {panel.scaling[1]!r}")
    lines.append("ages " + " ".join(str(int(a)) for a in panel.ages))
    pops = panel.population_ids()
    lines.append(f"populations {len(pops)}")
    for pop in pops:
        surf = panel.surfaces[pop]
        if any(ch.isspace() for ch in pop.country):
            raise ValueError(f"country label {pop.country!r} contains whitespace")
        lines.append(f"population {pop.country} {pop.gender}")
        lines.append("years " + " ".join(str(int(y)) for y in surf.years))
        lines.append("log_rates")
        _write_matrix(lines, surf.log_rates)
        lines.append("imputed")
        _write_mask(lines, surf.imputed)
        for label, matrix in (("deaths", surf.deaths), ("exposures", surf.exposures)):
            if matrix is None:
                lines.append(f"{label} none")
            else:
                lines.append(f"{label} data")
                _write_matrix(lines, matrix)
        lines.append("end")
    return "\n".join(lines) + "\n"


def save_panel(panel, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_panel(panel))


class _Reader:
    def __init__(self, text):
        self.lines = text.splitlines()
        self.pos = 0

    def next(self):
        if self.pos >= len(self.lines):
            raise ParseError("unexpected end of snapshot", line=self.pos + 1)
        line = self.lines[self.pos]
        self.pos += 1
        return line

    def expect(self, keyword):
        line = self.next()
        tokens = line.split()
        if not tokens or tokens[0] != keyword:
            raise ParseError(
                f"expected {keyword!r}, got {line!r}", line=self.pos
            )
        return tokens[1:]

    def matrix(self, n_rows, n_cols):
        rows = []
        for _ in range(n_rows):
            values = self.next().split()
            if len(values) != n_cols:
                raise ParseError(
                    f"expected {n_cols} values, got {len(values)}", line=self.pos
                )
            rows.append([float(v) for v in values])
        return np.array(rows)


def parse_panel(text):
    """Parse snapshot text back into a PanelDataset."""
    reader = _Reader(text)
    header = reader.next().split()
    if header[:1] != [FORMAT_NAME]:
        raise ParseError(f"not a {FORMAT_NAME} snapshot", line=1)
    if header[1:] != [str(FORMAT_VERSION)]:
        raise ParseError(f"unsupported snapshot version {header[1:]}", line=1)

    train_max_year = int(reader.expect("train_max_year")[0])
    scaling_tokens = reader.expect("scaling")
    scaling = (
        None
        if scaling_tokens == ["none"]
        else (float(scaling_tokens[0]), float(scaling_tokens[1]))
    )
    ages = np.array([int(a) for a in reader.expect("ages")])
    n_pops = int(reader.expect("populations")[0])

    surfaces = {}
    for _ in range(n_pops):
        country, gender = reader.expect("population")
        pop = PopulationId(country, gender)
        years = np.array([int(y) for y in reader.expect("years")])
        reader.expect("log_rates")
        log_rates = reader.matrix(ages.size, years.size)
        reader.expect("imputed")
        imputed = reader.matrix(ages.size, years.size).astype(bool)
        deaths = exposures = None
        for label in ("deaths", "exposures"):
            tokens = reader.expect(label)
            if tokens == ["data"]:
                matrix = reader.matrix(ages.size, years.size)
                if label == "deaths":
                    deaths = matrix
                else:
                    exposures = matrix
            elif tokens != ["none"]:
                raise ParseError(f"bad {label} marker {tokens}", line=reader.pos)
        reader.expect("end")
        surfaces[pop] = MortalitySurface(
            population=pop,
            ages=ages.copy(),
            years=years,
            rates=np.exp(log_rates),
            log_rates=log_rates,
            imputed=imputed,
            deaths=deaths,
            exposures=exposures,
        )
    return PanelDataset(
        surfaces=surfaces,
        ages=ages,
        train_max_year=train_max_year,
        scaling=scaling,
    )


def load_panel(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_panel(fh.read())
