"""Country-week panels: ingestion, ceasefire indicators, partial labels and
covariate standardization."""
from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .params import FULL_COVARIATES

logger = logging.getLogger(__name__)

CF_WEEKS = 5          # week containing the effective date plus four more
PRE_CF_WEEKS = 2
LABEL_CLEAR_WEEKS = 9   # 63 days, smallest whole-week span covering 60 days
LABEL_RUN_WEEKS = 104   # two years of weeks

FLAG_COLUMNS = ("pre_cf", "cf")
CONTINUOUS_COLUMNS = ("v2x", "v2x2", "v2x3", "log_gdp", "log_pop")


class IngestWarning(UserWarning):
    pass


class PanelValidationError(ValueError):
    """Malformed input; ``str()`` carries file, line and column."""

    def __init__(self, message, path=None, line=None, column=None):
        loc = []
        if path is not None:
            loc.append(str(path))
        if line is not None:
            loc.append(f"line {line}")
        if column is not None:
            loc.append(f"column '{column}'")
        super().__init__(": ".join([", ".join(loc), message]) if loc else message)
        self.path, self.line, self.column = path, line, column


@dataclass
class CountryPanel:
    """One country's aligned weekly series.

    ``x`` holds one row per week in ``covariates`` order, starting with the
    intercept. ``label`` is True on weeks fixed to state 1. ``population``
    (raw head count per week) is optional and only used by the count cap.
    """

    country_id: str
    weeks: np.ndarray
    deaths: np.ndarray
    x: np.ndarray
    covariates: tuple = FULL_COVARIATES
    label: np.ndarray = None
    population: np.ndarray = None

    def __post_init__(self):
        self.weeks = np.asarray(self.weeks, dtype="datetime64[D]")
        self.deaths = np.asarray(self.deaths, dtype=np.int64)
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.covariates = tuple(self.covariates)
        n = len(self.deaths)
        if self.label is None:
            self.label = np.zeros(n, dtype=bool)
        self.label = np.asarray(self.label, dtype=bool)
        if self.population is not None:
            self.population = np.asarray(self.population, dtype=float)
        if self.x.shape != (n, len(self.covariates)):
            raise ValueError(
                f"{self.country_id}: x has shape {self.x.shape}, expected "
                f"({n}, {len(self.covariates)})"
            )
        if len(self.weeks) != n or len(self.label) != n:
            raise ValueError(f"{self.country_id}: weeks/deaths/label lengths differ")
        if np.any(self.deaths < 0):
            raise ValueError(f"{self.country_id}: negative death count")

    def __len__(self):
        return len(self.deaths)

    def column(self, name) -> np.ndarray:
        return self.x[:, self.covariates.index(name)]

    def with_labels(self, label) -> "CountryPanel":
        return CountryPanel(
            self.country_id, self.weeks, self.deaths, self.x, self.covariates,
            label, self.population,
        )

    def with_deaths(self, deaths) -> "CountryPanel":
        return CountryPanel(
            self.country_id, self.weeks, deaths, self.x, self.covariates,
            np.zeros(len(self), dtype=bool), self.population,
        )

    def restrict(self, covariates) -> "CountryPanel":
        """Keep only the named design columns (intercept first)."""
        covariates = tuple(covariates)
        if not covariates or covariates[0] != "intercept":
            raise ValueError("intercept must be the first covariate")
        missing = [c for c in covariates if c not in self.covariates]
        if missing:
            raise ValueError(f"{self.country_id}: unknown covariates {missing}")
        idx = [self.covariates.index(c) for c in covariates]
        return CountryPanel(
            self.country_id, self.weeks, self.deaths, self.x[:, idx], covariates,
            self.label, self.population,
        )

    def equals(self, other: "CountryPanel") -> bool:
        return (
            self.country_id == other.country_id
            and self.covariates == other.covariates
            and np.array_equal(self.weeks, other.weeks)
            and np.array_equal(self.deaths, other.deaths)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.label, other.label)
        )


@dataclass
class StandardizationReport:
    """Pooled mean and population sd (ddof=0) per continuous column."""

    mean: dict = field(default_factory=dict)
    sd: dict = field(default_factory=dict)
    sd_convention: str = "population (divisor n)"

    def apply(self, name, values):
        return (np.asarray(values, dtype=float) - self.mean[name]) / self.sd[name]

    def invert(self, name, values):
        return np.asarray(values, dtype=float) * self.sd[name] + self.mean[name]

    def to_dict(self):
        return {
            "sd_convention": self.sd_convention,
            "columns": {k: {"mean": self.mean[k], "sd": self.sd[k]} for k in self.mean},
        }

    @classmethod
    def from_dict(cls, data):
        cols = data["columns"]
        return cls(
            {k: float(v["mean"]) for k, v in cols.items()},
            {k: float(v["sd"]) for k, v in cols.items()},
            data.get("sd_convention", "population (divisor n)"),
        )

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- indicators and labels -------------------------------------------------

def monday_of(day) -> np.datetime64:
    day = np.datetime64(day, "D")
    # 1970-01-01 was a Thursday
    return day - ((day.astype(np.int64) + 3) % 7)


def week_grid(start, n_weeks) -> np.ndarray:
    start = np.datetime64(start, "D")
    if monday_of(start) != start:
        raise ValueError(f"week grid must start on a Monday, got {start}")
    return start + 7 * np.arange(n_weeks)


def build_indicators(event_dates, weeks):
    """Pre-ceasefire and ceasefire flags on a contiguous Monday-aligned grid.

    The week containing an effective date and the next four weeks get the
    ceasefire flag; the two weeks before that week get the pre-ceasefire
    flag. Overlapping windows are unioned and both flags may be set in the
    same week. Events outside the grid raise an ``IngestWarning`` and are
    skipped.
    """
    weeks = np.asarray(weeks, dtype="datetime64[D]")
    n = len(weeks)
    pre = np.zeros(n, dtype=np.int64)
    cf = np.zeros(n, dtype=np.int64)
    if n == 0:
        return pre, cf
    if np.any(np.diff(weeks) != np.timedelta64(7, "D")):
        raise ValueError("week grid is not contiguous")
    for day in sorted(np.datetime64(e, "D") for e in event_dates):
        k = int((day - weeks[0]).astype(np.int64) // 7)
        if not 0 <= k < n:
            warnings.warn(f"ceasefire on {day} outside week grid; skipped", IngestWarning, stacklevel=2)
            continue
        cf[k:k + CF_WEEKS] = 1
        pre[max(k - PRE_CF_WEEKS, 0):k] = 1
    return pre, cf


def _zero_run_lengths(zero):
    """Length of the maximal run of True containing each position (0 if False)."""
    n = len(zero)
    out = np.zeros(n, dtype=np.int64)
    k = 0
    while k < n:
        if not zero[k]:
            k += 1
            continue
        j = k
        while j < n and zero[j]:
            j += 1
        out[k:j] = j - k
        k = j
    return out


def apply_label_rule(deaths) -> np.ndarray:
    """Weeks fixed to state 1.

    A week is labelled iff no week within +/- 9 weeks has a death and it
    lies in a run of at least 104 consecutive zero-death weeks.
    """
    deaths = np.asarray(deaths)
    n = len(deaths)
    hit = (deaths > 0).astype(np.int64)
    # deaths inside [k-9, k+9] via a padded cumulative sum
    cs = np.concatenate([[0], np.cumsum(hit)])
    lo = np.clip(np.arange(n) - LABEL_CLEAR_WEEKS, 0, n)
    hi = np.clip(np.arange(n) + LABEL_CLEAR_WEEKS + 1, 0, n)
    clear = (cs[hi] - cs[lo]) == 0
    long_run = _zero_run_lengths(deaths == 0) >= LABEL_RUN_WEEKS
    return clear & long_run


# -- covariates --------------------------------------------------------------

def lagged_annual(weeks, table: dict, country_id=""):
    """Map annual records to weeks with a one-year lag and forward fill.

    ``table`` maps year -> value tuple. Week ``w`` uses the latest year not
    after ``year(w) - 1``.
    """
    years = sorted(table)
    week_years = np.asarray(weeks, dtype="datetime64[Y]").astype(np.int64) + 1970
    rows = []
    for y in week_years:
        pos = np.searchsorted(years, y - 1, side="right") - 1
        if pos < 0:
            raise PanelValidationError(
                f"no covariates for {country_id!r} in or before year {y - 1}"
            )
        rows.append(table[years[pos]])
    return np.array(rows, dtype=float).reshape(len(week_years), -1)


def raw_design(weeks, pre, cf, polyarchy, gdp, population) -> np.ndarray:
    """Unstandardized 8-column design in ``FULL_COVARIATES`` order."""
    v = np.asarray(polyarchy, dtype=float)
    return np.column_stack([
        np.ones(len(weeks)), pre, cf, v, v ** 2, v ** 3,
        np.log(gdp), np.log(population),
    ])


def standardize_covariates(panels, report: StandardizationReport = None):
    """Center and scale continuous columns pooled over all country-weeks.

    Flag and intercept columns are left alone. If ``report`` is given its
    frozen statistics are reused (held-out data) instead of recomputed.
    """
    if not panels:
        return [], report or StandardizationReport()
    covariates = panels[0].covariates
    if any(p.covariates != covariates for p in panels):
        raise ValueError("panels disagree on covariate layout")
    cont = [c for c in covariates if c != "intercept" and c not in FLAG_COLUMNS]
    if report is None:
        report = StandardizationReport()
        pooled = np.vstack([p.x for p in panels])
        for name in cont:
            col = pooled[:, covariates.index(name)]
            sd = float(col.std())
            if not sd > 0.0:
                raise ValueError(f"column {name!r} has zero variance")
            report.mean[name] = float(col.mean())
            report.sd[name] = sd
    out = []
    for p in panels:
        x = p.x.copy()
        for name in cont:
            j = covariates.index(name)
            x[:, j] = report.apply(name, x[:, j])
        out.append(CountryPanel(p.country_id, p.weeks, p.deaths, x, covariates, p.label, p.population))
    return out, report


# -- CSV input ---------------------------------------------------------------

def _rows(path, required):
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PanelValidationError("empty file, header row required", path, 1)
        header = [h.strip() for h in header]
        missing = [c for c in required if c not in header]
        if missing:
            raise PanelValidationError(f"header lacks {missing}", path, 1)
        idx = {c: header.index(c) for c in required}
        for row in reader:
            if not row or all(not v.strip() for v in row):
                continue
            if len(row) != len(header):
                raise PanelValidationError(
                    f"expected {len(header)} fields, got {len(row)}", path, reader.line_num
                )
            yield reader.line_num, {c: row[i].strip() for c, i in idx.items()}


def _parse(value, kind, path, line, column):
    try:
        if kind == "date":
            return np.datetime64(dt.date.fromisoformat(value), "D")
        if kind == "int":
            return int(value)
        return float(value)
    except ValueError:
        raise PanelValidationError(f"cannot parse {value!r} as {kind}", path, line, column) from None


def read_events(path) -> dict:
    """country_id -> (weeks, deaths) from the weekly events table."""
    per = {}
    for line, r in _rows(path, ("country_id", "week_start", "deaths")):
        week = _parse(r["week_start"], "date", path, line, "week_start")
        if monday_of(week) != week:
            raise PanelValidationError(f"{week} is not a Monday", path, line, "week_start")
        deaths = _parse(r["deaths"], "int", path, line, "deaths")
        if deaths < 0:
            raise PanelValidationError("negative death count", path, line, "deaths")
        rows = per.setdefault(r["country_id"], [])
        if rows and week - rows[-1][0] != np.timedelta64(7, "D"):
            raise PanelValidationError(
                f"weeks for {r['country_id']!r} not contiguous and increasing", path, line, "week_start"
            )
        rows.append((week, deaths))
    return {
        cid: (np.array([w for w, _ in rows], dtype="datetime64[D]"),
              np.array([d for _, d in rows], dtype=np.int64))
        for cid, rows in per.items()
    }


def read_ceasefires(path) -> dict:
    per = {}
    for line, r in _rows(path, ("country_id", "effective_date")):
        day = _parse(r["effective_date"], "date", path, line, "effective_date")
        per.setdefault(r["country_id"], []).append(day)
    return per


def read_covariates(path) -> dict:
    """country_id -> {year: (polyarchy, gdp_pc, population)}."""
    per = {}
    for line, r in _rows(path, ("country_id", "year", "polyarchy", "gdp_pc", "population")):
        year = _parse(r["year"], "int", path, line, "year")
        v = _parse(r["polyarchy"], "float", path, line, "polyarchy")
        g = _parse(r["gdp_pc"], "float", path, line, "gdp_pc")
        pop = _parse(r["population"], "float", path, line, "population")
        if not 0.0 <= v <= 1.0:
            raise PanelValidationError("polyarchy outside [0, 1]", path, line, "polyarchy")
        if not g > 0:
            raise PanelValidationError("gdp_pc must be positive", path, line, "gdp_pc")
        if not pop > 0:
            raise PanelValidationError("population must be positive", path, line, "population")
        table = per.setdefault(r["country_id"], {})
        if year in table:
            raise PanelValidationError(f"duplicate year {year}", path, line, "year")
        table[year] = (v, g, pop)
    return per


def assemble_panels(events: dict, ceasefires: dict, covariates: dict, report=None):
    """Build labelled, standardized panels from parsed input tables.

    Countries are processed in sorted id order. Returns ``(panels, report)``.
    """
    for cid in sorted(set(ceasefires) - set(events)):
        warnings.warn(f"ceasefires for unknown country {cid!r}; skipped", IngestWarning, stacklevel=2)
    raw = []
    for cid in sorted(events):
        weeks, deaths = events[cid]
        if cid not in covariates:
            raise PanelValidationError(f"no covariates for country {cid!r}")
        pre, cf = build_indicators(ceasefires.get(cid, []), weeks)
        annual = lagged_annual(weeks, covariates[cid], cid)
        x = raw_design(weeks, pre, cf, annual[:, 0], annual[:, 1], annual[:, 2])
        raw.append(CountryPanel(
            cid, weeks, deaths, x, FULL_COVARIATES, apply_label_rule(deaths), annual[:, 2],
        ))
    return standardize_covariates(raw, report)


def ingest(events_path, ceasefires_path, covariates_path, report=None):
    """Read the three raw tables and return ``(panels, report)``."""
    return assemble_panels(
        read_events(events_path), read_ceasefires(ceasefires_path),
        read_covariates(covariates_path), report,
    )


# -- raw CSV output ----------------------------------------------------------

def write_events_csv(events: dict, path):
    """Inverse of ``read_events``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["country_id", "week_start", "deaths"])
        for cid in sorted(events):
            weeks, deaths = events[cid]
            for wk, d in zip(weeks, deaths):
                w.writerow([cid, str(wk), int(d)])


def write_ceasefires_csv(ceasefires: dict, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["country_id", "effective_date"])
        for cid in sorted(ceasefires):
            for day in sorted(ceasefires[cid]):
                w.writerow([cid, str(np.datetime64(day, "D"))])


def write_covariates_csv(covariates: dict, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["country_id", "year", "polyarchy", "gdp_pc", "population"])
        for cid in sorted(covariates):
            for year in sorted(covariates[cid]):
                w.writerow([cid, year, *(_fmt(v) for v in covariates[cid][year])])


# -- canonical panel CSV -----------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def write_panel_csv(panels, path):
    """Write panels in the canonical long format (one row per country-week)."""
    covariates = panels[0].covariates if panels else FULL_COVARIATES
    cols = [c for c in covariates if c != "intercept"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["country_id", "week_start", "deaths", *cols, "label"])
        for p in panels:
            if p.covariates != covariates:
                raise ValueError("panels disagree on covariate layout")
            for k in range(len(p)):
                vals = []
                for j, c in enumerate(p.covariates[1:], start=1):
                    v = p.x[k, j]
                    vals.append(str(int(v)) if c in FLAG_COLUMNS else _fmt(v))
                w.writerow([
                    p.country_id, str(p.weeks[k]), int(p.deaths[k]), *vals,
                    "1" if p.label[k] else "",
                ])


def read_panel_csv(path, report: StandardizationReport = None):
    """Read a canonical panel CSV back into ``CountryPanel`` objects.

    When ``report`` is supplied and the file has a ``log_pop`` column, the
    raw population per week is reconstructed for the count cap.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), None)
    if header is None:
        raise PanelValidationError("empty file, header row required", path, 1)
    if header[:3] != ["country_id", "week_start", "deaths"] or header[-1] != "label":
        raise PanelValidationError("not a canonical panel header", path, 1)
    cov_cols = header[3:-1]
    covariates = ("intercept", *cov_cols)
    per = {}
    for line, r in _rows(path, header):
        week = _parse(r["week_start"], "date", path, line, "week_start")
        deaths = _parse(r["deaths"], "int", path, line, "deaths")
        xs = [1.0] + [_parse(r[c], "float", path, line, c) for c in cov_cols]
        lab = r["label"]
        if lab not in ("", "1"):
            raise PanelValidationError("only state 1 may be labelled", path, line, "label")
        per.setdefault(r["country_id"], []).append((week, deaths, xs, lab == "1"))
    panels = []
    for cid, rows in per.items():
        x = np.array([r[2] for r in rows])
        pop = None
        if report is not None and "log_pop" in cov_cols and "log_pop" in report.mean:
            pop = np.exp(report.invert("log_pop", x[:, covariates.index("log_pop")]))
        panels.append(CountryPanel(
            cid, [r[0] for r in rows], [r[1] for r in rows], x, covariates,
            [r[3] for r in rows], pop,
        ))
    return panels
