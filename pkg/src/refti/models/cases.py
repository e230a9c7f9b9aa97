"""Daily case-count ingestion (ECDC distribution CSV) and a bundled synthetic series."""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import io
import math
from importlib import resources
from typing import Optional

import numpy as np

from refti.errors import DataError
from refti.models.renewal import CaseSeries, _forward, gi_rate_for_mean

ECDC_URL = "https://opendata.ecdc.europa.eu/covid19/casedistribution/csv"
ECDC_COLUMNS = ("dateRep", "cases", "countriesAndTerritories")
ECDC_HEADER = ("dateRep", "day", "month", "year", "cases", "deaths", "countriesAndTerritories",
               "geoId", "countryterritoryCode", "popData2019", "continentExp")
DEFAULT_COUNTRY = "South_Korea"
START_DATE = dt.date(2019, 12, 31)
END_DATE = dt.date(2020, 7, 18)
SYNTHETIC_FILE = "south_korea_synthetic_ecdc.csv"


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _parse_date(s: str) -> dt.date:
    s = s.strip()
    for fmt in ("%d/%m/%Y", "%Y-%m-%d"):
        try:
            return dt.datetime.strptime(s, fmt).date()
        except ValueError:
            continue
    raise DataError(f"unrecognised date {s!r}")


def _country_matches(value: str, wanted: str) -> bool:
    norm = lambda v: v.strip().lower().replace(" ", "_")  # noqa: E731
    return norm(value) == norm(wanted)


def parse_ecdc_csv(text: str, country: str = DEFAULT_COUNTRY, start: Optional[dt.date] = START_DATE,
                   end: Optional[dt.date] = END_DATE) -> CaseSeries:
    """Filter an ECDC-schema CSV to one country; sort ascending; zero-fill missing days.

    Duplicate dates are rejected rather than merged.
    """
    reader = csv.DictReader(io.StringIO(text))
    header = reader.fieldnames or []
    missing = [c for c in ECDC_COLUMNS if c not in header]
    if missing:
        raise DataError(f"case CSV is missing required columns: {', '.join(missing)}")
    counts = {}
    for row in reader:
        if not _country_matches(row["countriesAndTerritories"], country):
            continue
        day = _parse_date(row["dateRep"])
        if day in counts:
            raise DataError(f"duplicate date {day.isoformat()} for {country}")
        try:
            n = float(row["cases"])
        except ValueError as exc:
            raise DataError(f"non-numeric case count {row['cases']!r} on {day}") from exc
        if n != int(n):
            raise DataError(f"non-integer case count {n} on {day}")
        # negative corrections occur in the source; they are clipped to zero
        counts[day] = max(int(n), 0)
    return _to_series(counts, start, end, country)


def parse_normalised_csv(text: str) -> CaseSeries:
    """Read the ``date,cases`` file written by :func:`write_normalised_csv`."""
    reader = csv.DictReader(io.StringIO(text))
    missing = [c for c in ("date", "cases") if c not in (reader.fieldnames or [])]
    if missing:
        raise DataError(f"case CSV is missing required columns: {', '.join(missing)}")
    counts = {}
    for row in reader:
        day = _parse_date(row["date"])
        if day in counts:
            raise DataError(f"duplicate date {day.isoformat()}")
        counts[day] = int(row["cases"])
    return _to_series(counts, None, None, "")


def _to_series(counts: dict, start, end, label) -> CaseSeries:
    if not counts:
        raise DataError(f"no rows for {label!r}" if label else "no rows")
    days = sorted(counts)
    lo = max(days[0], start) if start else days[0]
    hi = min(days[-1], end) if end else days[-1]
    if hi < lo:
        raise DataError("no rows inside the requested date range")
    n = (hi - lo).days + 1
    dates = [lo + dt.timedelta(i) for i in range(n)]
    return CaseSeries(dates, np.array([counts.get(d, 0) for d in dates], dtype=float), source=label)


def load_case_file(path: str, country: str = DEFAULT_COUNTRY) -> CaseSeries:
    """Accept either the ECDC schema or a normalised ``date,cases`` file."""
    try:
        with open(path, newline="") as fh:
            text = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read case data {path}: {exc}") from exc
    first = text.splitlines()[0] if text else ""
    if "dateRep" in first:
        return parse_ecdc_csv(text, country)
    return parse_normalised_csv(text)


def write_normalised_csv(series: CaseSeries) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["date", "cases"])
    for d, c in zip(series.dates, series.cases):
        w.writerow([d.isoformat(), int(c)])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# synthetic series


def synthetic_south_korea(seed: int = 20200120) -> CaseSeries:
    """Renewal-model simulation shaped like the early South Korean epidemic.

    A slow start from 20 January 2020, a sharp outbreak in late February,
    suppression in March and a long low plateau. Generation interval mean
    6.5 days, negative-binomial noise with ``phi = 15``.
    """
    rng = np.random.default_rng(seed)
    first = dt.date(2020, 1, 20)
    T = (END_DATE - first).days + 1
    eps = np.empty(T)
    eps[:23] = math.log(1.05)
    eps[23:38] = math.log(5.0)
    eps[38:70] = math.log(0.65)
    a = 0.0
    for t in range(70, T):
        a = 0.8 * a + rng.normal(0.0, 0.05)
        eps[t] = math.log(0.99) + a
    kappa = gi_rate_for_mean(6.5)
    S = 7
    f, _, _, _ = _forward(np.ascontiguousarray(eps[S:]), 1, kappa, 2.0, S, T)
    phi = 15.0
    y = rng.negative_binomial(phi, phi / (phi + np.maximum(f, 1e-8)))
    y[0] = max(int(y[0]), 1)
    lead = (first - START_DATE).days
    dates = [START_DATE + dt.timedelta(i) for i in range(lead + T)]
    cases = np.concatenate([np.zeros(lead), y]).astype(float)
    return CaseSeries(dates, cases, source="synthetic")


def ecdc_csv_text(series: CaseSeries, country: str = DEFAULT_COUNTRY) -> str:
    """Render a series in the ECDC distribution schema (newest date first)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ECDC_HEADER)
    for d, c in sorted(zip(series.dates, series.cases), reverse=True):
        w.writerow([d.strftime("%d/%m/%Y"), d.day, d.month, d.year, int(c), 0, country,
                    "KR", "KOR", 51709098, "Asia"])
    return buf.getvalue()


def bundled_case_path():
    return resources.files("refti.models").joinpath("data").joinpath(SYNTHETIC_FILE)


def default_series() -> CaseSeries:
    with open(bundled_case_path(), newline="") as fh:
        return parse_ecdc_csv(fh.read(), DEFAULT_COUNTRY)
