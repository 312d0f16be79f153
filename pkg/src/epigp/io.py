"""Reading case CSVs and writing JSON / CSV artifacts."""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
import os
import tempfile
import urllib.request
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError
from .transform import CaseSeries, forward_fill

__all__ = [
    "OWID_URL",
    "ingest_csv",
    "parse_cases",
    "extract_owid",
    "fetch_owid",
    "write_text_atomic",
    "write_json",
    "write_csv",
    "dumps_json",
]

OWID_URL = "https://covid.ourworldindata.org/data/owid-covid-data.csv"
OWID_COLUMN = "new_cases_smoothed_per_million"


def parse_cases(
    text: str,
    fill: str | None = None,
    epsilon_floor: float | None = None,
    source: str = "<string>",
) -> CaseSeries:
    """Parse ``date,cases`` CSV text (ISO-8601 dates, LF or CRLF line endings)."""
    if fill not in (None, "forward"):
        raise DataError(f"unknown fill mode {fill!r}")
    reader = csv.reader(io.StringIO(text.lstrip("﻿"), newline=""))
    try:
        header = [h.strip().lower() for h in next(reader)]
    except StopIteration:
        raise DataError(f"{source}: empty file") from None
    try:
        date_col, case_col = header.index("date"), header.index("cases")
    except ValueError:
        raise DataError(f"{source}: header must contain 'date' and 'cases', got {header}") from None

    rows: dict[dt.date, tuple[int, float]] = {}
    for fields in reader:
        line = reader.line_num
        if not fields or all(not f.strip() for f in fields):
            continue
        try:
            day = dt.date.fromisoformat(fields[date_col].strip())
            value = float(fields[case_col])
        except (IndexError, ValueError) as exc:
            raise DataError(f"{source}: malformed row at line {line}: {exc}") from None
        if day in rows:
            raise DataError(f"{source}: duplicate date {day} at line {line} (first seen at line {rows[day][0]})")
        if epsilon_floor is not None:
            value += epsilon_floor
        if not np.isfinite(value) or value <= 0:
            raise DataError(
                f"{source}: non-positive case count {value} at line {line}; "
                "use an epsilon floor to keep zero-case days"
            )
        rows[day] = (line, value)
    if not rows:
        raise DataError(f"{source}: no data rows")
    days = sorted(rows)
    dates = np.array(days, dtype="datetime64[D]")
    values = np.array([rows[d][1] for d in days])
    if fill == "forward":
        dates, values = forward_fill(dates, values)
    return CaseSeries(dates, values)


def ingest_csv(path, fill: str | None = None, epsilon_floor: float | None = None) -> CaseSeries:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"input file not found: {path}") from None
    return parse_cases(text, fill=fill, epsilon_floor=epsilon_floor, source=str(path))


def extract_owid(
    text: str,
    location: str = "United Kingdom",
    column: str = OWID_COLUMN,
    start: str = "2022-03-01",
    end: str = "2023-02-28",
) -> list[tuple[str, str]]:
    """Pull ``(date, value)`` rows for one location out of the OWID covid CSV.

    Rows with an empty value are skipped; the result is sorted by date.
    """
    reader = csv.DictReader(io.StringIO(text, newline=""))
    if reader.fieldnames is None or column not in reader.fieldnames:
        raise DataError(f"OWID table has no column {column!r}")
    out = []
    for row in reader:
        if row.get("location") != location:
            continue
        day, value = row["date"], row[column].strip()
        if start <= day <= end and value:
            out.append((day, value))
    out.sort()
    return out


def fetch_owid(dest, url: str = OWID_URL, timeout: float = 60.0, **kwargs) -> int:
    """Download the OWID table and write a ``date,cases`` CSV; returns the row count."""
    with urllib.request.urlopen(url, timeout=timeout) as resp:  # noqa: S310
        text = resp.read().decode("utf-8")
    rows = extract_owid(text, **kwargs)
    write_csv(dest, ["date", "cases"], rows)
    return len(rows)


def write_text_atomic(path, text: str) -> Path:
    """Write via a temporary file in the same directory, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (dt.date, np.datetime64)):
        return str(obj)
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def dumps_json(payload) -> str:
    return json.dumps(payload, indent=2, default=_default) + "\n"


def write_json(path, payload) -> Path:
    return write_text_atomic(path, dumps_json(payload))


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(["" if v is None else v for v in row])
    return write_text_atomic(path, buf.getvalue())
