"""Station-record CSV ingestion and writing.

A series file has the header ``year,month,<name>[,<name>]`` followed by one
row per month; a metadata file has the header ``year,month``. Row numbers in
diagnostics are 1-based file lines (the header is line 1).
"""
from __future__ import annotations

import csv
import io

import numpy as np

from .errors import GapError, ParseError, RangeError
from .model import Metadata, SeriesData

__all__ = ["read_series", "read_metadata", "ingest", "write_series", "time_index"]


def time_index(year: int, month: int, start: tuple[int, int]) -> int:
    """1-based index of ``(year, month)`` in a monthly record beginning at ``start``."""
    return 12 * (year - start[0]) + (month - start[1]) + 1


def _rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        rows = [(i + 2, row) for i, row in enumerate(reader) if any(c.strip() for c in row)]
    return header, rows


def _year_month(path, line, row):
    try:
        year, month = int(row[0]), int(row[1])
    except (ValueError, IndexError):
        raise ParseError(f"{path}: row {line}: year and month must be integers") from None
    if not 1 <= month <= 12:
        raise ParseError(f"{path}: row {line}: month {month} outside 1..12")
    return year, month


def read_series(path, ar_order: int = 0, period: int = 12) -> SeriesData:
    """Read a monthly record; rows may appear in any order but must not skip months."""
    header, rows = _rows(path)
    if len(header) not in (3, 4) or [h.lower() for h in header[:2]] != ["year", "month"]:
        raise ParseError(f"{path}: header must be year,month,<value>[,<value>], got {header}")
    ncol = len(header)
    seen: dict[tuple[int, int], int] = {}
    parsed = []
    for line, row in rows:
        if len(row) != ncol or any(not c.strip() for c in row):
            raise ParseError(f"{path}: row {line}: expected {ncol} non-empty cells")
        ym = _year_month(path, line, row)
        if ym in seen:
            raise ParseError(f"{path}: rows {seen[ym]} and {line}: duplicate {ym[0]}-{ym[1]:02d}")
        seen[ym] = line
        try:
            vals = [float(c) for c in row[2:]]
        except ValueError:
            raise ParseError(f"{path}: row {line}: non-numeric value") from None
        if not all(np.isfinite(vals)):
            raise ParseError(f"{path}: row {line}: missing or non-finite value")
        parsed.append((ym, line, vals))
    if not parsed:
        raise ParseError(f"{path}: no data rows")
    parsed.sort()
    start = parsed[0][0]
    for k, ((y, m), line, _) in enumerate(parsed):
        if time_index(y, m, start) != k + 1:
            prev = parsed[k - 1]
            raise GapError(
                f"{path}: row {line}: {y}-{m:02d} does not follow "
                f"{prev[0][0]}-{prev[0][1]:02d} (row {prev[1]})"
            )
    values = np.array([v for _, _, v in parsed])
    try:
        return SeriesData(values, period, ar_order, start, tuple(header[2:]))
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None


def read_metadata(path, series: SeriesData) -> Metadata:
    """Map documented (year, month) entries to time indices of ``series``."""
    header, rows = _rows(path)
    if [h.lower() for h in header[:2]] != ["year", "month"]:
        raise ParseError(f"{path}: header must start with year,month, got {header}")
    if series.start is None:
        raise ParseError("series has no calendar start; cannot place metadata")
    p, n = series.ar_order, series.n
    times = set()
    for line, row in rows:
        y, m = _year_month(path, line, row)
        t = time_index(y, m, series.start)
        if not p < t <= n:
            raise RangeError(
                f"{path}: row {line}: {y}-{m:02d} maps to t={t}, outside {p + 1}..{n}"
            )
        times.add(t)
    return Metadata.from_times(times, n, p)


def ingest(series_path, metadata_path=None, ar_order: int = 0, period: int = 12):
    """Read a series and optional metadata; returns ``(SeriesData, Metadata or None)``."""
    data = read_series(series_path, ar_order, period)
    meta = read_metadata(metadata_path, data) if metadata_path else None
    return data, meta


def write_series(data: SeriesData, fh=None, start: tuple[int, int] | None = None) -> str:
    """Write ``data`` in the record format; returns the text when ``fh`` is None."""
    start = start or data.start or (1, 1)
    out = fh if fh is not None else io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["year", "month", *data.names])
    for i, row in enumerate(data.values):
        k = start[1] - 1 + i
        w.writerow([start[0] + k // 12, k % 12 + 1, *(repr(float(v)) for v in row)])
    return out.getvalue() if fh is None else ""
