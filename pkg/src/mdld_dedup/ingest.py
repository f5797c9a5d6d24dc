"""Parse raw vendor sighting files into validated, localized records.

Input files are delimiter-separated text with a header row naming the six
canonical columns (any order, vendor names remappable via config):
device_id, utc_timestamp, latitude, longitude, accuracy, utc_offset.
Files ending in ``.gz`` are decompressed on the fly.
"""

from __future__ import annotations

import csv
import gzip
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple, TextIO

from .errors import SchemaError
from .geohash import encode, parent
from .timeops import local_day_hour

CANONICAL_COLUMNS = (
    "device_id",
    "utc_timestamp",
    "latitude",
    "longitude",
    "accuracy",
    "utc_offset",
)


class SightingRecord(NamedTuple):
    """One validated raw row."""

    device_id: str
    utc_timestamp: int
    lat: float
    lon: float
    accuracy: float
    utc_offset: int


class LocalSighting(NamedTuple):
    """A sighting shifted to device-local time and keyed to geohash cells.

    ``day`` is the local calendar date as an epoch day number.
    """

    device_id: str
    day: int
    hour: int
    cell7: str
    utc_timestamp: int

    @property
    def cell6(self) -> str:
        return parent(self.cell7, 6)


class RowError(NamedTuple):
    """One rejected input row."""

    source: str
    line: int
    reason: str


@dataclass
class SchemaConfig:
    """Input schema knobs: delimiter and vendor-specific column names."""

    delimiter: str = ","
    # canonical name -> name appearing in the vendor file header
    column_map: dict[str, str] = field(default_factory=dict)

    def header_name(self, canonical: str) -> str:
        return self.column_map.get(canonical, canonical)


def open_text(path: str) -> TextIO:
    """Open a possibly gzip-compressed text file for reading."""
    if str(path).endswith(".gz"):
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8", newline="")
    return open(path, "r", encoding="utf-8", newline="")


def _column_positions(header: list[str], schema: SchemaConfig, source: str) -> dict[str, int]:
    positions = {}
    stripped = [h.strip() for h in header]
    for canonical in CANONICAL_COLUMNS:
        name = schema.header_name(canonical)
        try:
            positions[canonical] = stripped.index(name)
        except ValueError:
            raise SchemaError(
                f"{source}: required column {name!r} (for {canonical}) "
                f"missing from header {stripped!r}"
            ) from None
    return positions


def parse_sightings(
    lines: Iterable[str] | TextIO,
    schema: SchemaConfig | None = None,
    source: str = "<stream>",
    errors: list[RowError] | None = None,
) -> Iterator[SightingRecord]:
    """Yield one SightingRecord per well-formed row, streaming.

    Malformed rows are appended to ``errors`` (reason-coded, never silently
    dropped); a missing required column raises SchemaError immediately.
    """
    schema = schema or SchemaConfig()
    reader = csv.reader(lines, delimiter=schema.delimiter)
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError(f"{source}: empty input, header row required") from None
    pos = _column_positions(header, schema, source)
    i_dev = pos["device_id"]
    i_ts = pos["utc_timestamp"]
    i_lat = pos["latitude"]
    i_lon = pos["longitude"]
    i_acc = pos["accuracy"]
    i_off = pos["utc_offset"]
    n_cols = max(pos.values()) + 1

    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) < n_cols:
            _log(errors, source, line_no, "short_row")
            continue
        device_id = row[i_dev].strip()
        if not device_id:
            _log(errors, source, line_no, "empty_device_id")
            continue
        try:
            ts = int(row[i_ts])
            offset = int(row[i_off])
        except ValueError:
            _log(errors, source, line_no, "bad_timestamp")
            continue
        try:
            lat = float(row[i_lat])
            lon = float(row[i_lon])
            acc = float(row[i_acc])
        except ValueError:
            _log(errors, source, line_no, "bad_number")
            continue
        if not (math.isfinite(lat) and -90.0 <= lat <= 90.0):
            _log(errors, source, line_no, "latitude_out_of_range")
            continue
        if not (math.isfinite(lon) and -180.0 <= lon <= 180.0):
            _log(errors, source, line_no, "longitude_out_of_range")
            continue
        if not (math.isfinite(acc) and acc >= 0.0):
            _log(errors, source, line_no, "bad_accuracy")
            continue
        yield SightingRecord(device_id, ts, lat, lon, acc, offset)


def _log(errors: list[RowError] | None, source: str, line: int, reason: str) -> None:
    if errors is not None:
        errors.append(RowError(source, line, reason))


def localize(record: SightingRecord, level: int = 7) -> LocalSighting:
    """Shift a record to local wall-clock time and key it to its cell."""
    day, hour = local_day_hour(record.utc_timestamp, record.utc_offset)
    cell = encode(record.lat, record.lon, level)
    return LocalSighting(record.device_id, day, hour, cell, record.utc_timestamp)


def filter_quality(sightings: list[LocalSighting], min_sightings: int = 10) -> bool:
    """True when the device has enough monthly sightings to keep."""
    return len(sightings) >= min_sightings
