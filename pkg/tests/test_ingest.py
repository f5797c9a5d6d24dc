import gzip
import io
from datetime import datetime, timezone

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdld_dedup.errors import SchemaError
from mdld_dedup.ingest import (
    LocalSighting,
    RowError,
    SchemaConfig,
    SightingRecord,
    filter_quality,
    localize,
    open_text,
    parse_sightings,
)
from mdld_dedup.timeops import day_to_date

HEADER = "device_id,utc_timestamp,latitude,longitude,accuracy,utc_offset"


def parse(text, schema=None):
    errors = []
    records = list(parse_sightings(io.StringIO(text), schema, errors=errors))
    return records, errors


def test_sample_row_parses():
    records, errors = parse(HEADER + "\nSfbcx-223da,1578010770,38.9924,-76.9293,2,-14400\n")
    assert errors == []
    assert records == [SightingRecord("Sfbcx-223da", 1578010770, 38.9924, -76.9293, 2.0, -14400)]


def test_empty_input_with_header():
    records, errors = parse(HEADER + "\n")
    assert records == []
    assert errors == []


def test_header_order_independent():
    text = "utc_offset,accuracy,longitude,latitude,utc_timestamp,device_id\n-14400,2,-76.9293,38.9924,1578010770,abc\n"
    records, errors = parse(text)
    assert records == [SightingRecord("abc", 1578010770, 38.9924, -76.9293, 2.0, -14400)]


def test_missing_column_is_fatal():
    with pytest.raises(SchemaError):
        parse("device_id,utc_timestamp,latitude,longitude,accuracy\na,1,2,3,4\n")


def test_empty_input_is_schema_error():
    with pytest.raises(SchemaError):
        parse("")


def test_out_of_range_latitude_is_row_error():
    records, errors = parse(HEADER + "\nd1,1578010770,91.0,-76.9,2,-14400\n")
    assert records == []
    assert [e.reason for e in errors] == ["latitude_out_of_range"]


@pytest.mark.parametrize(
    "row,reason",
    [
        ("d1,notanumber,38.0,-76.0,2,-14400", "bad_timestamp"),
        ("d1,1578010770,xx,-76.0,2,-14400", "bad_number"),
        ("d1,1578010770,38.0,-181.0,2,-14400", "longitude_out_of_range"),
        ("d1,1578010770,38.0,-76.0,-3,-14400", "bad_accuracy"),
        ("d1,1578010770,38.0,-76.0,nan,-14400", "bad_accuracy"),
        (",1578010770,38.0,-76.0,2,-14400", "empty_device_id"),
        ("d1,1578010770,38.0", "short_row"),
    ],
)
def test_row_level_errors(row, reason):
    records, errors = parse(HEADER + "\n" + row + "\n")
    assert records == []
    assert [e.reason for e in errors] == [reason]
    assert errors[0].line == 2


def test_row_counts_are_conserved():
    rows = [
        "d1,1578010770,38.0,-76.0,2,-14400",
        "d2,bad,38.0,-76.0,2,-14400",
        "d3,1578010771,95.0,-76.0,2,-14400",
        "d4,1578010772,38.0,-76.0,2,-14400",
        "d5,1578010773,38.0,-76.0,2",
    ]
    records, errors = parse(HEADER + "\n" + "\n".join(rows) + "\n")
    assert len(records) + len(errors) == len(rows)


def test_custom_delimiter_and_column_map():
    schema = SchemaConfig(delimiter="|", column_map={"device_id": "id", "accuracy": "acc_m"})
    text = "id|utc_timestamp|latitude|longitude|acc_m|utc_offset\nz9|1578010770|38.0|-76.0|5|-14400\n"
    records, errors = parse(text, schema)
    assert records[0].device_id == "z9"
    assert records[0].accuracy == 5.0


def test_gzip_input_by_extension(tmp_path):
    path = tmp_path / "v.csv.gz"
    with gzip.open(path, "wt") as f:
        f.write(HEADER + "\nd1,1578010770,38.0,-76.0,2,-14400\n")
    with open_text(str(path)) as f:
        records = list(parse_sightings(f, source=str(path)))
    assert len(records) == 1


def test_localize_sample_row():
    rec = SightingRecord("d1", 1578010770, 38.9924, -76.9293, 2.0, -14400)
    s = localize(rec)
    dt = datetime.fromtimestamp(1578010770 - 14400, tz=timezone.utc)
    assert day_to_date(s.day) == dt.date()
    assert s.hour == dt.hour
    assert s.cell6 == s.cell7[:6]
    assert s.utc_timestamp == rec.utc_timestamp


def test_localize_offset_zero_matches_utc():
    rec = SightingRecord("d1", 1578010770, 10.0, 20.0, 1.0, 0)
    s = localize(rec)
    dt = datetime.fromtimestamp(1578010770, tz=timezone.utc)
    assert (day_to_date(s.day), s.hour) == (dt.date(), dt.hour)


def test_close_sightings_share_date_unless_midnight():
    base = datetime(2020, 1, 10, 23, 59, 45, tzinfo=timezone.utc).timestamp()
    a = localize(SightingRecord("d", int(base), 0.0, 0.0, 1.0, 0))
    b = localize(SightingRecord("d", int(base) + 30, 0.0, 0.0, 1.0, 0))
    assert b.day == a.day + 1  # straddles midnight
    c = localize(SightingRecord("d", int(base) - 60, 0.0, 0.0, 1.0, 0))
    assert c.day == a.day


@given(
    st.integers(min_value=1_577_836_800, max_value=1_580_515_199),
    st.sampled_from([-28800, -18000, -14400, 0, 3600, 19800]),
)
@settings(max_examples=100, deadline=None)
def test_localize_against_calendar_library(ts, offset):
    s = localize(SightingRecord("d", ts, 12.34, 56.78, 1.0, offset))
    dt = datetime.fromtimestamp(ts + offset, tz=timezone.utc)
    assert day_to_date(s.day) == dt.date()
    assert s.hour == dt.hour


def _sightings(n):
    return [LocalSighting("d", 18262, 10, "dqcmc4p", 1578000000 + i) for i in range(n)]


def test_filter_quality_boundary():
    assert not filter_quality(_sightings(9), 10)
    assert filter_quality(_sightings(10), 10)
    assert filter_quality(_sightings(0), 0)
