import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdld_dedup import geohash

from oracles import bounds_oracle, encode_oracle

LAT = st.floats(min_value=-90.0, max_value=90.0, allow_nan=False)
LON = st.floats(min_value=-180.0, max_value=180.0, allow_nan=False)
LEVEL = st.integers(min_value=1, max_value=12)


def test_alphabet_is_the_standard_32_set():
    assert len(geohash.ALPHABET) == 32
    assert len(set(geohash.ALPHABET)) == 32
    for missing in "ailo":
        assert missing not in geohash.ALPHABET


def test_equator_prime_meridian_level_1():
    # hand bisection: lon>=0, lat>=0, lon<90, lat<45, lon<45 -> 11000 -> 's'
    assert geohash.encode(0.0, 0.0, 1) == "s"


def test_known_point_matches_oracle():
    assert geohash.encode(38.9924, -76.9293, 7) == encode_oracle(38.9924, -76.9293, 7)


def test_level7_prefix_is_level6():
    code7 = geohash.encode(38.9924, -76.9293, 7)
    assert code7[:6] == geohash.encode(38.9924, -76.9293, 6)


@given(LAT, LON, LEVEL)
@settings(max_examples=300, deadline=None)
def test_encode_matches_independent_oracle(lat, lon, level):
    assert geohash.encode(lat, lon, level) == encode_oracle(lat, lon, level)


@pytest.mark.parametrize(
    "lat,lon",
    [
        (0.0, 0.0),
        (90.0, 180.0),
        (-90.0, -180.0),
        (90.0, -180.0),
        (-90.0, 180.0),
        (45.0, 45.0),
        (-0.0, -0.0),
        (89.9999999, 179.9999999),
        (38.9924, -76.9293),
    ],
)
def test_boundary_points_match_oracle_at_all_levels(lat, lon):
    for level in range(1, 13):
        assert geohash.encode(lat, lon, level) == encode_oracle(lat, lon, level)


@given(LAT, LON, LEVEL)
@settings(max_examples=200, deadline=None)
def test_round_trip_containment(lat, lon, level):
    code = geohash.encode(lat, lon, level)
    lat_lo, lat_hi, lon_lo, lon_hi = geohash.decode_bounds(code)
    # the maximal cell owns its top edges (poles/antimeridian clamp)
    assert lat_lo <= lat <= lat_hi
    assert lon_lo <= lon <= lon_hi
    if lat < lat_hi and lon < lon_hi:
        assert lat >= lat_lo and lon >= lon_lo


@given(LAT, LON, st.integers(min_value=1, max_value=11), st.integers(min_value=0, max_value=11))
@settings(max_examples=200, deadline=None)
def test_prefix_nesting(lat, lon, l1, extra):
    l2 = min(12, l1 + extra)
    assert geohash.encode(lat, lon, l2).startswith(geohash.encode(lat, lon, l1))


def test_decode_bounds_of_s():
    assert geohash.decode_bounds("s") == (0.0, 45.0, 0.0, 45.0)
    assert bounds_oracle("s") == (0.0, 45.0, 0.0, 45.0)


@given(LAT, LON, LEVEL)
@settings(max_examples=150, deadline=None)
def test_decode_bounds_matches_oracle_and_center_reencodes(lat, lon, level):
    code = geohash.encode(lat, lon, level)
    assert geohash.decode_bounds(code) == bounds_oracle(code)
    clat, clon = geohash.center(code)
    assert geohash.encode(clat, clon, level) == code


def test_parent_truncates():
    assert geohash.parent("dqcmc4p", 6) == "dqcmc4"
    assert geohash.parent("dqcmc4p", 7) == "dqcmc4p"
    assert geohash.parent("dqcmc4p", 1) == "d"


@given(LAT, LON)
@settings(max_examples=100, deadline=None)
def test_parent_agrees_with_coarse_encode(lat, lon):
    assert geohash.parent(geohash.encode(lat, lon, 7), 6) == geohash.encode(lat, lon, 6)


def test_parent_rejects_finer_level():
    with pytest.raises(ValueError):
        geohash.parent("dqcmc4", 7)


@pytest.mark.parametrize(
    "lat,lon,level",
    [(90.1, 0, 7), (-91, 0, 7), (0, 181, 7), (0, -180.5, 7),
     (float("nan"), 0, 7), (0, float("inf"), 7), (0, 0, 0), (0, 0, 13)],
)
def test_encode_rejects_bad_input(lat, lon, level):
    with pytest.raises(ValueError):
        geohash.encode(lat, lon, level)


@pytest.mark.parametrize("code", ["", "dqa", "dqcmc4P", "dq cm", "x" * 13])
def test_bad_codes_rejected(code):
    with pytest.raises(ValueError):
        geohash.decode_bounds(code)


def test_encode_is_deterministic():
    assert geohash.encode(12.3456, -98.7654, 9) == geohash.encode(12.3456, -98.7654, 9)


def test_encode_many_equals_scalar():
    rng = random.Random(5)
    lats = [rng.uniform(-90, 90) for _ in range(500)] + [90.0, -90.0, 0.0]
    lons = [rng.uniform(-180, 180) for _ in range(500)] + [180.0, -180.0, 0.0]
    for level in (1, 6, 7, 12):
        got = geohash.encode_many(np.array(lats), np.array(lons), level)
        assert got == [geohash.encode(a, b, level) for a, b in zip(lats, lons)]


def test_level7_dimensions_near_published_size():
    w, h = geohash.cell_dimensions(7)
    assert abs(w - 152.9) / 152.9 < 0.01
    assert abs(h - 152.4) / 152.4 < 0.01


# Published geohash cell-size chart (equator), level -> (width_m, height_m).
PUBLISHED_SIZES = {
    1: (5_009_400.0, 4_992_600.0),
    2: (1_252_300.0, 624_100.0),
    3: (156_500.0, 156_000.0),
    4: (39_100.0, 19_500.0),
    5: (4_900.0, 4_900.0),
    6: (1_200.0, 609.4),
    7: (152.9, 152.4),
    8: (38.2, 19.0),
    9: (4.8, 4.8),
    10: (1.2, 0.595),
    11: (0.149, 0.149),
    12: (0.0372, 0.0186),
}

# chart values are rounded to their printed digits; allow half a unit of
# that rounding on top of the 1% tolerance
ROUNDING = {
    1: (100_000, 100_000), 2: (100_000, 100_000), 3: (100_000, 100_000),
    4: (100_000, 100_000), 5: (100_000, 100_000), 6: (100_000, 0.1),
    7: (0.1, 0.1), 8: (0.1, 0.1), 9: (0.1, 0.1), 10: (0.1, 0.001),
    11: (0.001, 0.001), 12: (0.0001, 0.0001),
}


@pytest.mark.parametrize("level", range(1, 13))
def test_dimensions_match_published_chart(level):
    w, h = geohash.cell_dimensions(level)
    pw, ph = PUBLISHED_SIZES[level]
    rw, rh = ROUNDING[level]
    assert abs(w - pw) <= max(0.01 * pw, rw / 2)
    assert abs(h - ph) <= max(0.01 * ph, rh / 2)


def test_dimensions_halve_with_axis_bits():
    # each extra lon/lat bit halves that axis; width/height ratios between
    # consecutive levels are 8x4 or 4x8 alternating
    w6, h6 = geohash.cell_dimensions(6)
    w7, h7 = geohash.cell_dimensions(7)
    assert math.isclose(w6 / w7, 8.0)
    assert math.isclose(h6 / h7, 4.0)
