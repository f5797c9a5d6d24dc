"""Base-32 geohash encoding, decoding and cell arithmetic.

Cells partition the globe with half-open intervals [min, max) on both
axes, so every coordinate maps to exactly one cell per level; the poles
and the antimeridian (lat +90, lon +180) clamp into the maximal cell.
"""

from __future__ import annotations

import math

import numpy as np

ALPHABET = "0123456789bcdefghjkmnpqrstuvwxyz"
MIN_LEVEL = 1
MAX_LEVEL = 12

_CHAR_INDEX = {c: i for i, c in enumerate(ALPHABET)}
_ALPHA_BYTES = np.frombuffer(ALPHABET.encode("ascii"), dtype=np.uint8)

# Per-degree arc lengths used by the usual geohash cell-size charts:
# equatorial circumference for width, polar circumference for height.
_M_PER_DEG_LON = 2.0 * math.pi * 6378137.0 / 360.0
_M_PER_DEG_LAT = 2.0 * math.pi * 6356752.3 / 360.0

# _SPREAD[b] holds byte b with its bits spread to even positions,
# e.g. 0b101 -> 0b10001; used to interleave lon/lat axis indices.
_SPREAD = [0] * 256
for _b in range(256):
    _v = 0
    for _i in range(8):
        if _b & (1 << _i):
            _v |= 1 << (2 * _i)
    _SPREAD[_b] = _v
_SPREAD_U64 = np.array(_SPREAD, dtype=np.uint64)


def _check_point(lat: float, lon: float) -> None:
    if not (math.isfinite(lat) and -90.0 <= lat <= 90.0):
        raise ValueError(f"latitude out of range [-90, 90]: {lat!r}")
    if not (math.isfinite(lon) and -180.0 <= lon <= 180.0):
        raise ValueError(f"longitude out of range [-180, 180]: {lon!r}")


def _check_level(level: int) -> None:
    if not MIN_LEVEL <= level <= MAX_LEVEL:
        raise ValueError(f"level must be in [{MIN_LEVEL}, {MAX_LEVEL}]: {level!r}")


def _axis_bits(level: int) -> tuple[int, int]:
    """(lon_bits, lat_bits) for a level; longitude gets the odd extra bit."""
    nbits = 5 * level
    return (nbits + 1) // 2, nbits // 2


def _axis_index(x: float, lo: float, span: float, nbits: int) -> int:
    """Index of the half-open dyadic bin containing x on one axis.

    A float quantization gives a candidate within one bin of the true
    answer; the exact comparison against the (exactly representable)
    dyadic bin edges then settles boundary cases, so the result equals
    a pure interval-bisection with >= comparisons.
    """
    cells = 1 << nbits
    i = int((x - lo) / span * cells)
    if i < 0:
        i = 0
    elif i >= cells:
        i = cells - 1
    if x < lo + span * i / cells:
        i -= 1
    elif i + 1 < cells and x >= lo + span * (i + 1) / cells:
        i += 1
    return i


def _interleave(xi: int, yi: int, nbits: int) -> int:
    """Merge axis indices into one integer, longitude bit first."""
    ex = (
        _SPREAD[xi & 0xFF]
        | _SPREAD[(xi >> 8) & 0xFF] << 16
        | _SPREAD[(xi >> 16) & 0xFF] << 32
        | _SPREAD[(xi >> 24) & 0xFF] << 48
    )
    ey = (
        _SPREAD[yi & 0xFF]
        | _SPREAD[(yi >> 8) & 0xFF] << 16
        | _SPREAD[(yi >> 16) & 0xFF] << 32
        | _SPREAD[(yi >> 24) & 0xFF] << 48
    )
    # The final (LSB) bit is a lon bit when the total bit count is odd.
    if nbits & 1:
        return ex | (ey << 1)
    return (ex << 1) | ey


def encode(lat: float, lon: float, level: int = 7) -> str:
    """Encode a WGS84 coordinate to the geohash cell containing it."""
    _check_point(lat, lon)
    _check_level(level)
    n_lon, n_lat = _axis_bits(level)
    xi = _axis_index(lon, -180.0, 360.0, n_lon)
    yi = _axis_index(lat, -90.0, 180.0, n_lat)
    code = _interleave(xi, yi, 5 * level)
    return "".join(
        ALPHABET[(code >> (5 * (level - 1 - k))) & 0x1F] for k in range(level)
    )


def encode_many(lats: np.ndarray, lons: np.ndarray, level: int = 7) -> list[str]:
    """Vectorized :func:`encode` for coordinate arrays (same results).

    Inputs must already be validated; used on the ingest hot path.
    """
    _check_level(level)
    n_lon, n_lat = _axis_bits(level)
    nbits = 5 * level
    xi = _axis_index_np(np.asarray(lons, dtype=np.float64), -180.0, 360.0, n_lon)
    yi = _axis_index_np(np.asarray(lats, dtype=np.float64), -90.0, 180.0, n_lat)
    ex = _spread_np(xi)
    ey = _spread_np(yi)
    if nbits & 1:
        code = ex | (ey << np.uint64(1))
    else:
        code = (ex << np.uint64(1)) | ey
    n = len(code)
    digits = np.empty((n, level), dtype=np.uint8)
    for k in range(level):
        shift = np.uint64(nbits - 5 * (k + 1))
        digits[:, k] = (code >> shift).astype(np.uint8) & 0x1F
    text = _ALPHA_BYTES[digits].tobytes().decode("ascii")
    return [text[i * level : (i + 1) * level] for i in range(n)]


def _axis_index_np(x: np.ndarray, lo: float, span: float, nbits: int) -> np.ndarray:
    cells = 1 << nbits
    cf = float(cells)
    i = ((x - lo) / span * cf).astype(np.int64)
    np.clip(i, 0, cells - 1, out=i)
    i -= (x < lo + span * i / cf).astype(np.int64)
    bump = (x >= lo + span * (i + 1) / cf) & (i + 1 < cells)
    i += bump.astype(np.int64)
    return i.astype(np.uint64)


def _spread_np(v: np.ndarray) -> np.ndarray:
    out = _SPREAD_U64[(v & np.uint64(0xFF)).astype(np.int64)].copy()
    out |= _SPREAD_U64[((v >> np.uint64(8)) & np.uint64(0xFF)).astype(np.int64)] << np.uint64(16)
    out |= _SPREAD_U64[((v >> np.uint64(16)) & np.uint64(0xFF)).astype(np.int64)] << np.uint64(32)
    out |= _SPREAD_U64[((v >> np.uint64(24)) & np.uint64(0xFF)).astype(np.int64)] << np.uint64(48)
    return out


def validate_code(code: str) -> str:
    """Return the code if it is a well-formed geohash, else raise ValueError."""
    if not code:
        raise ValueError("empty geohash code")
    if not MIN_LEVEL <= len(code) <= MAX_LEVEL:
        raise ValueError(f"geohash level out of range: {code!r}")
    for c in code:
        if c not in _CHAR_INDEX:
            raise ValueError(f"invalid geohash character {c!r} in {code!r}")
    return code


def decode_bounds(code: str) -> tuple[float, float, float, float]:
    """Bounding box (lat_min, lat_max, lon_min, lon_max) of a cell.

    Intervals are half-open: the cell owns its min edges, points on the
    max edges belong to the neighbouring cell.
    """
    validate_code(code)
    lat_lo, lat_hi = -90.0, 90.0
    lon_lo, lon_hi = -180.0, 180.0
    lon_turn = True
    for c in code:
        d = _CHAR_INDEX[c]
        for shift in (4, 3, 2, 1, 0):
            bit = (d >> shift) & 1
            if lon_turn:
                mid = (lon_lo + lon_hi) / 2
                if bit:
                    lon_lo = mid
                else:
                    lon_hi = mid
            else:
                mid = (lat_lo + lat_hi) / 2
                if bit:
                    lat_lo = mid
                else:
                    lat_hi = mid
            lon_turn = not lon_turn
    return lat_lo, lat_hi, lon_lo, lon_hi


def center(code: str) -> tuple[float, float]:
    """(lat, lon) midpoint of a cell's bounding box."""
    lat_lo, lat_hi, lon_lo, lon_hi = decode_bounds(code)
    return (lat_lo + lat_hi) / 2, (lon_lo + lon_hi) / 2


def parent(code: str, level: int) -> str:
    """Ancestor cell at a coarser level (prefix truncation)."""
    validate_code(code)
    if level > len(code):
        raise ValueError(
            f"parent level {level} exceeds cell level {len(code)} of {code!r}"
        )
    if level < MIN_LEVEL:
        raise ValueError(f"level must be >= {MIN_LEVEL}: {level!r}")
    return code[:level]


def cell_dimensions(level: int) -> tuple[float, float]:
    """Approximate (width_m, height_m) of a cell at the equator."""
    _check_level(level)
    n_lon, n_lat = _axis_bits(level)
    width = 360.0 / (1 << n_lon) * _M_PER_DEG_LON
    height = 180.0 / (1 << n_lat) * _M_PER_DEG_LAT
    return width, height
