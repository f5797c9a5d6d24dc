"""Local-time arithmetic on epoch seconds.

Dates are handled as integer day numbers since 1970-01-01 so the hot
paths never touch datetime objects; conversions to calendar dates go
through :mod:`datetime` only at the edges (parsing config, writing
reports).
"""

from __future__ import annotations

import calendar
from datetime import date

SECONDS_PER_DAY = 86400
_EPOCH_ORDINAL = date(1970, 1, 1).toordinal()


def local_day_hour(utc_timestamp: int, utc_offset: int) -> tuple[int, int]:
    """(epoch day number, hour of day) of an instant shifted to local time."""
    local = utc_timestamp + utc_offset
    day, rem = divmod(local, SECONDS_PER_DAY)
    return day, rem // 3600


def day_to_date(day: int) -> date:
    return date.fromordinal(_EPOCH_ORDINAL + day)


def date_to_day(d: date) -> int:
    return d.toordinal() - _EPOCH_ORDINAL


def day_to_iso(day: int) -> str:
    return day_to_date(day).isoformat()


def iso_to_day(text: str) -> int:
    return date.fromisoformat(text).toordinal() - _EPOCH_ORDINAL


def parse_month(text: str) -> tuple[int, int]:
    """Parse "YYYY-MM" into (year, month)."""
    parts = text.split("-")
    if len(parts) != 2 or len(parts[0]) != 4 or len(parts[1]) != 2:
        raise ValueError(f"month must be YYYY-MM: {text!r}")
    try:
        year, month = int(parts[0]), int(parts[1])
    except ValueError:
        raise ValueError(f"month must be YYYY-MM: {text!r}") from None
    if not 1 <= month <= 12:
        raise ValueError(f"month out of range: {text!r}")
    return year, month


def month_day_range(year: int, month: int) -> tuple[int, int]:
    """Inclusive (first_day, last_day) epoch day numbers of a calendar month."""
    first = date_to_day(date(year, month, 1))
    n_days = calendar.monthrange(year, month)[1]
    return first, first + n_days - 1


class NightWindow:
    """Nighttime hour window, possibly wrapping midnight (default 21:00-06:00).

    Hours from ``start`` to midnight belong to the night labeled with that
    calendar day; hours before ``end`` belong to the previous day's night,
    so one sleep period never counts as two nights.
    """

    def __init__(self, start_hour: int = 21, end_hour: int = 6):
        if not (0 <= start_hour <= 23 and 0 <= end_hour <= 23):
            raise ValueError(f"night window hours out of range: {start_hour}-{end_hour}")
        self.start_hour = start_hour
        self.end_hour = end_hour

    def is_night(self, hour: int) -> bool:
        if self.start_hour > self.end_hour:
            return hour >= self.start_hour or hour < self.end_hour
        return self.start_hour <= hour < self.end_hour

    def night_of(self, day: int, hour: int) -> int | None:
        """Day number labeling the night containing (day, hour), if any."""
        if self.start_hour > self.end_hour:
            if hour >= self.start_hour:
                return day
            if hour < self.end_hour:
                return day - 1
            return None
        return day if self.is_night(hour) else None

    def __repr__(self) -> str:
        return f"NightWindow({self.start_hour:02d}:00-{self.end_hour:02d}:00)"
