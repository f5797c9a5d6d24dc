"""Home-location imputation from monthly sightings.

The home cell is found at geohash level 6 first, then refined to the
busiest level-7 cell inside it. Level-6 candidates must be observed on
at least 3 days, on strictly more than half of the device's observed
days, and for 2+ distinct hours on average over the days the cell was
seen. Candidates are ranked by overall activity, the top three re-ranked
by nighttime presence, and the winner is the home cell.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

from .ingest import LocalSighting
from .timeops import NightWindow

DEFAULT_NIGHT = NightWindow(21, 6)
MIN_CANDIDATE_DAYS = 3
MIN_AVG_DAILY_HOURS = 2.0


@dataclass(frozen=True)
class CellActivityStats:
    """Day/hour/sighting tallies for one cell, overall and at night.

    Counts are kept as integers so that ranking compares the underlying
    ratios exactly instead of through rounded floats.
    """

    cell: str
    days_observed: int
    hour_slots: int  # distinct (day, hour) pairs with a sighting
    sightings: int
    nights_observed: int
    night_hour_slots: int  # distinct (night, hour) pairs
    night_sightings: int

    @property
    def avg_daily_hours(self) -> float:
        return self.hour_slots / self.days_observed if self.days_observed else 0.0

    @property
    def avg_hourly_sightings(self) -> float:
        return self.sightings / self.hour_slots if self.hour_slots else 0.0

    @property
    def avg_nightly_hours(self) -> float:
        return self.night_hour_slots / self.nights_observed if self.nights_observed else 0.0

    @property
    def avg_nightly_hourly_sightings(self) -> float:
        return self.night_sightings / self.night_hour_slots if self.night_hour_slots else 0.0

    def _frac(self, num: int, den: int) -> Fraction:
        return Fraction(num, den) if den else Fraction(0)

    def activity_key(self):
        """Descending activity order; ascending cell code breaks ties."""
        return (
            -self.days_observed,
            -self._frac(self.hour_slots, self.days_observed),
            -self._frac(self.sightings, self.hour_slots),
            self.cell,
        )

    def night_key(self):
        return (
            -self.nights_observed,
            -self._frac(self.night_hour_slots, self.nights_observed),
            -self._frac(self.night_sightings, self.night_hour_slots),
            self.cell,
        )


@dataclass(frozen=True)
class HomeLocation:
    device_id: str
    home6: str
    home7: str


def observed_days(sightings: Iterable[LocalSighting]) -> int:
    """Distinct local dates on which the device was seen anywhere."""
    return len({s.day for s in sightings})


def cell_activity(
    sightings: Iterable[LocalSighting],
    level: int,
    night: NightWindow = DEFAULT_NIGHT,
) -> list[CellActivityStats]:
    """Per-cell activity tallies at the given geohash level."""
    # cell -> {(day, hour): count}
    slots: dict[str, dict[tuple[int, int], int]] = {}
    for s in sightings:
        cell = s.cell7[:level]
        m = slots.get(cell)
        if m is None:
            m = {}
            slots[cell] = m
        key = (s.day, s.hour)
        m[key] = m.get(key, 0) + 1

    out = []
    for cell, m in slots.items():
        days = set()
        nights: dict[tuple[int, int], int] = {}
        night_days = set()
        total = 0
        for (day, hour), count in m.items():
            days.add(day)
            total += count
            n = night.night_of(day, hour)
            if n is not None:
                nights[(n, hour)] = count
                night_days.add(n)
        out.append(
            CellActivityStats(
                cell=cell,
                days_observed=len(days),
                hour_slots=len(m),
                sightings=total,
                nights_observed=len(night_days),
                night_hour_slots=len(nights),
                night_sightings=sum(nights.values()),
            )
        )
    return out


def candidate_cells(
    stats: Iterable[CellActivityStats],
    device_observed_days: int,
    min_days: int = MIN_CANDIDATE_DAYS,
    min_avg_hours: float = MIN_AVG_DAILY_HOURS,
) -> list[CellActivityStats]:
    """Cells regular enough to be home candidates.

    Keeps cells observed on >= min_days days, on strictly more than half
    of the device's observed days, and with >= min_avg_hours distinct
    hours on average across the days the cell was observed.
    """
    kept = []
    for st in stats:
        if st.days_observed < min_days:
            continue
        if 2 * st.days_observed <= device_observed_days:
            continue
        # exact comparison: hour_slots/days >= min_avg_hours
        if st.hour_slots < min_avg_hours * st.days_observed:
            continue
        kept.append(st)
    return kept


def rank_activity(candidates: Iterable[CellActivityStats], top: int = 3) -> list[CellActivityStats]:
    """Top cells by (days, avg daily hours, avg hourly sightings), descending."""
    return sorted(candidates, key=CellActivityStats.activity_key)[:top]


def rank_nighttime(ranked: Sequence[CellActivityStats]) -> str | None:
    """Re-rank the activity short-list by nighttime presence; return the winner.

    When no cell has any nighttime observation the nighttime cascade
    degenerates; the activity order is kept and its head returned.
    """
    if not ranked:
        return None
    if all(st.nights_observed == 0 for st in ranked):
        return ranked[0].cell
    return min(ranked, key=CellActivityStats.night_key).cell


@dataclass(frozen=True)
class HomeImputation:
    """Imputation result plus the audit fields the home table reports."""

    home: HomeLocation
    days_observed: int
    candidate_count: int


def impute_home(
    device_id: str,
    sightings: list[LocalSighting],
    night: NightWindow = DEFAULT_NIGHT,
) -> HomeImputation | None:
    """Impute the device's home cell, or None when no cell qualifies.

    Runs the candidate filter and both ranking cascades at level 6, then
    repeats them over the level-7 cells inside the chosen level-6 cell
    (day shares evaluated within that cell's sightings). If no level-7
    cell passes the candidate filter, the level-7 cell ranked first by
    the activity cascade alone is used, so a valid home6 always yields
    a home7.
    """
    total_days = observed_days(sightings)
    stats6 = cell_activity(sightings, 6, night)
    cands6 = candidate_cells(stats6, total_days)
    if not cands6:
        return None
    home6 = rank_nighttime(rank_activity(cands6))
    assert home6 is not None

    inside = [s for s in sightings if s.cell7.startswith(home6)]
    stats7 = cell_activity(inside, 7, night)
    cands7 = candidate_cells(stats7, observed_days(inside))
    if cands7:
        home7 = rank_nighttime(rank_activity(cands7))
    else:
        home7 = rank_activity(stats7, top=1)[0].cell
    assert home7 is not None
    return HomeImputation(
        home=HomeLocation(device_id, home6, home7),
        days_observed=total_days,
        candidate_count=len(cands6),
    )
