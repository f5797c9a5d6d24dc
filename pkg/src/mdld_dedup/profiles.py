"""Visited-cell statistics and top-N most-visited profiles."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple

from .ingest import LocalSighting


class VisitStats(NamedTuple):
    cell7: str
    unique_hours: int  # distinct (local day, hour) pairs with a sighting
    sightings: int


@dataclass(frozen=True)
class VisitProfile:
    """A device's top-N visited cells, most-visited first; order matters."""

    device_id: str
    top: tuple[str, ...]

    @property
    def n(self) -> int:
        return len(self.top)


def visited_cells(sightings: Iterable[LocalSighting]) -> list[VisitStats]:
    """One VisitStats per distinct level-7 cell with at least one sighting."""
    hours: dict[str, set[tuple[int, int]]] = {}
    counts: dict[str, int] = {}
    for s in sightings:
        cell = s.cell7
        slot = (s.day, s.hour)
        seen = hours.get(cell)
        if seen is None:
            hours[cell] = {slot}
        else:
            seen.add(slot)
        counts[cell] = counts.get(cell, 0) + 1
    return [VisitStats(c, len(hours[c]), counts[c]) for c in counts]


def rank_visits(stats: Iterable[VisitStats]) -> list[VisitStats]:
    """Order by unique hours then sightings, descending; code breaks ties."""
    return sorted(stats, key=lambda v: (-v.unique_hours, -v.sightings, v.cell7))


def top_n(device_id: str, stats: Iterable[VisitStats], n: int) -> VisitProfile | None:
    """The device's in-order top-N profile, or None with fewer than N cells.

    Devices observed in N-1 or fewer cells carry too little trajectory
    information and are dropped from deduplication at that N.
    """
    if n < 1:
        raise ValueError(f"N must be >= 1: {n!r}")
    ranked = rank_visits(stats)
    if len(ranked) < n:
        return None
    return VisitProfile(device_id, tuple(v.cell7 for v in ranked[:n]))
