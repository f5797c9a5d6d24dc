"""Co-location validation of flagged duplicate pairs.

A pair is compared only during its common hours (hour slots in which both
devices have sightings). An hour counts as co-located when the two
devices' level-7 cell sets for that hour intersect, which tolerates
mid-hour movement.
"""

from __future__ import annotations

import random
from bisect import bisect_right
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .dedup import AnonymityGroup
from .ingest import LocalSighting

HourCells = dict[tuple[int, int], set[str]]  # (day, hour) -> level-7 cells


def hour_cells(
    sightings: Iterable[LocalSighting],
    window: tuple[int, int] | None = None,
) -> HourCells:
    """Map each observed (day, hour) slot to the cells occupied in it.

    ``window`` is an inclusive (first_day, last_day) range of local days.
    """
    out: HourCells = {}
    if window is None:
        for s in sightings:
            out.setdefault((s.day, s.hour), set()).add(s.cell7)
    else:
        lo, hi = window
        for s in sightings:
            if lo <= s.day <= hi:
                out.setdefault((s.day, s.hour), set()).add(s.cell7)
    return out


def common_hours(a: HourCells, b: HourCells) -> set[tuple[int, int]]:
    """Hour slots in which both devices were observed."""
    return a.keys() & b.keys()


@dataclass(frozen=True)
class PairValidation:
    id_a: str
    id_b: str
    common_hours: int
    colocated_hours: int

    @property
    def rate(self) -> float | None:
        """Co-located share of common hours; None when there are none."""
        if self.common_hours == 0:
            return None
        return self.colocated_hours / self.common_hours


def colocation_rate(
    id_a: str,
    id_b: str,
    hours_a: HourCells,
    hours_b: HourCells,
) -> PairValidation:
    """Validate one pair over its common hours (symmetric in a/b)."""
    shared = common_hours(hours_a, hours_b)
    colocated = sum(1 for slot in shared if hours_a[slot] & hours_b[slot])
    return PairValidation(id_a, id_b, len(shared), colocated)


def pair_count(groups: Sequence[AnonymityGroup]) -> int:
    return sum(g.k * (g.k - 1) // 2 for g in groups if g.k >= 2)


def _unrank_pair(k: int, t: int) -> tuple[int, int]:
    """t-th pair (i < j) of k items in lexicographic order."""
    i = 0
    remaining = t
    row = k - 1
    while remaining >= row:
        remaining -= row
        i += 1
        row -= 1
    return i, i + 1 + remaining


def sample_pairs(
    groups: Sequence[AnonymityGroup],
    sample_size: int,
    seed: int,
) -> list[tuple[str, str]]:
    """Deterministic sample of within-group device pairs.

    Pairs are indexed globally across groups and sampled by index, so the
    full pair list is never materialized even for very large groups.
    When fewer pairs exist than requested, all of them are returned.
    """
    dup_groups = [g for g in groups if g.k >= 2]
    offsets = [0]
    for g in dup_groups:
        offsets.append(offsets[-1] + g.k * (g.k - 1) // 2)
    total = offsets[-1]
    if total <= sample_size:
        indices: Iterable[int] = range(total)
    else:
        indices = sorted(random.Random(seed).sample(range(total), sample_size))
    pairs = []
    for t in indices:
        gi = bisect_right(offsets, t) - 1
        g = dup_groups[gi]
        i, j = _unrank_pair(g.k, t - offsets[gi])
        pairs.append((g.members[i], g.members[j]))
    return pairs


@dataclass(frozen=True)
class ValidationReport:
    n: int
    eligible_pairs: int
    pairs_sampled: int
    pairs_with_common_hours: int
    mean_rate: float | None
    median_rate: float | None
    sample_truncated: bool  # fewer eligible pairs than requested


def validate_sample(
    pairs: Sequence[tuple[str, str]],
    device_hours: Mapping[str, HourCells],
    n: int,
    eligible_pairs: int,
    requested: int,
) -> ValidationReport:
    """Aggregate co-location over sampled pairs (rates over pairs that
    share at least one common hour)."""
    rates = []
    with_common = 0
    for id_a, id_b in pairs:
        pv = colocation_rate(id_a, id_b, device_hours[id_a], device_hours[id_b])
        if pv.common_hours > 0:
            with_common += 1
            rates.append(pv.rate)
    rates.sort()
    mean = sum(rates) / len(rates) if rates else None
    if rates:
        mid = len(rates) // 2
        median = rates[mid] if len(rates) % 2 else (rates[mid - 1] + rates[mid]) / 2
    else:
        median = None
    return ValidationReport(
        n=n,
        eligible_pairs=eligible_pairs,
        pairs_sampled=len(pairs),
        pairs_with_common_hours=with_common,
        mean_rate=mean,
        median_rate=median,
        sample_truncated=eligible_pairs < requested,
    )
