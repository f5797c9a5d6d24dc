"""Exact-key device grouping, anonymity statistics and sighting merges.

Two devices are duplicates when they share the imputed level-7 home cell
and the element-wise identical ordered top-N visited list. Grouping is an
exact partition by that key; no fuzzy matching.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .home import HomeLocation
from .ingest import SightingRecord
from .profiles import VisitProfile

DedupKey = tuple[str, tuple[str, ...]]  # (home7, ordered top-N cells)


@dataclass(frozen=True)
class AnonymityGroup:
    key: DedupKey
    members: tuple[str, ...]  # device ids, sorted

    @property
    def k(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class AnonymityStats:
    n: int
    devices: int
    groups: int
    min_k: int
    mean_k: float
    max_k: int
    duplicate_rate: float
    devices_with_duplicates: int
    singleton_share: float


@dataclass(frozen=True)
class MergedDevice:
    canonical_id: str
    source_ids: tuple[str, ...]
    sightings: tuple[SightingRecord, ...]


def dedup_key(home: HomeLocation, profile: VisitProfile) -> DedupKey:
    return (home.home7, profile.top)


def group_devices(
    homes: Mapping[str, HomeLocation],
    profiles: Mapping[str, VisitProfile],
) -> tuple[list[AnonymityGroup], dict[str, int]]:
    """Partition keyed devices into anonymity groups.

    Devices missing a home or a profile are excluded (counted per reason,
    not an error). Output is canonically ordered: groups sorted by key,
    members sorted within each group, so results do not depend on input
    order or worker partitioning.
    """
    excluded = {"missing_home": 0, "missing_profile": 0}
    by_key: dict[DedupKey, list[str]] = {}
    for device_id, profile in profiles.items():
        home = homes.get(device_id)
        if home is None:
            excluded["missing_home"] += 1
            continue
        by_key.setdefault(dedup_key(home, profile), []).append(device_id)
    for device_id in homes:
        if device_id not in profiles:
            excluded["missing_profile"] += 1
    groups = [
        AnonymityGroup(key, tuple(sorted(members)))
        for key, members in sorted(by_key.items())
    ]
    return groups, excluded


def anonymity_stats(groups: Sequence[AnonymityGroup], n: int) -> AnonymityStats | None:
    """Min/mean/max group size and duplicate share; None for no groups."""
    if not groups:
        return None
    sizes = [g.k for g in groups]
    devices = sum(sizes)
    dup_devices = sum(k for k in sizes if k >= 2)
    singletons = sum(1 for k in sizes if k == 1)
    return AnonymityStats(
        n=n,
        devices=devices,
        groups=len(groups),
        min_k=min(sizes),
        mean_k=devices / len(groups),
        max_k=max(sizes),
        duplicate_rate=dup_devices / devices,
        devices_with_duplicates=dup_devices,
        singleton_share=singletons / len(groups),
    )


def duplicate_rate(groups: Sequence[AnonymityGroup]) -> float:
    """Share of keyed devices sitting in a group of size >= 2."""
    total = sum(g.k for g in groups)
    if total == 0:
        return 0.0
    return sum(g.k for g in groups if g.k >= 2) / total


def canonical_id(members: Sequence[str]) -> str:
    return min(members)


def merge_group(
    group: AnonymityGroup,
    sightings_by_device: Mapping[str, Sequence[SightingRecord]],
) -> MergedDevice:
    """Merge a duplicate group's sightings under the canonical id.

    Rows are re-labeled with the canonical id and ordered by timestamp
    (full-field tiebreak keeps the order reproducible).
    """
    canon = canonical_id(group.members)
    merged: list[SightingRecord] = []
    for device_id in group.members:
        for s in sightings_by_device.get(device_id, ()):
            merged.append(SightingRecord(canon, *s[1:]))
    merged.sort(key=lambda s: s[1:])
    return MergedDevice(canon, group.members, tuple(merged))


def dedup_map(groups: Iterable[AnonymityGroup]) -> dict[str, str]:
    """source device id -> canonical device id, for every keyed device."""
    out = {}
    for g in groups:
        canon = canonical_id(g.members)
        for device_id in g.members:
            out[device_id] = canon
    return out
