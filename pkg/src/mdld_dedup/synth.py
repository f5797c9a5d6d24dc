"""Synthetic multi-vendor sighting data with known device/user ground truth.

Users follow a simple anchor-based weekly routine (home nights, weekday
work, weekend spot, a ladder of evening anchors with well-separated
monthly hour counts). Each user owns 1-3 devices; each device samples the
shared routine through a vendor profile (per-hour dropout, sampling
period, positional jitter), which reproduces the multi-vendor situation
where the same person appears under several device ids with different
sighting counts.

Determinism: all draws flow from per-user and per-device substreams of
the master seed, so output is byte-identical for a fixed config
regardless of how generation is parallelized or chunked.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass, field
from typing import Iterator, Mapping

import numpy as np

from .errors import ConfigError
from .geohash import center, encode
from .ingest import SightingRecord
from .timeops import SECONDS_PER_DAY, month_day_range, parse_month

_M_PER_DEG = 111320.0
_ID_CHARS = "abcdefghjkmnpqrstuvwxyz23456789"


@dataclass(frozen=True)
class VendorProfile:
    """How one vendor's app samples a device's true position."""

    name: str
    period_range_s: tuple[int, int] = (1800, 3600)
    dropout_prob: float = 0.40  # chance a daytime hour yields no sightings
    night_dropout_prob: float = 0.82  # idle phones report less at night
    active_hours: tuple[int, ...] | None = None  # None = all 24
    jitter_std_m: float = 15.0
    jitter_max_m: float = 45.0
    accuracy_range_m: tuple[float, float] = (3.0, 30.0)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "period_range_s": list(self.period_range_s),
            "dropout_prob": self.dropout_prob,
            "night_dropout_prob": self.night_dropout_prob,
            "active_hours": list(self.active_hours) if self.active_hours is not None else None,
            "jitter_std_m": self.jitter_std_m,
            "jitter_max_m": self.jitter_max_m,
            "accuracy_range_m": list(self.accuracy_range_m),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VendorProfile":
        return cls(
            name=d["name"],
            period_range_s=tuple(d.get("period_range_s", (1800, 3600))),
            dropout_prob=d.get("dropout_prob", 0.40),
            night_dropout_prob=d.get("night_dropout_prob", 0.82),
            active_hours=tuple(d["active_hours"]) if d.get("active_hours") is not None else None,
            jitter_std_m=d.get("jitter_std_m", 15.0),
            jitter_max_m=d.get("jitter_max_m", 45.0),
            accuracy_range_m=tuple(d.get("accuracy_range_m", (3.0, 30.0))),
        )


def default_vendors() -> list[VendorProfile]:
    return [
        VendorProfile("alpha", (1400, 3600), 0.32, 0.67, None, 10.0, 45.0, (3.0, 15.0)),
        VendorProfile("bravo", (1500, 3600), 0.40, 0.70, None, 15.0, 45.0, (5.0, 25.0)),
        VendorProfile("carol", (1800, 3600), 0.45, 0.73, None, 22.0, 45.0, (8.0, 40.0)),
    ]


@dataclass(frozen=True)
class SynthConfig:
    users: int = 1000
    duplicate_fraction: float = 0.06  # chance a user carries >= 2 devices
    triple_fraction: float = 0.10  # multi-device users with a third device
    co_resident_fraction: float = 0.03  # users paired into same-home couples
    co_worker_fraction: float = 0.02  # same-home-and-work couples
    month: str = "2020-01"
    nighttime_home_fraction: float = 0.8
    utc_offset: int = -18000
    seed: int = 20200101
    city_lat: float = 39.29
    city_lon: float = -76.61
    city_radius_km: float = 12.0
    vendors: tuple[VendorProfile, ...] = field(default_factory=lambda: tuple(default_vendors()))

    def validate(self) -> "SynthConfig":
        if self.users <= 0:
            raise ConfigError(f"users must be positive: {self.users}")
        for name in ("duplicate_fraction", "triple_fraction", "co_resident_fraction",
                     "co_worker_fraction", "nighttime_home_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1]: {v}")
        try:
            parse_month(self.month)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if not self.vendors:
            raise ConfigError("at least one vendor profile required")
        if self.city_radius_km <= 0:
            raise ConfigError(f"city_radius_km must be positive: {self.city_radius_km}")
        for v in self.vendors:
            if v.period_range_s[0] <= 0 or v.period_range_s[0] > v.period_range_s[1]:
                raise ConfigError(f"vendor {v.name}: bad period range {v.period_range_s}")
            if not (0.0 <= v.dropout_prob <= 1.0 and 0.0 <= v.night_dropout_prob <= 1.0):
                raise ConfigError(f"vendor {v.name}: dropout out of [0, 1]")
        return self

    def to_dict(self) -> dict:
        d = {
            "users": self.users,
            "duplicate_fraction": self.duplicate_fraction,
            "triple_fraction": self.triple_fraction,
            "co_resident_fraction": self.co_resident_fraction,
            "co_worker_fraction": self.co_worker_fraction,
            "month": self.month,
            "nighttime_home_fraction": self.nighttime_home_fraction,
            "utc_offset": self.utc_offset,
            "seed": self.seed,
            "city_lat": self.city_lat,
            "city_lon": self.city_lon,
            "city_radius_km": self.city_radius_km,
            "vendors": [v.to_dict() for v in self.vendors],
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        kwargs = {k: v for k, v in d.items() if k != "vendors"}
        if "vendors" in d:
            kwargs["vendors"] = tuple(VendorProfile.from_dict(v) for v in d["vendors"])
        return cls(**kwargs)


@dataclass
class SynthUser:
    user_id: str
    home7: str
    work7: str
    weekend7: str
    social7: str
    errand7: str
    tail_cells: tuple[str, ...]
    home_nights: frozenset[int]  # day numbers whose night is spent at home
    devices: tuple[tuple[str, int], ...]  # (device_id, vendor index)


@dataclass
class GroundTruth:
    """Oracle mapping for scoring: who owns which device, and where they live."""

    device_user: dict[str, str]
    user_home: dict[str, str]
    negative_pairs: list[tuple[str, str, str]]  # (device_a, device_b, relation)

    def true_pairs(self) -> set[tuple[str, str]]:
        """All same-user device pairs, as sorted id tuples."""
        by_user: dict[str, list[str]] = {}
        for dev, user in self.device_user.items():
            by_user.setdefault(user, []).append(dev)
        pairs = set()
        for devs in by_user.values():
            devs.sort()
            for i in range(len(devs)):
                for j in range(i + 1, len(devs)):
                    pairs.add((devs[i], devs[j]))
        return pairs

    def planted_duplicate_rate(self) -> float:
        """Share of devices whose user carries more than one device."""
        counts: dict[str, int] = {}
        for user in self.device_user.values():
            counts[user] = counts.get(user, 0) + 1
        total = len(self.device_user)
        dup = sum(c for c in counts.values() if c >= 2)
        return dup / total if total else 0.0


@dataclass
class SynthPlan:
    config: SynthConfig
    users: list[SynthUser]
    truth: GroundTruth


def _rng(seed: int, *scope: object) -> random.Random:
    return random.Random(":".join([str(seed), *map(str, scope)]))


def _sample_cell(rng: random.Random, cfg: SynthConfig, taken: set[str]) -> str:
    """Level-7 cell of a random point within the city disc, unused so far."""
    radius_deg = cfg.city_radius_km * 1000.0 / _M_PER_DEG
    while True:
        r = radius_deg * math.sqrt(rng.random())
        theta = rng.random() * 2.0 * math.pi
        lat = cfg.city_lat + r * math.sin(theta)
        lon = cfg.city_lon + r * math.cos(theta) / math.cos(math.radians(cfg.city_lat))
        cell = encode(lat, lon, 7)
        if cell not in taken:
            taken.add(cell)
            return cell


def _device_id(rng: random.Random, used: set[str]) -> str:
    while True:
        token = "".join(rng.choice(_ID_CHARS) for _ in range(10))
        if token not in used:
            used.add(token)
            return token


def plan(cfg: SynthConfig) -> SynthPlan:
    """Lay out users, devices and ground truth without generating rows.

    Planning draws come from per-user substreams separate from the row
    streams, so the plan is cheap to recompute and row generation for any
    one device is independent of all others.
    """
    cfg.validate()
    year, month = parse_month(cfg.month)
    first_day, last_day = month_day_range(year, month)

    n_co_res_pairs = int(round(cfg.co_resident_fraction * cfg.users / 2))
    n_co_work_pairs = int(round(cfg.co_worker_fraction * cfg.users / 2))

    users: list[SynthUser] = []
    device_user: dict[str, str] = {}
    user_home: dict[str, str] = {}
    used_ids: set[str] = set()
    n_vendors = len(cfg.vendors)

    for idx in range(cfg.users):
        rng = _rng(cfg.seed, "user", idx)
        user_id = f"u{idx:06d}"

        # co-resident couples occupy the first user slots pairwise; the
        # second member reuses the partner's home (and work for co-workers)
        partner: SynthUser | None = None
        relation = None
        if idx < 2 * n_co_res_pairs:
            relation = "co_resident"
            if idx % 2 == 1:
                partner = users[idx - 1]
        elif idx < 2 * (n_co_res_pairs + n_co_work_pairs):
            relation = "co_worker"
            if (idx - 2 * n_co_res_pairs) % 2 == 1:
                partner = users[idx - 1]

        taken: set[str] = set()
        if partner is not None:
            home = partner.home7
            taken.add(home)
            if relation == "co_worker":
                work = partner.work7
                taken.add(work)
            else:
                work = _sample_cell(rng, cfg, taken)
        else:
            home = _sample_cell(rng, cfg, taken)
            work = _sample_cell(rng, cfg, taken)
        weekend = _sample_cell(rng, cfg, taken)
        social = _sample_cell(rng, cfg, taken)
        errand = _sample_cell(rng, cfg, taken)
        tails = tuple(_sample_cell(rng, cfg, taken) for _ in range(4))

        home_nights = frozenset(
            d for d in range(first_day - 1, last_day + 1)
            if rng.random() < cfg.nighttime_home_fraction
        )

        n_devices = 1
        if rng.random() < cfg.duplicate_fraction:
            n_devices = 3 if rng.random() < cfg.triple_fraction else 2
        vendor_order = list(range(n_vendors))
        rng.shuffle(vendor_order)
        devices = []
        for k in range(n_devices):
            dev = _device_id(rng, used_ids)
            vendor = vendor_order[k % n_vendors]
            devices.append((dev, vendor))
            device_user[dev] = user_id
        user_home[user_id] = home

        users.append(
            SynthUser(
                user_id=user_id,
                home7=home,
                work7=work,
                weekend7=weekend,
                social7=social,
                errand7=errand,
                tail_cells=tails,
                home_nights=home_nights,
                devices=tuple(devices),
            )
        )

    negative_pairs = []
    for i in range(n_co_res_pairs + n_co_work_pairs):
        a, b = users[2 * i], users[2 * i + 1]
        relation = "co_resident" if i < n_co_res_pairs else "co_worker"
        for dev_a, _ in a.devices:
            for dev_b, _ in b.devices:
                pair = tuple(sorted((dev_a, dev_b)))
                negative_pairs.append((pair[0], pair[1], relation))

    truth = GroundTruth(device_user, user_home, negative_pairs)
    return SynthPlan(cfg, users, truth)


# Weekly anchor timetable. Monthly scheduled-hour totals form a ladder
# (work ~184, home nights ~190-225, weekend ~60, social ~34, errand ~14,
# tails ~2 each) separated widely enough that per-vendor sampling noise
# almost never reorders a device's top visited cells.
_TAIL_DAY_OFFSETS = (7, 12, 17, 22)  # 8th, 13th, 18th, 23rd of the month


def user_slots(user: SynthUser, cfg: SynthConfig) -> list[tuple[int, int, str, bool]]:
    """The user's true whereabouts as (day, hour, cell, is_night) slots.

    Away nights (and the following morning) produce no slots at all: the
    routine treats them as out-of-coverage travel.
    """
    year, month = parse_month(cfg.month)
    first_day, last_day = month_day_range(year, month)
    slots = []
    for day in range(first_day, last_day + 1):
        wd = (day + 3) % 7  # 0 = Monday
        prev_home = (day - 1) in user.home_nights
        # night tail spilling over from yesterday, then the morning
        if prev_home:
            for hour in range(0, 6):
                slots.append((day, hour, user.home7, True))
            slots.append((day, 7, user.home7, False))
        if wd < 5:
            for hour in range(9, 17):
                slots.append((day, hour, user.work7, False))
        else:
            for hour in range(10, 17):
                slots.append((day, hour, user.weekend7, False))
        if wd in (1, 3, 5, 6):  # Tue/Thu/Sat/Sun evenings
            slots.append((day, 17, user.social7, False))
            slots.append((day, 18, user.social7, False))
        if wd in (0, 2, 4):  # Mon/Wed/Fri
            slots.append((day, 18, user.errand7, False))
        offset = day - first_day
        if offset in _TAIL_DAY_OFFSETS:
            cell = user.tail_cells[_TAIL_DAY_OFFSETS.index(offset)]
            slots.append((day, 19, cell, False))
            slots.append((day, 20, cell, False))
        if day in user.home_nights:
            for hour in range(21, 24):
                slots.append((day, hour, user.home7, True))
    return slots


def _row_seed(seed: int, device_id: str) -> int:
    digest = hashlib.sha256(f"{seed}:rows:{device_id}".encode()).hexdigest()
    return int(digest[:8], 16)


def device_records(
    user: SynthUser,
    device_id: str,
    vendor: VendorProfile,
    cfg: SynthConfig,
    slots: list[tuple[int, int, str, bool]] | None = None,
) -> list[SightingRecord]:
    """Sample one device's sightings from the user's true slots.

    Draws come from a per-device RandomState stream (frozen across numpy
    releases), vectorized over the month for speed.
    """
    rs = np.random.RandomState(_row_seed(cfg.seed, device_id))
    if slots is None:
        slots = user_slots(user, cfg)
    if vendor.active_hours is not None:
        active = set(vendor.active_hours)
        slots = [s for s in slots if s[1] in active]
    if not slots:
        return []
    n = len(slots)

    cell_index: dict[str, int] = {}
    slot_cell = np.empty(n, dtype=np.int32)
    slot_base = np.empty(n, dtype=np.int64)
    slot_night = np.empty(n, dtype=bool)
    for i, (day, hour, cell, is_night) in enumerate(slots):
        idx = cell_index.setdefault(cell, len(cell_index))
        slot_cell[i] = idx
        slot_base[i] = day * SECONDS_PER_DAY + hour * 3600
        slot_night[i] = is_night
    cells = list(cell_index)
    centers = np.array([center(c) for c in cells])
    clat, clon = centers[:, 0], centers[:, 1]
    lon_scale = _M_PER_DEG * np.cos(np.radians(clat))

    dropout = np.where(slot_night, vendor.night_dropout_prob, vendor.dropout_prob)
    keep = rs.random_sample(n) >= dropout
    p_lo, p_hi = vendor.period_range_s
    periods = rs.randint(p_lo, p_hi + 1, size=n)
    counts = np.where(keep, np.maximum(3600 // periods, 1), 0)
    total = int(counts.sum())
    if total == 0:
        return []

    row_slot = np.repeat(np.arange(n), counts)
    seconds = rs.randint(0, 3600, size=total)
    order = np.lexsort((seconds, row_slot))  # slots are already chronological
    row_slot = row_slot[order]
    seconds = seconds[order]

    std, cap = vendor.jitter_std_m, vendor.jitter_max_m
    dy = np.clip(rs.standard_normal(total) * std, -cap, cap)
    dx = np.clip(rs.standard_normal(total) * std, -cap, cap)
    acc_lo, acc_hi = vendor.accuracy_range_m
    acc = np.round(rs.uniform(acc_lo, acc_hi, size=total), 1)

    cell_of_row = slot_cell[row_slot]
    lat = np.round(clat[cell_of_row] + dy / _M_PER_DEG, 6)
    lon = np.round(clon[cell_of_row] + dx / lon_scale[cell_of_row], 6)
    ts = slot_base[row_slot] + seconds - cfg.utc_offset

    offset = cfg.utc_offset
    return [
        SightingRecord(device_id, t, la, lo, a, offset)
        for t, la, lo, a in zip(ts.tolist(), lat.tolist(), lon.tolist(), acc.tolist())
    ]


def iter_device_blocks(
    synth_plan: SynthPlan,
) -> Iterator[tuple[int, str, list[SightingRecord]]]:
    """Yield (vendor_index, device_id, rows) user by user, deterministically."""
    cfg = synth_plan.config
    for user in synth_plan.users:
        slots = user_slots(user, cfg)
        for device_id, vendor_idx in user.devices:
            yield vendor_idx, device_id, device_records(
                user, device_id, cfg.vendors[vendor_idx], cfg, slots
            )


def iter_vendor_records(
    synth_plan: SynthPlan,
) -> Iterator[tuple[int, SightingRecord]]:
    """Yield (vendor_index, record) user by user, in deterministic order."""
    for vendor_idx, _device_id, rows in iter_device_blocks(synth_plan):
        for rec in rows:
            yield vendor_idx, rec


@dataclass(frozen=True)
class DedupScore:
    precision: float
    precision_defined: bool
    recall: float  # over true pairs both of whose devices survived the filters
    recall_unrestricted: float  # over all true pairs in the ground truth
    f1: float
    flagged_pairs: int
    true_pairs: int
    true_pairs_eligible: int


def score(
    dedup_map: Mapping[str, str],
    truth: GroundTruth,
    eligible: set[str] | None = None,
) -> DedupScore:
    """Pairwise precision/recall of a dedup map against the ground truth.

    ``eligible`` is the set of devices that survived the quality and
    top-N filters; restricted recall is normalized to true pairs fully
    inside it (the pipeline never had a chance to flag the rest).
    """
    unknown = [d for d in dedup_map if d not in truth.device_user]
    if unknown:
        raise ValueError(f"dedup map contains unknown device ids: {unknown[:5]!r}")
    by_canon: dict[str, list[str]] = {}
    for dev, canon in dedup_map.items():
        by_canon.setdefault(canon, []).append(dev)
    flagged: set[tuple[str, str]] = set()
    for devs in by_canon.values():
        if len(devs) < 2:
            continue
        devs.sort()
        for i in range(len(devs)):
            for j in range(i + 1, len(devs)):
                flagged.add((devs[i], devs[j]))

    true_all = truth.true_pairs()
    if eligible is None:
        eligible_pairs = true_all
    else:
        eligible_pairs = {p for p in true_all if p[0] in eligible and p[1] in eligible}

    tp = len(flagged & true_all)
    precision_defined = bool(flagged)
    precision = tp / len(flagged) if flagged else 1.0
    recall = (
        len(flagged & eligible_pairs) / len(eligible_pairs) if eligible_pairs else 1.0
    )
    recall_un = tp / len(true_all) if true_all else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return DedupScore(
        precision=precision,
        precision_defined=precision_defined,
        recall=recall,
        recall_unrestricted=recall_un,
        f1=f1,
        flagged_pairs=len(flagged),
        true_pairs=len(true_all),
        true_pairs_eligible=len(eligible_pairs),
    )
