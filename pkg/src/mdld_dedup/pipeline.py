"""File-based stage orchestration.

Every stage reads the previous stage's delimiter-separated artifacts,
writes its own plus a summary into the shared run manifest, and is
individually re-runnable. Worker counts only change wall time: parallel
work is re-assembled in canonical (sorted) order before anything is
written.
"""

from __future__ import annotations

import csv
import hashlib
import heapq
import json
import os
import pickle
import tempfile
from dataclasses import dataclass, field, replace
from multiprocessing import Pool
from typing import Iterable, Iterator

from . import colocation, dedup, geohash, home, profiles, synth
from .errors import ConfigError, MissingArtifactError
from .ingest import (
    CANONICAL_COLUMNS,
    LocalSighting,
    RowError,
    SchemaConfig,
    SightingRecord,
    open_text,
    parse_sightings,
)
from .timeops import NightWindow, day_to_iso, iso_to_day, month_day_range, parse_month

ENCODE_BATCH = 65536
SORT_CHUNK_ROWS = 400_000


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class RunConfig:
    month: str = "2020-01"
    inputs: tuple[str, ...] = ()
    output_dir: str = "out"
    n: int = 5
    n_sweep: tuple[int, int] = (1, 8)
    min_sightings: int = 10
    night_start_hour: int = 21
    night_end_hour: int = 6
    validation_days: int = 10
    validation_sample: int = 100_000
    seed: int = 20200101
    workers: int = 1
    delimiter: str = ","
    column_map: dict[str, str] = field(default_factory=dict)
    max_accuracy: float | None = None
    synth: synth.SynthConfig | None = None

    def validate(self) -> "RunConfig":
        if self.n < 1:
            raise ConfigError(f"n must be >= 1: {self.n}")
        lo, hi = self.n_sweep
        if not (1 <= lo <= hi):
            raise ConfigError(f"bad n_sweep range: {self.n_sweep}")
        if not lo <= self.n <= hi:
            raise ConfigError(f"n_sweep {self.n_sweep} must contain n={self.n}")
        if self.min_sightings < 0:
            raise ConfigError(f"min_sightings must be >= 0: {self.min_sightings}")
        if self.validation_days < 1:
            raise ConfigError(f"validation_days must be >= 1: {self.validation_days}")
        if self.validation_sample < 0:
            raise ConfigError(f"validation_sample must be >= 0: {self.validation_sample}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1: {self.workers}")
        try:
            parse_month(self.month)
            NightWindow(self.night_start_hour, self.night_end_hour)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if self.max_accuracy is not None and self.max_accuracy <= 0:
            raise ConfigError(f"max_accuracy must be positive: {self.max_accuracy}")
        if self.synth is not None:
            self.synth.validate()
        return self

    def night_window(self) -> NightWindow:
        return NightWindow(self.night_start_hour, self.night_end_hour)

    def sweep(self) -> range:
        return range(self.n_sweep[0], self.n_sweep[1] + 1)

    def to_dict(self) -> dict:
        d = {
            "month": self.month,
            "inputs": list(self.inputs),
            "output_dir": self.output_dir,
            "n": self.n,
            "n_sweep": list(self.n_sweep),
            "min_sightings": self.min_sightings,
            "night_start_hour": self.night_start_hour,
            "night_end_hour": self.night_end_hour,
            "validation_days": self.validation_days,
            "validation_sample": self.validation_sample,
            "seed": self.seed,
            "workers": self.workers,
            "delimiter": self.delimiter,
            "column_map": dict(self.column_map),
            "max_accuracy": self.max_accuracy,
        }
        if self.synth is not None:
            d["synth"] = self.synth.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        kwargs = dict(d)
        if "inputs" in kwargs:
            kwargs["inputs"] = tuple(kwargs["inputs"])
        if "n_sweep" in kwargs:
            kwargs["n_sweep"] = tuple(kwargs["n_sweep"])
        if "synth" in kwargs and kwargs["synth"] is not None:
            sd = dict(kwargs["synth"])
            # the one config seed drives synthesis too, unless pinned
            sd.setdefault("seed", d.get("seed", cls.seed))
            sd.setdefault("month", d.get("month", cls.month))
            try:
                kwargs["synth"] = synth.SynthConfig.from_dict(sd)
            except TypeError as e:
                raise ConfigError(f"bad synth config: {e}") from None
        return cls(**kwargs).validate()

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}") from None
        return cls.from_dict(data)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# artifact layout and manifest


class Artifacts:
    def __init__(self, out_dir: str):
        self.root = out_dir
        self.manifest = os.path.join(out_dir, "manifest.json")
        self.synth_dir = os.path.join(out_dir, "synth")
        self.truth_devices = os.path.join(self.synth_dir, "truth_devices.csv")
        self.truth_negatives = os.path.join(self.synth_dir, "truth_negative_pairs.csv")
        self.clean = os.path.join(out_dir, "ingest", "clean_sightings.csv")
        self.localized = os.path.join(out_dir, "ingest", "localized.csv")
        self.row_errors = os.path.join(out_dir, "ingest", "row_errors.csv")
        self.homes = os.path.join(out_dir, "home", "homes.csv")
        self.visits = os.path.join(out_dir, "profile", "visits.csv")
        self.dedup_map = os.path.join(out_dir, "dedup", "dedup_map.csv")
        self.stats = os.path.join(out_dir, "dedup", "anonymity_stats.csv")
        self.merged = os.path.join(out_dir, "dedup", "merged_sightings.csv")
        self.validation = os.path.join(out_dir, "validate", "validation_report.csv")
        self.pair_details = os.path.join(out_dir, "validate", "pair_details.csv")
        self.report = os.path.join(out_dir, "report", "report.txt")
        self.score = os.path.join(out_dir, "report", "score.json")

    def vendor_file(self, name: str) -> str:
        return os.path.join(self.synth_dir, f"vendor_{name}.csv")

    def require(self, path: str, produced_by: str) -> str:
        if not os.path.exists(path):
            raise MissingArtifactError(
                f"missing artifact {path}; run the '{produced_by}' stage first"
            )
        return path


def _load_manifest(arts: Artifacts) -> dict:
    if os.path.exists(arts.manifest):
        with open(arts.manifest, "r", encoding="utf-8") as f:
            return json.load(f)
    return {"stages": {}}


def _save_manifest(arts: Artifacts, manifest: dict) -> None:
    tmp = arts.manifest + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp, arts.manifest)


def _record_stage(cfg: RunConfig, arts: Artifacts, stage: str, summary: dict) -> None:
    manifest = _load_manifest(arts)
    manifest["config"] = cfg.to_dict()
    manifest["config_sha256"] = cfg.config_hash()
    manifest["stages"][stage] = summary
    _save_manifest(arts, manifest)


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _ensure_dir(path: str) -> None:
    os.makedirs(os.path.dirname(path), exist_ok=True)


# ---------------------------------------------------------------------------
# external sort (the shuffle between parse and per-device stages)


class ExternalSorter:
    """Sort arbitrarily many tuples with bounded memory via pickled spills."""

    def __init__(self, tmpdir: str, chunk_rows: int = SORT_CHUNK_ROWS):
        self._tmpdir = tmpdir
        self._chunk_rows = chunk_rows
        self._buffer: list = []
        self._spills: list[str] = []

    def add(self, row) -> None:
        self._buffer.append(row)
        if len(self._buffer) >= self._chunk_rows:
            self.spill()

    def extend(self, rows: Iterable) -> None:
        for row in rows:
            self.add(row)

    def spill(self) -> None:
        if not self._buffer:
            return
        self._buffer.sort()
        fd, path = tempfile.mkstemp(dir=self._tmpdir, suffix=".spill")
        with os.fdopen(fd, "wb") as f:
            for i in range(0, len(self._buffer), 10_000):
                pickle.dump(self._buffer[i : i + 10_000], f, pickle.HIGHEST_PROTOCOL)
        self._spills.append(path)
        self._buffer = []

    def take_spills(self) -> list[str]:
        """Spill everything and hand over the files (for cross-process use)."""
        self.spill()
        out, self._spills = self._spills, []
        return out

    @staticmethod
    def _iter_spill(path: str) -> Iterator:
        with open(path, "rb") as f:
            while True:
                try:
                    batch = pickle.load(f)
                except EOFError:
                    return
                yield from batch

    def merged(self, extra_spills: Iterable[str] = ()) -> Iterator:
        spills = list(self._spills) + list(extra_spills)
        self._buffer.sort()
        streams = [self._iter_spill(p) for p in spills]
        if self._buffer:
            streams.append(iter(self._buffer))
        if len(streams) == 1:
            yield from streams[0]
        else:
            yield from heapq.merge(*streams)

    def cleanup(self) -> None:
        for p in self._spills:
            try:
                os.unlink(p)
            except OSError:
                pass
        self._spills = []
        self._buffer = []


# ---------------------------------------------------------------------------
# synth stage


def stage_synth(cfg: RunConfig, arts: Artifacts) -> dict:
    if cfg.synth is None:
        raise ConfigError("no synth section in the configuration")
    scfg = cfg.synth
    plan = synth.plan(scfg)
    os.makedirs(arts.synth_dir, exist_ok=True)

    writers = {}
    files = []
    try:
        for i, vendor in enumerate(scfg.vendors):
            f = open(arts.vendor_file(vendor.name), "w", encoding="utf-8", newline="")
            files.append(f)
            w = csv.writer(f)
            w.writerow(CANONICAL_COLUMNS)
            writers[i] = w
        rows = 0
        for vendor_idx, _device_id, block in synth.iter_device_blocks(plan):
            writers[vendor_idx].writerows(block)
            rows += len(block)
    finally:
        for f in files:
            f.close()

    with open(arts.truth_devices, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["device_id", "user_id", "home_cell7"])
        for dev in sorted(plan.truth.device_user):
            user = plan.truth.device_user[dev]
            w.writerow([dev, user, plan.truth.user_home[user]])
    with open(arts.truth_negatives, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["device_a", "device_b", "relation"])
        for a, b, rel in sorted(plan.truth.negative_pairs):
            w.writerow([a, b, rel])

    multi_users = sum(1 for u in plan.users if len(u.devices) >= 2)
    summary = {
        "users": len(plan.users),
        "devices": len(plan.truth.device_user),
        "rows": rows,
        "multi_device_users": multi_users,
        "planted_duplicate_rate": plan.truth.planted_duplicate_rate(),
        "negative_pairs": len(plan.truth.negative_pairs),
        "vendor_files": [arts.vendor_file(v.name) for v in scfg.vendors],
    }
    _record_stage(cfg, arts, "synth", summary)
    return summary


def load_truth(arts: Artifacts) -> synth.GroundTruth:
    arts.require(arts.truth_devices, "synth")
    device_user: dict[str, str] = {}
    user_home: dict[str, str] = {}
    with open_text(arts.truth_devices) as f:
        reader = csv.reader(f)
        next(reader)
        for dev, user, home_cell in reader:
            device_user[dev] = user
            user_home[user] = home_cell
    negatives = []
    if os.path.exists(arts.truth_negatives):
        with open_text(arts.truth_negatives) as f:
            reader = csv.reader(f)
            next(reader)
            negatives = [(a, b, rel) for a, b, rel in reader]
    return synth.GroundTruth(device_user, user_home, negatives)


# ---------------------------------------------------------------------------
# ingest stage


def _ingest_one_file(args) -> dict:
    """Parse, validate and localize one input file into sorted spill files."""
    path, cfg_dict, tmpdir = args
    cfg = RunConfig.from_dict(cfg_dict)
    schema = SchemaConfig(delimiter=cfg.delimiter, column_map=dict(cfg.column_map))
    year, month = parse_month(cfg.month)
    first_day, last_day = month_day_range(year, month)

    errors: list[RowError] = []
    sorter = ExternalSorter(tmpdir)
    counts = {"rows_in": 0, "out_of_month": 0, "too_inaccurate": 0}

    batch: list[SightingRecord] = []

    def flush() -> None:
        if not batch:
            return
        import numpy as np

        lats = np.fromiter((r.lat for r in batch), dtype=np.float64, count=len(batch))
        lons = np.fromiter((r.lon for r in batch), dtype=np.float64, count=len(batch))
        cells = geohash.encode_many(lats, lons, 7)
        for rec, cell in zip(batch, cells):
            local = rec.utc_timestamp + rec.utc_offset
            day, rem = divmod(local, 86400)
            if day < first_day or day > last_day:
                counts["out_of_month"] += 1
                errors.append(RowError(path, -1, "outside_study_month"))
                continue
            sorter.add(
                (
                    rec.device_id,
                    rec.utc_timestamp,
                    rec.lat,
                    rec.lon,
                    rec.accuracy,
                    rec.utc_offset,
                    day,
                    rem // 3600,
                    cell,
                )
            )
        batch.clear()

    with open_text(path) as f:
        for rec in parse_sightings(f, schema, source=path, errors=errors):
            counts["rows_in"] += 1
            if cfg.max_accuracy is not None and rec.accuracy > cfg.max_accuracy:
                counts["too_inaccurate"] += 1
                errors.append(RowError(path, -1, "too_inaccurate"))
                continue
            batch.append(rec)
            if len(batch) >= ENCODE_BATCH:
                flush()
    flush()
    counts["rows_in"] += len(errors) - counts["out_of_month"] - counts["too_inaccurate"]

    reasons: dict[str, int] = {}
    for e in errors:
        reasons[e.reason] = reasons.get(e.reason, 0) + 1
    return {
        "path": path,
        "spills": sorter.take_spills(),
        "errors": errors,
        "reasons": reasons,
        "rows_in": counts["rows_in"],
        "sha256": _sha256(path),
    }


def stage_ingest(cfg: RunConfig, arts: Artifacts) -> dict:
    inputs = list(cfg.inputs)
    if not inputs and cfg.synth is not None:
        inputs = [arts.vendor_file(v.name) for v in cfg.synth.vendors]
    if not inputs:
        raise ConfigError("no input files configured")
    for p in inputs:
        if not os.path.exists(p):
            raise MissingArtifactError(f"input file not found: {p}")

    _ensure_dir(arts.clean)
    tmpdir = tempfile.mkdtemp(dir=arts.root, prefix="ingest_sort_")
    tasks = [(p, cfg.to_dict(), tmpdir) for p in inputs]
    if cfg.workers > 1 and len(tasks) > 1:
        with Pool(min(cfg.workers, len(tasks))) as pool:
            results = pool.map(_ingest_one_file, tasks)
    else:
        results = [_ingest_one_file(t) for t in tasks]

    all_spills: list[str] = []
    reasons: dict[str, int] = {}
    rows_in = 0
    input_meta = []
    with open(arts.row_errors, "w", encoding="utf-8", newline="") as ef:
        ew = csv.writer(ef)
        ew.writerow(["source", "line", "reason"])
        for res in results:
            all_spills.extend(res["spills"])
            rows_in += res["rows_in"]
            for r, c in res["reasons"].items():
                reasons[r] = reasons.get(r, 0) + c
            for e in res["errors"]:
                ew.writerow(e)
            input_meta.append({"path": res["path"], "sha256": res["sha256"]})

    sorter = ExternalSorter(tmpdir)
    rows_kept = 0
    duplicates = 0
    devices = set()
    prev_key = None
    with open(arts.clean, "w", encoding="utf-8", newline="") as cf, open(
        arts.localized, "w", encoding="utf-8", newline=""
    ) as lf:
        cw = csv.writer(cf)
        lw = csv.writer(lf)
        cw.writerow(CANONICAL_COLUMNS)
        lw.writerow(["device_id", "utc_timestamp", "local_date", "local_hour", "cell7"])
        iso_cache: dict[int, str] = {}
        for row in sorter.merged(extra_spills=all_spills):
            device_id, ts, lat, lon, acc, off, day, hour, cell = row
            key = (device_id, ts, lat, lon)
            if key == prev_key:
                duplicates += 1
                continue
            prev_key = key
            rows_kept += 1
            devices.add(device_id)
            cw.writerow((device_id, ts, lat, lon, acc, off))
            iso = iso_cache.get(day)
            if iso is None:
                iso = day_to_iso(day)
                iso_cache[day] = iso
            lw.writerow((device_id, ts, iso, hour, cell))
    for p in all_spills:
        try:
            os.unlink(p)
        except OSError:
            pass
    try:
        os.rmdir(tmpdir)
    except OSError:
        pass

    rows_rejected = sum(reasons.values())
    summary = {
        "inputs": input_meta,
        "rows_in": rows_in,
        "rows_kept": rows_kept,
        "rows_rejected": reasons,
        "rows_rejected_total": rows_rejected,
        "duplicate_rows_collapsed": duplicates,
        "devices_out": len(devices),
    }
    _record_stage(cfg, arts, "ingest", summary)
    return summary


def iter_localized(path: str) -> Iterator[tuple[str, list[LocalSighting]]]:
    """Stream (device_id, sightings) groups from a device-sorted localized file."""
    with open_text(path) as f:
        reader = csv.reader(f)
        next(reader)
        current: str | None = None
        day_cache: dict[str, int] = {}
        group: list[LocalSighting] = []
        for device_id, ts, iso, hour, cell in reader:
            if device_id != current:
                if current is not None:
                    yield current, group
                current = device_id
                group = []
            day = day_cache.get(iso)
            if day is None:
                day = iso_to_day(iso)
                day_cache[iso] = day
            group.append(LocalSighting(device_id, day, int(hour), cell, int(ts)))
        if current is not None:
            yield current, group


# ---------------------------------------------------------------------------
# impute-home and profile stages


def _impute_chunk(args):
    chunk, min_sightings, night_hours = args
    night = NightWindow(*night_hours)
    out = []
    for device_id, rows in chunk:
        sightings = [LocalSighting(device_id, *r) for r in rows]
        if len(sightings) < min_sightings:
            out.append((device_id, "below_min_sightings", None))
            continue
        result = home.impute_home(device_id, sightings, night)
        if result is None:
            out.append((device_id, "no_home_candidate", None))
        else:
            out.append(
                (
                    device_id,
                    None,
                    (
                        result.home.home6,
                        result.home.home7,
                        result.days_observed,
                        result.candidate_count,
                    ),
                )
            )
    return out


def _device_chunks(path: str, chunk_size: int = 256):
    chunk = []
    for device_id, sightings in iter_localized(path):
        chunk.append((device_id, [(s.day, s.hour, s.cell7, s.utc_timestamp) for s in sightings]))
        if len(chunk) >= chunk_size:
            yield chunk
            chunk = []
    if chunk:
        yield chunk


def _pool_map(cfg: RunConfig, fn, tasks):
    if cfg.workers > 1:
        with Pool(cfg.workers) as pool:
            yield from pool.imap(fn, tasks, chunksize=1)
    else:
        for t in tasks:
            yield fn(t)


def stage_impute_home(cfg: RunConfig, arts: Artifacts) -> dict:
    arts.require(arts.localized, "ingest")
    _ensure_dir(arts.homes)
    night_hours = (cfg.night_start_hour, cfg.night_end_hour)
    tasks = (
        (chunk, cfg.min_sightings, night_hours) for chunk in _device_chunks(arts.localized)
    )
    devices_in = 0
    dropped = {"below_min_sightings": 0, "no_home_candidate": 0}
    kept = 0
    with open(arts.homes, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["device_id", "home6", "home7", "days_observed", "candidate_count"])
        for results in _pool_map(cfg, _impute_chunk, tasks):
            for device_id, drop_reason, payload in results:
                devices_in += 1
                if drop_reason is not None:
                    dropped[drop_reason] += 1
                    continue
                kept += 1
                w.writerow((device_id, *payload))
    summary = {
        "devices_in": devices_in,
        "devices_out": kept,
        "dropped": dropped,
    }
    _record_stage(cfg, arts, "impute-home", summary)
    return summary


def _profile_chunk(args):
    chunk, max_n = args
    out = []
    for device_id, rows in chunk:
        sightings = [LocalSighting(device_id, *r) for r in rows]
        stats = profiles.visited_cells(sightings)
        ranked = profiles.rank_visits(stats)
        out.append((device_id, len(ranked), ranked[:max_n]))
    return out


def load_homes(arts: Artifacts) -> dict[str, home.HomeLocation]:
    arts.require(arts.homes, "impute-home")
    out = {}
    with open_text(arts.homes) as f:
        reader = csv.reader(f)
        next(reader)
        for device_id, home6, home7, _days, _cands in reader:
            out[device_id] = home.HomeLocation(device_id, home6, home7)
    return out


def stage_profile(cfg: RunConfig, arts: Artifacts) -> dict:
    arts.require(arts.localized, "ingest")
    homes = load_homes(arts)
    _ensure_dir(arts.visits)
    max_n = cfg.n_sweep[1]

    def tasks():
        for chunk in _device_chunks(arts.localized):
            kept = [(d, rows) for d, rows in chunk if d in homes]
            if kept:
                yield (kept, max_n)

    devices_out = 0
    with open(arts.visits, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["device_id", "rank", "cell7", "unique_hours", "sightings", "visited_cells"])
        for results in _pool_map(cfg, _profile_chunk, tasks()):
            for device_id, visited, ranked in results:
                devices_out += 1
                for rank, vs in enumerate(ranked, start=1):
                    w.writerow((device_id, rank, vs.cell7, vs.unique_hours, vs.sightings, visited))
    summary = {
        "devices_in": len(homes),
        "devices_out": devices_out,
        "dropped": {},
    }
    _record_stage(cfg, arts, "profile", summary)
    return summary


def load_visits(arts: Artifacts) -> dict[str, tuple[int, list[str]]]:
    """device_id -> (total visited cells, ranked cell list up to sweep max)."""
    arts.require(arts.visits, "profile")
    out: dict[str, tuple[int, list[str]]] = {}
    with open_text(arts.visits) as f:
        reader = csv.reader(f)
        next(reader)
        for device_id, rank, cell, _uh, _sg, visited in reader:
            entry = out.get(device_id)
            if entry is None:
                out[device_id] = (int(visited), [cell])
            else:
                entry[1].append(cell)
    return out


def profiles_at(
    visits: dict[str, tuple[int, list[str]]], n: int
) -> dict[str, profiles.VisitProfile]:
    """Top-n profiles for devices with at least n visited cells."""
    out = {}
    for device_id, (visited, ranked) in visits.items():
        if visited >= n and len(ranked) >= n:
            out[device_id] = profiles.VisitProfile(device_id, tuple(ranked[:n]))
    return out


# ---------------------------------------------------------------------------
# dedup stage


def stage_dedup(cfg: RunConfig, arts: Artifacts) -> dict:
    homes = load_homes(arts)
    visits = load_visits(arts)
    _ensure_dir(arts.dedup_map)

    stats_rows = []
    groups_at_n: list[dedup.AnonymityGroup] = []
    for n in cfg.sweep():
        profs = profiles_at(visits, n)
        groups, _excluded = dedup.group_devices(homes, profs)
        st = dedup.anonymity_stats(groups, n)
        if st is None:
            stats_rows.append((n, 0, 0, "", "", "", "", 0, ""))
        else:
            stats_rows.append(
                (
                    n,
                    st.devices,
                    st.groups,
                    st.min_k,
                    f"{st.mean_k:.6f}",
                    st.max_k,
                    f"{st.duplicate_rate:.6f}",
                    st.devices_with_duplicates,
                    f"{st.singleton_share:.6f}",
                )
            )
        if n == cfg.n:
            groups_at_n = groups

    with open(arts.stats, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(
            [
                "n",
                "devices",
                "groups",
                "min_k",
                "mean_k",
                "max_k",
                "duplicate_rate",
                "devices_with_duplicates",
                "singleton_share",
            ]
        )
        w.writerows(stats_rows)

    profs_n = profiles_at(visits, cfg.n)
    mapping = dedup.dedup_map(groups_at_n)
    with open(arts.dedup_map, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["source_device_id", "canonical_device_id"])
        for source in sorted(mapping):
            w.writerow((source, mapping[source]))

    # merged output: canonical ids substituted, devices without a key dropped
    arts.require(arts.clean, "ingest")
    tmpdir = tempfile.mkdtemp(dir=arts.root, prefix="merge_sort_")
    sorter = ExternalSorter(tmpdir)
    merged_rows = 0
    with open_text(arts.clean) as f:
        reader = csv.reader(f)
        next(reader)
        for device_id, ts, lat, lon, acc, off in reader:
            canon = mapping.get(device_id)
            if canon is None:
                continue
            sorter.add((canon, int(ts), float(lat), float(lon), float(acc), int(off)))
    with open(arts.merged, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(CANONICAL_COLUMNS)
        for row in sorter.merged():
            w.writerow(row)
            merged_rows += 1
    sorter.cleanup()
    try:
        os.rmdir(tmpdir)
    except OSError:
        pass

    devices_in = len(visits)
    keyed = len(profs_n)
    dropped_top_n = devices_in - keyed
    groups_k2 = sum(1 for g in groups_at_n if g.k >= 2)
    summary = {
        "n": cfg.n,
        "devices_in": devices_in,
        "devices_out": keyed,
        "dropped": {"fewer_than_n_cells": dropped_top_n},
        "groups": len(groups_at_n),
        "duplicate_groups": groups_k2,
        "duplicate_rate": dedup.duplicate_rate(groups_at_n),
        "merged_devices": len(groups_at_n),
        "merged_rows": merged_rows,
        "sweep": [row[0] for row in stats_rows],
    }
    _record_stage(cfg, arts, "dedup", summary)
    return summary


# ---------------------------------------------------------------------------
# validate stage


def stage_validate(cfg: RunConfig, arts: Artifacts) -> dict:
    homes = load_homes(arts)
    visits = load_visits(arts)
    _ensure_dir(arts.validation)

    year, month = parse_month(cfg.month)
    first_day, _last = month_day_range(year, month)
    window = (first_day, first_day + cfg.validation_days - 1)

    sampled: dict[int, list[tuple[str, str]]] = {}
    eligible: dict[int, int] = {}
    needed: set[str] = set()
    for n in cfg.sweep():
        profs = profiles_at(visits, n)
        groups, _ = dedup.group_devices(homes, profs)
        eligible[n] = colocation.pair_count(groups)
        seed = int(hashlib.sha256(f"{cfg.seed}:validate:{n}".encode()).hexdigest()[:12], 16)
        pairs = colocation.sample_pairs(groups, cfg.validation_sample, seed)
        sampled[n] = pairs
        for a, b in pairs:
            needed.add(a)
            needed.add(b)

    device_hours: dict[str, colocation.HourCells] = {}
    for device_id, sightings in iter_localized(arts.localized):
        if device_id in needed:
            device_hours[device_id] = colocation.hour_cells(sightings, window)

    reports = []
    for n in cfg.sweep():
        reports.append(
            colocation.validate_sample(
                sampled[n], device_hours, n, eligible[n], cfg.validation_sample
            )
        )

    with open(arts.validation, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(
            [
                "n",
                "eligible_pairs",
                "pairs_sampled",
                "pairs_with_common_hours",
                "mean_rate",
                "median_rate",
                "sample_truncated",
            ]
        )
        for r in reports:
            w.writerow(
                (
                    r.n,
                    r.eligible_pairs,
                    r.pairs_sampled,
                    r.pairs_with_common_hours,
                    "" if r.mean_rate is None else f"{r.mean_rate:.6f}",
                    "" if r.median_rate is None else f"{r.median_rate:.6f}",
                    int(r.sample_truncated),
                )
            )

    with open(arts.pair_details, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["device_a", "device_b", "common_hours", "colocated_hours", "rate"])
        for a, b in sampled[cfg.n]:
            pv = colocation.colocation_rate(a, b, device_hours[a], device_hours[b])
            w.writerow(
                (
                    a,
                    b,
                    pv.common_hours,
                    pv.colocated_hours,
                    "" if pv.rate is None else f"{pv.rate:.6f}",
                )
            )

    at_n = next(r for r in reports if r.n == cfg.n)
    summary = {
        "window_days": cfg.validation_days,
        "pairs_sampled": {r.n: r.pairs_sampled for r in reports},
        "mean_rate_at_n": at_n.mean_rate,
        "pairs_with_common_hours_at_n": at_n.pairs_with_common_hours,
    }
    _record_stage(cfg, arts, "validate", summary)
    return summary


# ---------------------------------------------------------------------------
# score and report stages


def stage_score(cfg: RunConfig, arts: Artifacts) -> dict:
    arts.require(arts.dedup_map, "dedup")
    truth = load_truth(arts)
    mapping = {}
    with open_text(arts.dedup_map) as f:
        reader = csv.reader(f)
        next(reader)
        for source, canon in reader:
            mapping[source] = canon
    eligible = set(mapping)
    result = synth.score(mapping, truth, eligible)
    _ensure_dir(arts.score)
    payload = {
        "precision": result.precision,
        "precision_defined": result.precision_defined,
        "recall_restricted": result.recall,
        "recall_unrestricted": result.recall_unrestricted,
        "f1": result.f1,
        "flagged_pairs": result.flagged_pairs,
        "true_pairs": result.true_pairs,
        "true_pairs_eligible": result.true_pairs_eligible,
        "planted_duplicate_rate": truth.planted_duplicate_rate(),
    }
    with open(arts.score, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    _record_stage(cfg, arts, "score", payload)
    return payload


def stage_report(cfg: RunConfig, arts: Artifacts) -> dict:
    arts.require(arts.stats, "dedup")
    _ensure_dir(arts.report)
    lines = []
    lines.append("Deduplication run report")
    lines.append("=" * 60)
    lines.append(f"config sha256: {cfg.config_hash()}")
    lines.append(f"study month:   {cfg.month}")
    lines.append("")
    lines.append("Anonymity group size by number of top-visited cells (N)")
    lines.append(f"{'N':>2}  {'devices':>9} {'groups':>9} {'min':>4} {'mean':>8} {'max':>7} {'dup_rate':>9}")
    with open_text(arts.stats) as f:
        reader = csv.reader(f)
        next(reader)
        for row in reader:
            n, devices, groups, min_k, mean_k, max_k, dup_rate = row[:7]
            mean_txt = f"{float(mean_k):.2f}" if mean_k else "-"
            rate_txt = f"{float(dup_rate):.4f}" if dup_rate else "-"
            lines.append(
                f"{n:>2}  {devices:>9} {groups:>9} {min_k or '-':>4} "
                f"{mean_txt:>8} {max_k or '-':>7} {rate_txt:>9}"
            )
    if os.path.exists(arts.validation):
        lines.append("")
        lines.append("Common-hour co-location of sampled duplicate pairs")
        lines.append(f"{'N':>2}  {'pairs':>7} {'w/common':>9} {'mean':>8} {'median':>8}")
        with open_text(arts.validation) as f:
            reader = csv.reader(f)
            next(reader)
            for n, _elig, pairs, with_common, mean_rate, median_rate, _trunc in reader:
                mean_txt = f"{float(mean_rate):.4f}" if mean_rate else "-"
                med_txt = f"{float(median_rate):.4f}" if median_rate else "-"
                lines.append(f"{n:>2}  {pairs:>7} {with_common:>9} {mean_txt:>8} {med_txt:>8}")
    manifest = _load_manifest(arts)
    lines.append("")
    lines.append("Population accounting")
    for stage in ("ingest", "impute-home", "profile", "dedup"):
        s = manifest.get("stages", {}).get(stage)
        if not s:
            continue
        if stage == "ingest":
            lines.append(
                f"  ingest: rows_in={s['rows_in']} kept={s['rows_kept']} "
                f"rejected={s['rows_rejected_total']} collapsed={s['duplicate_rows_collapsed']} "
                f"devices_out={s['devices_out']}"
            )
        else:
            drops = ", ".join(f"{k}={v}" for k, v in sorted(s.get("dropped", {}).items())) or "none"
            lines.append(
                f"  {stage}: devices_in={s['devices_in']} devices_out={s['devices_out']} "
                f"dropped: {drops}"
            )
    if os.path.exists(arts.score):
        with open(arts.score, "r", encoding="utf-8") as f:
            sc = json.load(f)
        lines.append("")
        lines.append("Ground-truth scoring")
        lines.append(
            f"  precision={sc['precision']:.4f} recall={sc['recall_restricted']:.4f} "
            f"(unrestricted {sc['recall_unrestricted']:.4f}) f1={sc['f1']:.4f}"
        )
        lines.append(
            f"  planted duplicate rate={sc['planted_duplicate_rate']:.4f}"
        )
    text = "\n".join(lines) + "\n"
    with open(arts.report, "w", encoding="utf-8") as f:
        f.write(text)
    summary = {"report": arts.report}
    _record_stage(cfg, arts, "report", summary)
    return summary


# ---------------------------------------------------------------------------
# full run

STAGES = {
    "synth": stage_synth,
    "ingest": stage_ingest,
    "impute-home": stage_impute_home,
    "profile": stage_profile,
    "dedup": stage_dedup,
    "validate": stage_validate,
    "score": stage_score,
    "report": stage_report,
}


def run_stage(name: str, cfg: RunConfig) -> dict:
    if name not in STAGES:
        raise ConfigError(f"unknown stage {name!r}; choose from {sorted(STAGES)}")
    arts = Artifacts(cfg.output_dir)
    os.makedirs(cfg.output_dir, exist_ok=True)
    return STAGES[name](cfg, arts)


def run_all(cfg: RunConfig) -> dict[str, dict]:
    """Chain every stage; synth and score run only when configured."""
    results = {}
    names = ["ingest", "impute-home", "profile", "dedup", "validate"]
    if cfg.synth is not None:
        names.insert(0, "synth")
        names.append("score")
    names.append("report")
    for name in names:
        results[name] = run_stage(name, cfg)
    return results
