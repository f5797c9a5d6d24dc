import random

from mdld_dedup.dedup import (
    AnonymityGroup,
    anonymity_stats,
    dedup_map,
    duplicate_rate,
    group_devices,
    merge_group,
)
from mdld_dedup.home import HomeLocation
from mdld_dedup.ingest import SightingRecord
from mdld_dedup.profiles import VisitProfile

from oracles import partition_oracle

H = "dqcmc4p"
TOP = ("dqcjpxe", "dqcmc4p", "dqcnq2b", "dqcp111", "dqcp222")


def make_inputs(entries):
    """entries: device -> (home7, top tuple)."""
    homes = {d: HomeLocation(d, h[:6], h) for d, (h, _t) in entries.items()}
    profs = {d: VisitProfile(d, t) for d, (_h, t) in entries.items()}
    return homes, profs


def test_identical_keys_group_together():
    homes, profs = make_inputs({"a": (H, TOP), "b": (H, TOP)})
    groups, excluded = group_devices(homes, profs)
    assert [g.members for g in groups] == [("a", "b")]
    assert excluded == {"missing_home": 0, "missing_profile": 0}


def test_order_of_top_cells_matters():
    swapped = TOP[:3] + (TOP[4], TOP[3])
    homes, profs = make_inputs({"a": (H, TOP), "b": (H, swapped)})
    groups, _ = group_devices(homes, profs)
    assert sorted(g.k for g in groups) == [1, 1]


def test_missing_home_or_profile_is_counted_not_fatal():
    homes, profs = make_inputs({"a": (H, TOP), "b": (H, TOP)})
    del homes["b"]
    profs["c"] = VisitProfile("c", TOP)
    homes["d"] = HomeLocation("d", H[:6], H)
    groups, excluded = group_devices(homes, profs)
    assert excluded == {"missing_home": 2, "missing_profile": 1}
    assert [g.members for g in groups] == [("a",)]


def test_grouping_is_input_order_independent():
    rng = random.Random(4)
    entries = {}
    for i in range(60):
        key = rng.randrange(20)
        top = tuple(f"cell{key}{j}" for j in range(5))
        entries[f"d{i:03d}"] = (f"hm{key:05d}", top)
    homes, profs = make_inputs(entries)
    groups1, _ = group_devices(homes, profs)
    items = list(entries.items())
    rng.shuffle(items)
    homes2, profs2 = make_inputs(dict(items))
    groups2, _ = group_devices(homes2, profs2)
    assert groups1 == groups2


def test_partition_matches_brute_force_closure():
    rng = random.Random(17)
    entries = {}
    for i in range(100):
        key = rng.randrange(40)
        entries[f"d{i:03d}"] = (f"hm{key:05d}", tuple(f"c{key}{j}" for j in range(5)))
    homes, profs = make_inputs(entries)
    groups, _ = group_devices(homes, profs)
    got = {frozenset(g.members) for g in groups}
    keys = {d: (h, t) for d, (h, t) in entries.items()}
    assert got == partition_oracle(keys)


def test_every_keyed_device_in_exactly_one_group():
    rng = random.Random(23)
    entries = {
        f"d{i}": (f"hm{rng.randrange(10):05d}", tuple(f"c{rng.randrange(4)}{j}" for j in range(3)))
        for i in range(50)
    }
    homes, profs = make_inputs(entries)
    groups, _ = group_devices(homes, profs)
    seen = [d for g in groups for d in g.members]
    assert sorted(seen) == sorted(entries)


def test_stats_all_singletons():
    groups = [AnonymityGroup(("h", ("c",)), (f"d{i}",)) for i in range(5)]
    st = anonymity_stats(groups, 1)
    assert (st.min_k, st.mean_k, st.max_k) == (1, 1.0, 1)
    assert st.duplicate_rate == 0.0
    assert st.singleton_share == 1.0


def test_stats_arithmetic():
    sizes = [3, 1, 1, 1]
    groups = [
        AnonymityGroup(("h", (f"c{i}",)), tuple(f"d{i}{j}" for j in range(k)))
        for i, k in enumerate(sizes)
    ]
    st = anonymity_stats(groups, 5)
    assert (st.min_k, st.mean_k, st.max_k) == (1, 1.5, 3)
    assert st.devices_with_duplicates == 3
    assert st.duplicate_rate == 0.5


def test_stats_empty_input_marker():
    assert anonymity_stats([], 3) is None


def test_duplicate_rate_examples():
    singles = [AnonymityGroup(("h", (f"c{i}",)), (f"d{i}",)) for i in range(10)]
    assert duplicate_rate(singles) == 0.0
    one_pair = singles[:8] + [AnonymityGroup(("h", ("cx",)), ("x1", "x2"))]
    assert duplicate_rate(one_pair) == 0.2


def rec(dev, ts):
    return SightingRecord(dev, ts, 38.0, -76.0, 2.0, -18000)


def test_merge_uses_lexicographically_smallest_id():
    group = AnonymityGroup((H, TOP), ("a9", "b2"))
    store = {"b2": [rec("b2", 5), rec("b2", 1)], "a9": [rec("a9", 3)]}
    merged = merge_group(group, store)
    assert merged.canonical_id == "a9"
    assert [s.device_id for s in merged.sightings] == ["a9"] * 3
    assert [s.utc_timestamp for s in merged.sightings] == [1, 3, 5]
    assert merged.sightings[0].utc_offset == -18000


def test_merge_count_is_sum_without_identical_rows():
    group = AnonymityGroup((H, TOP), ("a", "b"))
    store = {"a": [rec("a", i) for i in range(4)], "b": [rec("b", 100 + i) for i in range(3)]}
    merged = merge_group(group, store)
    assert len(merged.sightings) == 7


def test_dedup_map_covers_singletons_and_groups():
    groups = [
        AnonymityGroup((H, TOP), ("a", "b")),
        AnonymityGroup((H, TOP[:4] + ("zzz",)), ("c",)),
    ]
    m = dedup_map(groups)
    assert m == {"a": "a", "b": "a", "c": "c"}


def test_remerging_merged_devices_is_idempotent():
    # two devices with identical keys merge; the merged device then stands
    # alone in a rerun over the updated inputs
    homes, profs = make_inputs({"a": (H, TOP), "b": (H, TOP)})
    groups, _ = group_devices(homes, profs)
    assert groups[0].members == ("a", "b")
    m = dedup_map(groups)
    homes2 = {m[d]: HomeLocation(m[d], H[:6], H) for d in homes}
    profs2 = {m[d]: VisitProfile(m[d], TOP) for d in profs}
    groups2, _ = group_devices(homes2, profs2)
    assert [g.members for g in groups2] == [("a",)]
