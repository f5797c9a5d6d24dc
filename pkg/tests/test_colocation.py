import itertools

from hypothesis import given, settings
from hypothesis import strategies as st

from mdld_dedup.colocation import (
    colocation_rate,
    common_hours,
    hour_cells,
    pair_count,
    sample_pairs,
    validate_sample,
)
from mdld_dedup.dedup import AnonymityGroup
from mdld_dedup.ingest import LocalSighting
from mdld_dedup.timeops import iso_to_day

JAN1 = iso_to_day("2020-01-01")


def s(dev, day, hour, cell):
    return LocalSighting(dev, day, hour, cell, day * 86400 + hour * 3600)


def test_simultaneous_observation_is_a_common_hour():
    a = hour_cells([s("a", JAN1, 4, "dqcmc4p")])
    b = hour_cells([s("b", JAN1, 4, "dqcmc4p")])
    assert common_hours(a, b) == {(JAN1, 4)}


def test_disjoint_hours_have_no_overlap():
    a = hour_cells([s("a", JAN1, 4, "dqcmc4p")])
    b = hour_cells([s("b", JAN1, 5, "dqcmc4p")])
    assert common_hours(a, b) == set()


def test_identical_devices_share_all_hours():
    rows = [s("a", JAN1 + d, h, "dqcmc4p") for d in range(3) for h in (2, 9, 20)]
    a = hour_cells(rows)
    assert common_hours(a, a) == set(a)


def test_window_restricts_hours():
    rows = [s("a", JAN1, 1, "x"), s("a", JAN1 + 12, 1, "x")]
    assert set(hour_cells(rows, (JAN1, JAN1 + 9))) == {(JAN1, 1)}


def test_identical_trajectories_rate_one():
    rows_a = [s("a", JAN1 + d, h, f"cell{h}") for d in range(5) for h in range(4)]
    rows_b = [s("b", JAN1 + d, h, f"cell{h}") for d in range(5) for h in range(4)]
    pv = colocation_rate("a", "b", hour_cells(rows_a), hour_cells(rows_b))
    assert pv.rate == 1.0
    assert pv.common_hours == 20


def test_any_shared_cell_marks_the_hour():
    a = hour_cells([s("a", JAN1, 9, "cellx"), s("a", JAN1, 9, "celly")])
    b = hour_cells([s("b", JAN1, 9, "celly")])
    pv = colocation_rate("a", "b", a, b)
    assert (pv.common_hours, pv.colocated_hours) == (1, 1)


def test_never_same_cell_rate_zero():
    a = hour_cells([s("a", JAN1, h, "cellx") for h in range(6)])
    b = hour_cells([s("b", JAN1, h, "cellz") for h in range(6)])
    pv = colocation_rate("a", "b", a, b)
    assert pv.rate == 0.0


def test_no_common_hours_rate_undefined():
    a = hour_cells([s("a", JAN1, 1, "x")])
    b = hour_cells([s("b", JAN1, 2, "x")])
    pv = colocation_rate("a", "b", a, b)
    assert pv.common_hours == 0
    assert pv.rate is None


@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 23), st.sampled_from("pqrs")), max_size=40),
       st.lists(st.tuples(st.integers(0, 5), st.integers(0, 23), st.sampled_from("pqrs")), max_size=40))
@settings(max_examples=150, deadline=None)
def test_rate_is_symmetric(rows_a, rows_b):
    a = hour_cells([s("a", JAN1 + d, h, c) for d, h, c in rows_a])
    b = hour_cells([s("b", JAN1 + d, h, c) for d, h, c in rows_b])
    pa = colocation_rate("a", "b", a, b)
    pb = colocation_rate("b", "a", b, a)
    assert (pa.common_hours, pa.colocated_hours) == (pb.common_hours, pb.colocated_hours)


@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 23), st.sampled_from("pqrs")), min_size=1, max_size=40))
@settings(max_examples=100, deadline=None)
def test_self_pair_rate_is_one(rows):
    a = hour_cells([s("a", JAN1 + d, h, c) for d, h, c in rows])
    assert colocation_rate("a", "a", a, a).rate == 1.0


def groups_of(sizes):
    out = []
    for i, k in enumerate(sizes):
        members = tuple(f"g{i}d{j}" for j in range(k))
        out.append(AnonymityGroup((f"h{i}", (f"c{i}",)), members))
    return out


def test_pair_count():
    assert pair_count(groups_of([1, 2, 3, 5])) == 0 + 1 + 3 + 10


def test_sampling_enumerates_all_pairs_when_small():
    groups = groups_of([2, 3])
    pairs = sample_pairs(groups, 100, seed=1)
    expected = list(itertools.combinations(groups[0].members, 2)) + list(
        itertools.combinations(groups[1].members, 2)
    )
    assert pairs == expected


def test_sampling_is_deterministic_and_within_population():
    groups = groups_of([2, 4, 6, 3, 8])
    all_pairs = set()
    for g in groups:
        all_pairs.update(itertools.combinations(g.members, 2))
    sampled1 = sample_pairs(groups, 10, seed=99)
    sampled2 = sample_pairs(groups, 10, seed=99)
    assert sampled1 == sampled2
    assert len(sampled1) == 10
    assert set(sampled1) <= all_pairs
    assert sample_pairs(groups, 10, seed=100) != sampled1


def test_unranking_covers_every_pair_exactly_once():
    groups = groups_of([7])
    pairs = sample_pairs(groups, 10_000, seed=0)
    assert sorted(pairs) == sorted(itertools.combinations(groups[0].members, 2))
    assert len(set(pairs)) == 21


def test_validate_sample_empty():
    report = validate_sample([], {}, n=5, eligible_pairs=0, requested=10)
    assert report.pairs_sampled == 0
    assert report.mean_rate is None
    assert report.median_rate is None
    assert report.sample_truncated


def test_validate_sample_aggregates():
    rows = {
        "a": hour_cells([s("a", JAN1, 1, "x"), s("a", JAN1, 2, "x")]),
        "b": hour_cells([s("b", JAN1, 1, "x"), s("b", JAN1, 2, "y")]),
        "c": hour_cells([s("c", JAN1, 9, "z")]),
    }
    report = validate_sample([("a", "b"), ("a", "c")], rows, n=5, eligible_pairs=2, requested=2)
    assert report.pairs_sampled == 2
    assert report.pairs_with_common_hours == 1
    assert report.mean_rate == 0.5
    assert report.median_rate == 0.5
    assert not report.sample_truncated
