import io
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import D0, H, csv_text, traces, ts
from mobrisk.traces import (
    DAY,
    NoEventsError,
    TraceFormatError,
    TraceSet,
    UnknownUserError,
    build_presence,
    build_profile,
    build_profiles,
    daily_locations,
    modal_region,
    parse_traces,
    read_region_registry,
    write_traces,
)

ONE_DAY = (D0, D0 + DAY)


# -- parsing -----------------------------------------------------------------


def test_three_rows_one_user_two_regions():
    t = traces([("u1", 0, 0, "A"), ("u1", 0, 6, "B"), ("u1", 0, 12, "A")])
    assert (t.n_users, t.n_regions, t.n_events) == (1, 2, 3)
    assert t.report.rejected == 0


def test_empty_body():
    t = parse_traces(io.StringIO("user_id,timestamp,region_id\n"))
    assert t.n_users == 0 and t.n_events == 0


@pytest.mark.parametrize("header", ["", "user,timestamp,region_id", "user_id;timestamp;region_id"])
def test_malformed_header_is_fatal(header):
    with pytest.raises(TraceFormatError):
        parse_traces(io.StringIO(header + "\nu1,2013-01-01T00:00:00Z,A\n"))


def test_malformed_rows_are_counted_and_skipped():
    text = csv_text([("u1", 0, 0, "A")]) + "\n".join(
        [
            "u2,2013-01-01 00:00:00,A",  # no T/Z
            "u2,2013-02-30T00:00:00Z,A",  # not a date
            "u3,,A",
            "u4,2013-01-01T00:00:00Z,A,extra",
            "u 5,2013-01-01T00:00:00Z,A",
        ]
    )
    t = parse_traces(io.StringIO(text))
    assert t.report.rows == 6
    assert t.report.malformed == 5
    assert t.report.accepted == 1
    assert t.users == ("u1",)
    with pytest.raises(TraceFormatError):
        parse_traces(io.StringIO(text), strict=True)


def test_unknown_region_with_registry():
    text = csv_text([("u1", 0, 0, "A"), ("u1", 0, 5, "Z")])
    t = parse_traces(io.StringIO(text), regions=["B", "A"])
    assert t.regions == ("B", "A")
    assert t.report.unknown_region == 1 and t.n_events == 1
    assert t.region[0] == 1
    with pytest.raises(TraceFormatError):
        parse_traces(io.StringIO(text), regions=["A"], strict=True)


def test_out_of_span_rows_rejected():
    text = csv_text([("u1", 0, 0, "A"), ("u1", 3, 0, "B")])
    t = parse_traces(io.StringIO(text), span=(D0, D0 + 2 * DAY))
    assert t.report.out_of_span == 1
    assert t.n_events == 1 and t.n_days == 2


def test_region_registry_file():
    reg = read_region_registry(io.StringIO("region_id\nr2\nr1\n"))
    assert reg == ("r2", "r1")
    with pytest.raises(TraceFormatError):
        read_region_registry(io.StringIO("r1\nr1\n"))


def test_write_round_trip():
    t = traces([("b", 1, 3, "X"), ("a", 0, 0, "Y"), ("a", 0, 1.5, "X")])
    buf = io.StringIO()
    write_traces(t, buf)
    back = parse_traces(io.StringIO(buf.getvalue()))
    assert back.users == t.users and back.regions == t.regions
    np.testing.assert_array_equal(back.time, t.time)
    np.testing.assert_array_equal(back.region, t.region)


def test_user_lookup_errors_are_distinct():
    t = TraceSet.from_indices(["A"], ["u0", "u1"], [0], [D0], [0])
    with pytest.raises(UnknownUserError):
        build_presence(t, "nobody", ONE_DAY)
    with pytest.raises(NoEventsError):
        build_presence(t, "u1", ONE_DAY)
    with pytest.raises(NoEventsError):
        build_profile(t, "u1", ONE_DAY)


# -- presence and modal region ---------------------------------------------------


def test_presence_two_events():
    t = traces([("u", 0, 0, "A"), ("u", 0, 18, "B")])
    tl = build_presence(t, "u", ONE_DAY)
    assert tl.segments == [("A", D0, D0 + 18 * H), ("B", D0 + 18 * H, D0 + DAY)]


def test_presence_single_event_fills_both_ways():
    t = traces([("u", 0, 12, "A")])
    assert build_presence(t, "u", ONE_DAY).segments == [("A", D0, D0 + DAY)]


def test_presence_window_after_last_event():
    t = traces([("u", 0, 2, "A"), ("u", 0, 5, "C"), ("v", 3, 0, "A")])
    tl = build_presence(t, "u", (D0 + 2 * DAY, D0 + 3 * DAY))
    assert tl.segments == [("C", D0 + 2 * DAY, D0 + 3 * DAY)]


def test_same_instant_highest_region_index_wins():
    t = traces([("u", 0, 0, "A"), ("u", 0, 6, "C"), ("u", 0, 6, "B")])
    tl = build_presence(t, "u", ONE_DAY)
    assert tl.segments == [("A", D0, D0 + 6 * H), ("C", D0 + 6 * H, D0 + DAY)]


def test_modal_region_examples():
    t = traces([("u", 0, 0, "A"), ("u", 0, 18, "B"), ("w", 0, 0, "A"), ("w", 0, 12, "B"),
                ("c", 0, 0, "C")])
    assert modal_region(build_presence(t, "u", ONE_DAY), D0 // DAY) == "A"
    assert modal_region(build_presence(t, "w", ONE_DAY), D0 // DAY) == "A"
    assert modal_region(build_presence(t, "c", ONE_DAY), D0 // DAY) == "C"
    # Tie with B earlier in the registry goes to B.
    t2 = traces([("w", 0, 0, "A"), ("w", 0, 12, "B")], regions=["B", "A"])
    assert modal_region(build_presence(t2, "w", ONE_DAY), D0 // DAY) == "B"


def test_modal_region_accepts_dates(start_date):
    t = traces([("u", 0, 0, "A"), ("u", 1, 0, "B")])
    tl = build_presence(t, "u", (D0, D0 + 2 * DAY))
    assert modal_region(tl, start_date) == "A"
    with pytest.raises(ValueError):
        modal_region(tl, D0 // DAY + 5)


# -- profiles ------------------------------------------------------------------------


def test_profile_18_6():
    t = traces([("u", 0, 0, "A"), ("u", 0, 18, "B")])
    np.testing.assert_allclose(build_profile(t, "u", ONE_DAY).allocation, [0.75, 0.25])


def test_profile_stationary_is_one_hot():
    t = traces([("u", 0, 0, "A"), ("u", 1, 0, "A"), ("v", 0, 3, "B"), ("v", 0, 9, "C")])
    np.testing.assert_array_equal(build_profile(t, "u", (D0, D0 + 2 * DAY)).allocation, [1, 0, 0])


def test_identical_sequences_identical_profiles():
    rows = [(u, 0, h, r) for u in ("x", "y") for h, r in ((1, "A"), (7, "B"), (20, "C"))]
    p = build_profiles(traces(rows), ONE_DAY)
    np.testing.assert_array_equal(p["x"].allocation, p["y"].allocation)


def test_build_profiles_matches_single_and_excludes_late_users():
    rows = [("a", 0, 5, "A"), ("a", 1, 1, "B"), ("b", 0, 0, "B"), ("late", 2, 0, "A")]
    t = traces(rows)
    window = (D0, D0 + 2 * DAY)
    ps = build_profiles(t, window)
    assert ps.user_ids == ("a", "b")
    assert [t.users[u] for u in ps.excluded] == ["late"]
    for u in ps.user_ids:
        np.testing.assert_allclose(ps[u].allocation, build_profile(t, u, window).allocation)
    with pytest.raises(NoEventsError):
        build_profile(t, "late", window)


def test_daily_locations():
    t = traces([("a", 0, 0, "A"), ("a", 1, 20, "B"), ("b", 2, 0, "B")])
    loc = daily_locations(t, 0, 3)
    # a: day0 A, day1 A (20h), day2 B; b: backward-filled B.
    np.testing.assert_array_equal(loc, [[0, 1], [0, 1], [1, 1]])


# -- properties ------------------------------------------------------------------------

event_lists = st.lists(
    st.tuples(
        st.sampled_from(["u0", "u1", "u2"]),
        st.integers(0, 3),
        st.floats(0, 23.99, allow_nan=False),
        st.sampled_from(["R0", "R1", "R2", "R3"]),
    ),
    min_size=1,
    max_size=40,
)


@settings(max_examples=60, deadline=None)
@given(event_lists, st.integers(0, 3), st.integers(1, 4))
def test_presence_partitions_window(rows, first, length):
    t = traces(rows)
    window = (t.start + first * DAY, t.start + min(first + length, t.n_days) * DAY)
    if window[1] <= window[0]:
        return
    for u in t.users:
        tl = build_presence(t, u, window)
        assert tl.durations().sum() == window[1] - window[0]
        assert tl.starts[0] == window[0] and tl.ends[-1] == window[1]
        np.testing.assert_array_equal(tl.starts[1:], tl.ends[:-1])


@settings(max_examples=60, deadline=None)
@given(event_lists, st.randoms(use_true_random=False))
def test_permutation_stability_and_simplex(rows, rnd):
    base = traces(rows)
    shuffled = list(rows)
    rnd.shuffle(shuffled)
    other = traces(shuffled)
    window = (base.start, base.end)
    a, b = build_profiles(base, window), build_profiles(other, window)
    assert a.user_ids == b.user_ids
    np.testing.assert_array_equal(a.matrix, b.matrix)
    assert (a.matrix >= 0).all()
    np.testing.assert_allclose(a.matrix.sum(axis=1), 1.0, atol=1e-9)


def _modal_fractions(t, u):
    tl = build_presence(t, u, (t.start, t.end))
    counts = np.zeros(t.n_regions)
    for d in range(t.n_days):
        counts[t.regions.index(modal_region(tl, t.start // DAY + d))] += 1
    return counts / t.n_days


@settings(max_examples=40, deadline=None)
@given(event_lists)
def test_modal_counts_agree_with_profile(rows):
    # Day-level discretisation: on each day the modal indicator differs from
    # the day's time shares by at most 1 - (largest share) in every entry.
    t = traces(rows)
    for u in t.users:
        prof = build_profile(t, u, (t.start, t.end)).allocation
        slack = np.mean([
            1 - build_presence(t, u, (t.day_start(d), t.day_start(d + 1))).durations().max() / DAY
            for d in range(t.n_days)
        ])
        assert np.abs(_modal_fractions(t, u) - prof).max() <= slack + 1e-12


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.sampled_from(["R0", "R1", "R2"]), min_size=2, max_size=2),
                min_size=1, max_size=12))
def test_one_event_per_day_profile_equals_modal_counts(days):
    rows = [(f"u{j}", d, 0, r) for d, regs in enumerate(days) for j, r in enumerate(regs)]
    t = traces(rows)
    for u in t.users:
        prof = build_profile(t, u, (t.start, t.end)).allocation
        np.testing.assert_allclose(_modal_fractions(t, u), prof, atol=1e-12)
        assert np.abs(_modal_fractions(t, u) - prof).max() <= 1.0 / t.n_days


def test_modal_counts_can_miss_profile_by_more_than_one_over_days():
    rows = [("u", d, h, r) for d in range(4) for h, r in ((0, "A"), (9.6, "B"), (16.8, "C"))]
    t = traces(rows)
    prof = build_profile(t, "u", (t.start, t.end)).allocation
    np.testing.assert_allclose(prof, [0.4, 0.3, 0.3])
    np.testing.assert_array_equal(_modal_fractions(t, "u"), [1, 0, 0])


@settings(max_examples=40, deadline=None)
@given(event_lists)
def test_daily_locations_match_modal_region(rows):
    t = traces(rows)
    loc = daily_locations(t, 0, t.n_days)
    for ui, u in enumerate(t.users):
        tl = build_presence(t, u, (t.start, t.end))
        for d in range(t.n_days):
            assert t.regions[loc[d, ui]] == modal_region(tl, t.start // DAY + d)


def test_parse_is_order_independent_large():
    rng = random.Random(4)
    rows = [(f"u{rng.randrange(50)}", rng.randrange(10), rng.uniform(0, 23), f"r{rng.randrange(7)}")
            for _ in range(2000)]
    a = traces(rows)
    rng.shuffle(rows)
    b = traces(rows)
    np.testing.assert_array_equal(a.time, b.time)
    assert ts(0) == "2013-01-01T00:00:00Z"
