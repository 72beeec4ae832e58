import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mobrisk.risk import (
    RegionState,
    RegistryMismatchError,
    order_by_score,
    profiles_from_rows,
    rank_users,
    risk_score,
    risk_score_bruteforce,
    risk_scores,
    scores_table,
)
from mobrisk.traces import MobilityProfile


def prof(alloc, user="u", registry=None):
    alloc = np.asarray(alloc, dtype=float)
    registry = registry or tuple(f"r{j}" for j in range(len(alloc)))
    return MobilityProfile(user, alloc, registry)


def random_instance(rng, m):
    t = rng.dirichlet(np.ones(m) * rng.uniform(0.1, 2))
    i = rng.random(m)
    s = rng.random(m) * (1 - i)
    return prof(t), RegionState(i, s)


def test_no_infection_scores_zero():
    state = RegionState(np.zeros(3), np.ones(3))
    assert risk_score(prof([0.2, 0.3, 0.5]), state).score == 0.0


def test_single_region():
    assert risk_score(prof([1.0]), RegionState([0.5], [0.5])).score == 0.25


def test_two_region_example():
    s = risk_score(prof([0.5, 0.5]), RegionState([0.2, 0.0], [0.8, 1.0]))
    assert s.score == pytest.approx(0.09, abs=1e-15)
    assert risk_score_bruteforce(prof([0.5, 0.5]), RegionState([0.2, 0.0], [0.8, 1.0])).score == (
        pytest.approx(0.09, abs=1e-15)
    )


def test_one_hot_profile_reduces_to_i_times_s():
    state = RegionState([0.1, 0.3, 0.2], [0.5, 0.6, 0.7])
    assert risk_score(prof([0, 1, 0]), state).score == pytest.approx(0.3 * 0.6)


def test_off_diagonal_variant():
    t, state = prof([0.5, 0.5]), RegionState([0.2, 0.0], [0.8, 1.0])
    # Pairs (0, 1) only: 0.5 * 0.5 * 0.2 * 1.0.
    assert risk_score(t, state, diagonal=False).score == pytest.approx(0.05)
    assert risk_score_bruteforce(t, state, diagonal=False).score == pytest.approx(0.05)
    assert risk_score(prof([1.0, 0.0]), state, diagonal=False).score == 0.0


def test_registry_mismatch():
    with pytest.raises(RegistryMismatchError):
        risk_score(prof([0.5, 0.5]), RegionState([0.1], [0.2]))
    with pytest.raises(RegistryMismatchError):
        risk_score(prof([1.0], registry=("a",)), RegionState([0.1], [0.2], registry=("b",)))


@pytest.mark.parametrize("i,s", [([-0.1], [0.5]), ([0.6], [0.5]), ([0.1, 0.2], [0.3])])
def test_invalid_state(i, s):
    with pytest.raises(ValueError):
        RegionState(i, s)


def test_from_counts_handles_empty_regions():
    st_ = RegionState.from_counts([1, 0], [3, 0], [4, 0])
    np.testing.assert_array_equal(st_.infected, [0.25, 0])
    np.testing.assert_array_equal(st_.susceptible, [0.75, 0])


def test_factorized_equals_bruteforce_randomized():
    rng = np.random.default_rng(1)
    for _ in range(300):
        p, state = random_instance(rng, int(rng.integers(1, 51)))
        for diag in (True, False):
            a = risk_score(p, state, diag).score
            b = risk_score_bruteforce(p, state, diag).score
            assert abs(a - b) <= 1e-12 * max(1.0, b)
            assert 0.0 <= a <= 0.25


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12), st.randoms(use_true_random=False), st.integers(0, 2**32 - 1))
def test_region_permutation_invariance(m, rnd, seed):
    p, state = random_instance(np.random.default_rng(seed), m)
    perm = list(range(m))
    rnd.shuffle(perm)
    q = prof(p.allocation[perm])
    permuted = RegionState(state.infected[perm], state.susceptible[perm])
    assert risk_score(q, permuted).score == pytest.approx(risk_score(p, state).score, rel=1e-12, abs=1e-15)


# -- rankings ---------------------------------------------------------------------------


def ranking_set():
    rows = [
        ("a", "r0", 0.5), ("a", "r1", 0.5),
        ("b", "r1", 1.0),
        ("c", "r0", 0.5), ("c", "r1", 0.5),
        ("d", "r0", 1.0),
    ]
    return profiles_from_rows(rows, ["r0", "r1"])


def test_rank_order_and_ties():
    ps = ranking_set()
    state = RegionState([0.2, 0.0], [0.8, 1.0])
    r = rank_users(ps, state)
    # a and c: 0.09, d: 0.16, b: 0.
    assert r.users == ("d", "a", "c", "b")
    np.testing.assert_allclose(r.scores, [0.16, 0.09, 0.09, 0.0])
    assert r.top(2) == ("d", "a")


def test_rank_eligible_subset_and_missing_profile():
    ps = ranking_set()
    state = RegionState([0.2, 0.0], [0.8, 1.0])
    assert rank_users(ps, state, eligible=["c", "b"]).users == ("c", "b")
    with pytest.raises(KeyError):
        rank_users(ps, state, eligible=["a", "zz"])


def test_zero_state_falls_back_to_registry_order():
    ps = ranking_set()
    assert rank_users(ps, RegionState([0, 0], [1, 1])).users == ("a", "b", "c", "d")
    assert rank_users(ps, RegionState([0.3, 0.3], [0, 0])).users == ("a", "b", "c", "d")


def test_scores_table_format():
    ps = ranking_set()
    text = scores_table(rank_users(ps, RegionState([0.2, 0.0], [0.8, 1.0])))
    lines = text.splitlines()
    assert lines[0] == "rank,user_id,score"
    assert lines[1] == "1,d,0.16"
    assert lines[2] == "2,a,0.09"


def test_order_by_score():
    order = order_by_score(np.array([0.1, 0.3, 0.3, 0.0]), np.array([3, 2, 1, 0]))
    np.testing.assert_array_equal(order, [2, 1, 0, 3])


def _random_profiles(rng, n, m):
    rows = []
    for u in range(n):
        t = rng.dirichlet(np.ones(m) * 0.3)
        rows += [(f"u{u:03d}", f"r{l}", float(x)) for l, x in enumerate(t)]
    return profiles_from_rows(rows, [f"r{l}" for l in range(m)])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.1, 0.5, 2.0]))
def test_ranking_scale_invariance(seed, c):
    rng = np.random.default_rng(seed)
    ps = _random_profiles(rng, 30, 6)
    i = rng.random(6) * 0.3
    s = rng.random(6) * (1 - 2 * i) if c > 1 else rng.random(6) * (1 - i)
    base = rank_users(ps, RegionState(i, s))
    scaled = rank_users(ps, RegionState(i * c, s))
    assert base.users == scaled.users
    np.testing.assert_allclose(scaled.scores, c * base.scores, rtol=1e-12, atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.5))
def test_monotonicity_in_exclusive_region(seed, bump):
    # Region 0 is visited by user u000 only; raising i_0 cannot lower its rank.
    rng = np.random.default_rng(seed)
    m = 5
    rows = [("u000", "r0", 0.4), ("u000", "r1", 0.6)]
    for u in range(1, 20):
        t = rng.dirichlet(np.ones(m - 1))
        rows += [(f"u{u:03d}", f"r{l + 1}", float(x)) for l, x in enumerate(t)]
    ps = profiles_from_rows(rows, [f"r{l}" for l in range(m)])
    i = rng.random(m) * 0.4
    s = rng.random(m) * 0.5
    before = rank_users(ps, RegionState(i, s)).users.index("u000")
    i2 = i.copy()
    i2[0] = min(i[0] + bump, 1 - s[0])
    after = rank_users(ps, RegionState(i2, s)).users.index("u000")
    assert after <= before


def test_vectorised_matches_single():
    rng = np.random.default_rng(2)
    ps = _random_profiles(rng, 40, 8)
    i, s = rng.random(8) * 0.5, rng.random(8) * 0.5
    state = RegionState(i, s)
    for diag in (True, False):
        vec = risk_scores(ps.matrix, i, s, diag)
        for u in ps.user_ids:
            assert vec[ps.row_of(u)] == pytest.approx(risk_score(ps[u], state, diag).score, abs=1e-15)
