import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from geocover.mobility import (
    DAY,
    MobilityProfile,
    TraceSet,
    UndefinedMetric,
    frequent_locations,
    load_traces,
    period_index,
    pick_frequent_location,
    profile_frequency,
    profile_matrix,
    profile_poisson,
    roc_auc,
    save_traces,
)

T0 = 1704067200  # a Monday, midnight UTC


def two_user_traces():
    # u1 at loc 0 on days 0,1,2,3 (twice on day 0); loc 1 once on day 1
    recs = [("u1", T0 + 10, 0), ("u1", T0 + 20, 0), ("u1", T0 + DAY + 5, 0), ("u1", T0 + 2 * DAY, 0),
            ("u1", T0 + 3 * DAY + 1, 0), ("u1", T0 + DAY + 9, 1),
            ("u2", T0 + 5, 2),
            ("u1", T0 + 4 * DAY + 3, 1), ("u2", T0 + 4 * DAY + 3, 2)]
    return TraceSet.from_records(recs, 3, "daily", split=T0 + 4 * DAY, start=T0, end=T0 + 5 * DAY - 1)


def test_periods():
    t = np.array([T0, T0 + DAY - 1, T0 + DAY, T0 + 7 * DAY])
    assert np.ptp(period_index(t[:2], "daily")) == 0
    assert np.diff(period_index(t[1:3], "daily"))[0] == 1
    w = period_index(t, "weekly")
    assert w[0] == w[2] and w[3] == w[0] + 1


def test_trace_sorted_and_split():
    tr = two_user_traces()
    assert np.all(np.diff(tr.time) >= 0)
    assert tr.n_train_periods == 4
    assert tr.train_mask.sum() == 7 and tr.test_mask.sum() == 2
    with pytest.raises(KeyError):
        tr.code("nobody")


def test_trace_validation():
    with pytest.raises(ValueError):
        TraceSet.from_records([("a", -1, 0)], 2, split=5)
    with pytest.raises(ValueError):
        TraceSet.from_records([("a", 1, 3)], 2, split=5)
    with pytest.raises(ValueError):
        TraceSet.from_records([("a", 10, 0)], 2, split=5, start=10)


def test_frequency_profile_fixture():
    tr = two_user_traces()
    p = profile_frequency(tr, "u1").probs
    assert p[0] == pytest.approx(1.0)
    assert p[1] == pytest.approx(0.25)
    assert p[2] == 0.0


def test_poisson_profile_fixture():
    tr = two_user_traces()
    p = profile_poisson(tr, "u1").probs
    assert p[0] == pytest.approx(1 - math.exp(-5 / 4))
    assert p[1] == pytest.approx(1 - math.exp(-1 / 4))
    assert profile_poisson(tr, "u2").probs[2] == pytest.approx(1 - math.exp(-1 / 4))


def test_profile_matrix_agrees_with_single_user():
    tr = two_user_traces()
    for method, fn in [("frequency", profile_frequency), ("poisson", profile_poisson)]:
        M = profile_matrix(tr, method)
        for i, u in enumerate(tr.user_ids):
            assert np.allclose(M[i], fn(tr, u).probs)


def test_user_without_training_data():
    tr = TraceSet.from_records([("a", T0 + 1, 0), ("b", T0 + 2 * DAY, 1)], 2, split=T0 + DAY, start=T0)
    with pytest.raises(KeyError):
        profile_poisson(tr, "b")
    assert list(tr.has_training_data()) == [True, False]


def test_frequent_locations_strict():
    prof = MobilityProfile("u", np.array([0.7, 0.71, 0.2]))
    assert frequent_locations(prof, 0.7) == {1}
    assert pick_frequent_location(MobilityProfile("u", np.array([0.1, 0.2])), 0.5, np.random.default_rng()) is None
    with pytest.raises(ValueError):
        frequent_locations(prof, 1.0)


def test_pick_is_uniform_over_frequent():
    prof = MobilityProfile("u", np.array([0.9, 0.8, 0.1, 0.95]))
    rng = np.random.default_rng(0)
    picks = np.bincount([pick_frequent_location(prof, 0.5, rng) for _ in range(6000)], minlength=4)
    assert picks[2] == 0
    assert np.allclose(picks[[0, 1, 3]] / 6000, 1 / 3, atol=0.03)


def test_auc_perfect_and_reversed():
    assert roc_auc([0.9, 0.8, 0.1], [1, 1, 0])[1] == 1.0
    assert roc_auc([0.1, 0.2, 0.9], [1, 1, 0])[1] == 0.0
    assert roc_auc({"a": 0.5, "b": 0.5}, {"a": 1, "b": 0})[1] == 0.5


def test_auc_needs_both_classes():
    with pytest.raises(UndefinedMetric):
        roc_auc([0.1, 0.2], [1, 1])


@given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=2, max_size=40))
def test_auc_equals_pair_count(pairs):
    s = np.array([p[0] for p in pairs], float)
    y = np.array([p[1] for p in pairs], int)
    if y.all() or not y.any():
        return
    pos, neg = s[y == 1], s[y == 0]
    want = ((pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()) / (len(pos) * len(neg))
    curve, auc = roc_auc(s, y)
    assert auc == pytest.approx(want)
    assert curve[0] == (0.0, 0.0) and curve[-1] == (1.0, 1.0)


def test_csv_roundtrip(tmp_path):
    tr = two_user_traces()
    save_traces(tr, tmp_path / "t.csv")
    back = load_traces(tmp_path / "t.csv", 3, tr.split, start=tr.start, end=tr.end)
    def events(t):
        return sorted(zip([t.user_ids[u] for u in t.user], t.time.tolist(), t.loc.tolist()))
    assert events(back) == events(tr)


def test_csv_errors(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("user,timestamp,loc_id\nu,1,9\n")
    with pytest.raises(ValueError, match=":2:"):
        load_traces(p, 3, 5)
    p.write_text("u,t,l\n")
    with pytest.raises(ValueError, match=":1:"):
        load_traces(p, 3, 5)
