import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from soft_tree_hawkes import Event, EventSequence, SpatialRegion, history
from conftest import BOX


def seq_of(times):
    return EventSequence(np.asarray(times, float), np.zeros((len(times), 2)), BOX)


def test_window_examples():
    assert [e.t for e in history(seq_of([1, 2, 3]), 3.5, 2.0)] == [2.0, 3.0]
    assert history(seq_of([]), 4.0, 1.0) == []
    # the event at the query time is excluded
    assert history(seq_of([0, 10]), 10.0, 5.0) == []


def test_window_includes_left_edge():
    assert [e.t for e in history(seq_of([1, 2]), 3.0, 2.0)] == [1.0, 2.0]


def test_nonpositive_window_rejected():
    with pytest.raises(ValueError):
        history(seq_of([1.0]), 2.0, 0.0)


def test_sequence_validation():
    with pytest.raises(ValueError):
        EventSequence([2.0, 1.0], [[0, 0], [0, 0]], BOX)
    with pytest.raises(ValueError):
        EventSequence([1.0], [[11.0, 0.0]], BOX)
    with pytest.raises(ValueError):
        EventSequence([1.0], [[0.0, 0.0]], BOX, t_start=2.0)
    with pytest.raises(ValueError):
        SpatialRegion(1.0, 0.0, 0.0, 1.0)


def test_sequence_accessors():
    s = EventSequence.from_events([Event(1.0, 1.0, 2.0), Event(2.0, -1.0, 0.5)], BOX)
    assert len(s) == 2 and s[1] == Event(2.0, -1.0, 0.5)
    assert s.events == list(s)
    assert s.duration == 1.0
    assert len(s.before(2.0)) == 1 and len(s.before(2.0, inclusive=True)) == 2
    assert BOX.area == 400.0 and BOX.center == (0.0, 0.0)


def test_from_unsorted_is_stable():
    s = EventSequence.from_unsorted([2.0, 1.0, 1.0], [[0, 0], [1, 1], [2, 2]], BOX)
    assert s.times.tolist() == [1.0, 1.0, 2.0]
    assert s.locs[:, 0].tolist() == [1.0, 2.0, 0.0]


times_st = st.lists(st.floats(0, 100, allow_nan=False), max_size=30).map(sorted)


@settings(max_examples=200, deadline=None)
@given(times_st, st.floats(0, 120), st.floats(0.01, 50), st.floats(0.01, 50))
def test_window_monotone_in_nu(times, t, nu1, nu2):
    s = seq_of(times)
    small, big = sorted([nu1, nu2])
    a = history(s, t, small)
    b = history(s, t, big)
    assert set(a) <= set(b)
    assert all(t - big <= e.t < t for e in b)


@settings(max_examples=200, deadline=None)
@given(times_st, st.floats(0, 120), st.floats(0.01, 50))
def test_window_matches_definition(times, t, nu):
    got = [e.t for e in history(seq_of(times), t, nu)]
    assert got == [x for x in times if t - nu <= x < t]
