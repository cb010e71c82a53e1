import threading

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats as sps

from msgn.prm import PRMStream, next_point, query, stream
from msgn.stats import gof_tests


def test_same_arguments_same_points():
    a = query(stream(5, 2, "prod"), 0.3, 7.9, 13.0)
    b = query(stream(5, 2, "prod"), 0.3, 7.9, 13.0)
    assert len(a) > 0 and np.array_equal(a, b)


def test_degenerate_rectangles_are_empty():
    st_ = stream(1, 0, "r")
    assert query(st_, 0.0, 5.0, 0.0).shape == (0, 2)
    assert query(st_, 2.0, 2.0, 5.0).shape == (0, 2)
    assert next_point(st_, 0.0, 0.0) is None


def test_points_inside_and_sorted():
    pts = query(stream(9, 0, "r", base_level=0.5, window=0.7), 1.1, 6.3, 9.5)
    assert np.all(pts[:, 0] > 1.1) and np.all(pts[:, 0] <= 6.3)
    assert np.all(pts[:, 1] >= 0) and np.all(pts[:, 1] <= 9.5)
    assert np.all(np.diff(pts[:, 0]) > 0)


def test_strip_ladder():
    s = PRMStream(0, 0, "r", base_level=1.5)
    assert s.strip_bounds(0) == (0.0, 1.5)
    assert s.strip_bounds(3) == (6.0, 12.0)
    assert s.strip_for(1.5) == 0 and s.strip_for(1.6) == 1 and s.strip_for(12.0) == 3
    assert s.strip_for(0.0) == -1


rects = st.tuples(
    st.integers(0, 2**32), st.floats(0, 5), st.floats(0, 5), st.floats(0, 40), st.floats(0, 1), st.floats(0, 1),
    st.floats(0, 1),
)


@given(rects)
def test_nested_rectangles_and_query_order(args):
    seed, t0, span, lev, f0, f1, fl = args
    t1 = t0 + span
    # inner rectangle (a, b] x [0, l] inside (t0, t1] x [0, lev]
    a = t0 + f0 * span
    b = a + f1 * (t1 - a)
    lv = fl * lev
    fresh = stream(seed, 0, "x")
    inner_first = query(fresh, a, b, lv)
    outer = query(fresh, t0, t1, lev)
    other = stream(seed, 0, "x")
    outer2 = query(other, t0, t1, lev)
    inner2 = query(other, a, b, lv)
    assert np.array_equal(outer, outer2)
    assert np.array_equal(inner_first, inner2)
    m = (outer[:, 0] > a) & (outer[:, 0] <= b) & (outer[:, 1] <= lv)
    assert np.array_equal(outer[m], inner_first)


@given(st.integers(0, 2**32), st.floats(0, 8), st.floats(0.01, 20), st.floats(1, 4))
def test_level_monotonicity(seed, t, lev, factor):
    s = stream(seed, 1, "y")
    low = query(s, t, t + 3, lev)
    high = query(stream(seed, 1, "y"), t, t + 3, lev * factor)
    # raising the level adds points and never moves existing ones
    keys = {tuple(p) for p in high}
    assert all(tuple(p) in keys for p in low)
    p_low = next_point(s, t, lev)
    p_high = next_point(s, t, lev * factor)
    assert p_high is not None
    if p_low is not None:
        assert p_high[0] <= p_low[0]


@given(st.integers(0, 2**32), st.floats(0, 10), st.floats(0.01, 30))
def test_next_point_is_head_of_query(seed, t, lev):
    s = stream(seed, 0, "z")
    pts = query(s, t, t + 10, lev)
    p = next_point(s, t, lev, horizon=t + 10)
    if len(pts) == 0:
        assert p is None
    else:
        assert p == (pts[0, 0], pts[0, 1])


def test_counts_are_poisson_six():
    counts = np.array([len(query(stream(seed, 0, "r"), 0.0, 2.0, 3.0)) for seed in range(10_000)])
    assert abs(counts.mean() - 6.0) <= 3 * np.sqrt(6.0 / 10_000)
    assert gof_tests(counts, ("poisson", 6.0)).pvalue > 0.01


def test_disjoint_rectangles_uncorrelated():
    a, b = [], []
    for seed in range(3000):
        s = stream(seed, 0, "r")
        a.append(len(query(s, 0.0, 1.0, 2.0)))
        b.append(len(query(s, 1.0, 2.5, 2.0)) + len(query(s, 0.0, 1.0, 5.0)) - len(query(s, 0.0, 1.0, 2.0)))
    r = np.corrcoef(a, b)[0, 1]
    assert abs(r) <= 3 / np.sqrt(3000)


@pytest.mark.parametrize("other", [("r2", 0), ("r", 1)])
def test_streams_independent_across_ids_and_replicas(other):
    a, b = [], []
    for seed in range(1000):
        a.append(len(query(stream(seed, 0, "r"), 0.0, 1.0, 4.0)))
        b.append(len(query(stream(seed, other[1], other[0]), 0.0, 1.0, 4.0)))
    r = np.corrcoef(a, b)[0, 1]
    assert abs(r) <= 3 / np.sqrt(1000)


def test_interarrivals_exponential():
    lev = 2.5
    s = stream(77, 0, "r")
    pts = query(s, 0.0, 400.0, lev)
    gaps = np.diff(np.concatenate([[0.0], pts[:, 0]]))
    assert sps.kstest(gaps, "expon", args=(0, 1 / lev)).pvalue > 0.01


def test_concurrent_queries_agree():
    s = stream(4, 0, "r")
    out = [None] * 8

    def work(i):
        out[i] = query(s, 0.0, 20.0, 50.0 if i % 2 else 30.0)

    threads = [threading.Thread(target=work, args=(i,)) for i in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    ref = query(stream(4, 0, "r"), 0.0, 20.0, 50.0)
    for i in range(8):
        want = ref if i % 2 else ref[ref[:, 1] <= 30.0]
        assert np.array_equal(out[i], want)
