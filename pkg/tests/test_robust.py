import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from floral.defenses.robust import (
    RobustAggregationError,
    coordinate_median,
    coordinate_median_or_trimmed_mean,
    foolsgold_raw,
    foolsgold_weights,
    geometric_median,
    krum,
    krum_f,
    krum_scores,
    rlr_aggregate,
    trimmed_mean,
)


def krum_table(x, f):
    """Score table by explicit pairwise loops."""
    n = len(x)
    k = n - f - 2
    out = []
    for i in range(n):
        d = sorted(sum((a - b) ** 2 for a, b in zip(x[i], x[j])) for j in range(n) if j != i)
        out.append(sum(d[:k]))
    return out


def golden_section(fn, lo, hi, tol=1e-12):
    phi = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - phi * (b - a), a + phi * (b - a)
    while b - a > tol:
        if fn(c) < fn(d):
            b, d = d, c
            c = b - phi * (b - a)
        else:
            a, c = c, d
            d = a + phi * (b - a)
    return (a + b) / 2


def test_krum_excludes_outlier():
    agg, sel = krum([[0.0], [0.0], [0.0], [10.0]], f=1)
    assert agg.tolist() == [0.0] and sel[0] in (0, 1, 2)


def test_krum_identical_updates_score_zero():
    assert np.all(krum_scores(np.ones((5, 3)), f=1) == 0)


def test_multikrum_averages_cluster():
    rng = np.random.default_rng(0)
    pts = np.concatenate([rng.normal(scale=0.1, size=(5, 2)), [[50.0, 50.0]]])
    table = np.array(krum_table(pts.tolist(), 1))
    best = np.sort(np.argsort(table, kind="stable")[:3])
    agg, sel = krum(pts, f=1, m_select=3)
    assert sel.tolist() == best.tolist()
    assert 5 not in sel
    assert np.allclose(agg, pts[best].mean(axis=0))


def test_krum_needs_enough_updates():
    with pytest.raises(RobustAggregationError):
        krum(np.zeros((3, 2)), f=1)


def test_krum_f_rule():
    assert krum_f(0.2, 15) == 3
    assert krum_f(0.0, 15) == 1


@settings(max_examples=150, deadline=None)
@given(st.integers(3, 8).flatmap(lambda n: st.tuples(
    arrays(np.float64, (n, 2), elements=st.integers(-20, 20).map(float)),
    st.integers(0, n - 3),
)))
def test_krum_scores_match_table(case):
    x, f = case
    assert np.allclose(krum_scores(x, f), krum_table(x.tolist(), f))
    _, sel = krum(x, f)
    table = krum_table(x.tolist(), f)
    assert table[sel[0]] == min(table)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_krum_invariant_to_translation_and_rotation(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(7, 3))
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    moved = x @ q.T + rng.normal(size=3) * 10
    _, a = krum(x, 2, m_select=3)
    _, b = krum(moved, 2, m_select=3)
    sa, sb = krum_scores(x, 2), krum_scores(moved, 2)
    assert np.allclose(sa, sb)
    # ties aside, the same updates are chosen
    if np.min(np.diff(np.sort(sa))) > 1e-8:
        assert a.tolist() == b.tolist()


def test_geometric_median_examples():
    assert geometric_median([[0.0], [1.0], [2.0]]).point[0] == pytest.approx(1.0, abs=1e-6)
    square = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]
    assert np.allclose(geometric_median(square).point, [0.5, 0.5], atol=1e-9)


@pytest.mark.parametrize("values", [[0, 0, 0, 100], [1, 2, 10], [-3, 0.5, 0.7, 4, 9]])
def test_geometric_median_matches_golden_section(values):
    v = np.asarray(values, dtype=float)
    target = golden_section(lambda z: np.abs(v - z).sum(), v.min(), v.max())
    res = geometric_median(v[:, None])
    assert res.converged
    assert abs(res.point[0] - target) <= 1e-6


def test_geometric_median_weighted():
    res = geometric_median([[0.0], [10.0]], weights=[3, 1])
    assert res.point[0] == pytest.approx(0.0, abs=1e-6)


def test_geometric_median_flags_non_convergence():
    res = geometric_median([[0.0], [1.0], [5.0]], max_iter=1)
    assert not res.converged and res.n_iter == 1


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 8), st.integers(1, 3)), elements=st.floats(-100, 100)))
def test_weiszfeld_objective_is_monotone(x):
    hist = geometric_median(x, max_iter=100).objective
    assert all(b <= a + 1e-9 * max(1.0, a) for a, b in zip(hist, hist[1:]))


def test_coordinate_median_and_trimmed_mean():
    assert coordinate_median([[1.0], [2.0], [100.0]]).tolist() == [2.0]
    x = np.array([[5.0, 1.0], [1.0, 2.0], [3.0, 30.0], [2.0, 4.0], [4.0, -9.0]])
    assert np.array_equal(trimmed_mean(x, 0.0), x.mean(axis=0))
    assert np.array_equal(trimmed_mean(x, 0.2), np.array([3.0, (1.0 + 2.0 + 4.0) / 3]))
    assert np.array_equal(coordinate_median_or_trimmed_mean(x), np.median(x, axis=0))
    with pytest.raises(RobustAggregationError):
        trimmed_mean(x, 0.5)


def test_foolsgold_sybils_get_zero():
    h = np.array([[1.0, 2.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 1.0]])
    w = foolsgold_weights(h)
    assert w[0] == 0.0 and w[1] == 0.0


def test_foolsgold_orthogonal_raw_weight_one():
    assert np.array_equal(foolsgold_raw(np.eye(3)), np.ones(3))


def test_foolsgold_zero_history_keeps_weight():
    w = foolsgold_weights(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 0.0]]))
    assert w[0] == 1.0


def test_foolsgold_separates_sybils_from_benign():
    rng = np.random.default_rng(2)
    base = rng.normal(size=5)
    sybils = base + 1e-3 * rng.normal(size=(3, 5))
    benign = np.eye(5)[[0, 2, 4]] * 3 + 0.1 * rng.normal(size=(3, 5))
    w = foolsgold_weights(np.concatenate([sybils, benign]))
    assert w[:3].max() < w[3:].min()


def test_rlr_examples():
    g = np.zeros(1)
    d = np.array([[1.0], [1.0], [1.0], [-1.0], [-1.0]])
    assert rlr_aggregate(g, d, 1.0)[0] == pytest.approx(0.2)
    split = np.array([[2.0], [-1.0]])
    assert rlr_aggregate(g, split, 1.0)[0] == pytest.approx(-0.5)
    assert rlr_aggregate(g, split, 0.0)[0] == pytest.approx(0.5)
    with pytest.raises(RobustAggregationError):
        rlr_aggregate(g, d, -1.0)


def test_brute_force_multikrum_on_all_subsets():
    x = np.array([[0.0, 0.0], [0.1, 0.0], [0.0, 0.2], [3.0, 3.0], [0.2, 0.1], [9.0, -9.0]])
    for n in range(3, 7):
        for idx in itertools.combinations(range(6), n):
            sub = x[list(idx)]
            table = krum_table(sub.tolist(), 0)
            _, sel = krum(sub, 0)
            assert table[sel[0]] == min(table)
