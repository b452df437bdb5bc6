import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from fttrain.core import ValidationError
from fttrain.tee import (CorrelationPruner, DTWPeerCluster, LocalOutlierFactor, NeighborProfile,
                         dtw_distance, lof_scores, median_filter, neighbor_profile, peer_scores)

finite = st.floats(-100, 100, allow_nan=False, allow_infinity=False)


# -- LOF --------------------------------------------------------------------------


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_lof_matches_oracle(data):
    n = data.draw(st.integers(3, 50))
    d = data.draw(st.integers(1, 6))
    k = data.draw(st.integers(1, n - 1))
    pts = data.draw(arrays(np.float64, (n, d), elements=finite))
    got = lof_scores(pts, k)
    want = np.array(oracles.lof(pts.tolist(), k))
    # lrd reaches 1e12 on duplicated points, so compare relatively
    np.testing.assert_allclose(got, want, rtol=1e-9, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.data())
def test_lof_novelty_matches_oracle(data):
    n = data.draw(st.integers(4, 40))
    k = data.draw(st.integers(1, n - 1))
    ref = data.draw(arrays(np.float64, (n, 3), elements=finite))
    qs = data.draw(arrays(np.float64, (5, 3), elements=finite))
    est = LocalOutlierFactor(n_neighbors=k).fit(ref)
    np.testing.assert_allclose(est.score_samples(qs), oracles.lof_novelty(ref.tolist(), qs.tolist(), k),
                               rtol=1e-9, atol=1e-9)


def test_lof_all_identical_scores_one():
    pts = np.full((12, 3), 0.25)
    assert np.array_equal(lof_scores(pts, 4), np.ones(12))
    est = LocalOutlierFactor(n_neighbors=4).fit(pts)
    assert np.array_equal(est.score_samples(pts[:2]), np.ones(2))


def test_lof_lattice_interior_point():
    pts = np.arange(11.0)[:, None]
    scores = lof_scores(pts, 2)
    assert 0.9 <= scores[5] <= 1.1
    assert scores[5] == pytest.approx(oracles.lof(pts.tolist(), 2)[5])


def test_lof_frozen_example():
    pts = [[0, 0], [0, 1], [1, 0], [1, 1], [10, 10]]
    scores = lof_scores(pts, 2)
    np.testing.assert_allclose(scores[:4], 1.0)
    # 3 tied neighbours at 12.728, 13.454, 13.454; square lrd 1 -> 39.636 / 3
    assert scores[4] == pytest.approx(13.211723385168426, rel=1e-12)


def test_lof_estimator_contract():
    rng = np.random.default_rng(0)
    ref = rng.normal(size=(200, 2))
    est = LocalOutlierFactor(n_neighbors=10, threshold=1.5).fit(ref)
    pred = est.predict(np.array([[0.0, 0.0], [25.0, 25.0]]))
    assert pred.tolist() == [1, -1]
    with pytest.raises(ValidationError):
        est.score_samples(np.zeros((1, 3)))
    with pytest.raises(ValidationError):
        LocalOutlierFactor(n_neighbors=10).fit(ref[:10])
    with pytest.raises(ValidationError):
        lof_scores(ref[:5], 5)


# -- neighbor profile -------------------------------------------------------------


@settings(max_examples=100, deadline=None)
@given(st.data())
def test_nprofile_matches_oracle(data):
    m = data.draw(st.integers(2, 16))
    n = data.draw(st.integers(2 * m, 160))
    k = data.draw(st.integers(1, 4))
    x = data.draw(arrays(np.float64, n, elements=st.floats(-10, 10, allow_nan=False)))
    np.testing.assert_allclose(neighbor_profile(x, m, k), oracles.neighbor_profile(x.tolist(), m, k),
                               rtol=1e-7, atol=1e-7)


def test_nprofile_matches_oracle_long_series():
    rng = np.random.default_rng(1)
    x = np.sin(np.arange(512) * 2 * np.pi / 24) + rng.normal(0, 0.1, 512)
    np.testing.assert_allclose(neighbor_profile(x, 24, 2), oracles.neighbor_profile(x.tolist(), 24, 2),
                               atol=1e-9)


def test_nprofile_constant_and_periodic_are_zero():
    assert np.array_equal(neighbor_profile(np.full(60, 3.0), 8, 2), np.zeros(53))
    x = np.tile([0.1, 0.9, 0.5, 0.3, 0.7, 0.2], 10)
    assert neighbor_profile(x, 6, 1).max() <= 1e-9


def test_nprofile_argmax_inside_flattened_period():
    period = np.array([0.1, 0.9, 0.5, 0.3, 0.7, 0.2, 0.8, 0.4])
    x = np.tile(period, 12)
    x[40:48] = 0.5
    prof = neighbor_profile(x, 8, 1)
    i = int(prof.argmax())
    assert i == int(np.argmax(oracles.neighbor_profile(x.tolist(), 8, 1)))
    assert i + 8 > 40 and i < 48
    est = NeighborProfile(subseq_len=8, k=1, threshold=1.0).fit(np.tile(period, 12)[None, :])
    assert est.argmax_location(x[None, :])[0] == i
    assert est.predict(x[None, :]).tolist() == [-1]


def test_nprofile_short_series():
    with pytest.raises(ValidationError):
        neighbor_profile(np.arange(10.0), 6, 1)


# -- DTW --------------------------------------------------------------------------


series = arrays(np.float64, st.integers(1, 30), elements=st.floats(-50, 50, allow_nan=False))


@settings(max_examples=500, deadline=None)
@given(series, series)
def test_dtw_properties_and_oracle(a, b):
    d = dtw_distance(a, b)
    assert d >= 0
    assert d == pytest.approx(dtw_distance(b, a), rel=1e-12, abs=1e-12)
    assert dtw_distance(a, a) == 0.0
    assert d == pytest.approx(oracles.dtw(a.tolist(), b.tolist()), rel=1e-12, abs=1e-9)


def test_dtw_examples():
    assert dtw_distance([0, 0, 1], [0, 1]) == 0.0
    assert dtw_distance([0, 1, 2], [0, 1, 3]) == 1.0
    with pytest.raises(ValidationError):
        dtw_distance([], [1])


def test_dtw_flags_only_flatlined_rank():
    period = np.array([0.95] * 6 + [0.75] * 2 + [0.35] * 4)
    healthy = np.tile(np.tile(period, 5), (8, 1))
    bad = healthy.copy()
    bad[5] = 1.0
    est = DTWPeerCluster(n_neighbors=3).fit([healthy])
    assert est.predict(bad).tolist() == [1] * 5 + [-1] + [1] * 2
    scores = peer_scores(bad, 3)
    want = [np.mean(sorted(oracles.dtw(bad[i].tolist(), bad[j].tolist())
                           for j in range(8) if j != i)[:3]) for i in range(8)]
    np.testing.assert_allclose(scores, want)


# -- preprocessing ----------------------------------------------------------------


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(3, 60), elements=st.floats(-5, 5, allow_nan=False)),
       st.sampled_from([1, 3, 5]))
def test_median_filters_match_oracles(x, width):
    if x.size < width:
        return
    np.testing.assert_array_equal(median_filter(x, width), oracles.sliding_median(x.tolist(), width))
    np.testing.assert_array_equal(median_filter(x, width, causal=True),
                                  oracles.trailing_median(x.tolist(), width))


def test_constant_column_unchanged():
    x = np.full(20, 7.5)
    assert np.array_equal(median_filter(x, 3), x)
    assert np.array_equal(median_filter(x, 3, causal=True), x)


def test_alternating_column_frozen_output():
    x = np.array([0, 1] * 6, dtype=float)
    # hand-evaluated width-3 centred median: interior samples keep alternating
    want = [0, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 1]
    assert median_filter(x, 3).tolist() == want == oracles.sliding_median(x.tolist(), 3)


def test_proportional_columns_are_pruned():
    rng = np.random.default_rng(2)
    a = rng.normal(size=100)
    X = np.column_stack([a, 3 * a, rng.normal(size=100)])
    pr = CorrelationPruner(0.95).fit(X)
    assert pr.keep_.tolist() == [0, 2]
    assert pr.transform(X).shape == (100, 2)


def test_filter_rejects_short_input_and_bad_width():
    with pytest.raises(ValidationError):
        median_filter([1.0, 2.0], 3)
    with pytest.raises(ValidationError):
        median_filter(np.arange(10.0), 4)
