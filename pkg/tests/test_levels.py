import numpy as np
import pytest
from sklearn.exceptions import NotFittedError

import oracles
from hotspot_hierarchy import LoubarClassifier, classify_levels, lorenz_curve, loubar_threshold
from hotspot_hierarchy.exceptions import InputError
from hotspot_hierarchy.levels import level_table


def as_values(stops, partition):
    return [sorted((stops[i] for i in lvl), reverse=True) for lvl in partition.levels]


def test_lorenz_equal_values_on_diagonal():
    c = lorenz_curve([5, 5, 5, 5])
    np.testing.assert_allclose(c.x, c.y)


def test_lorenz_hand_example():
    pts = lorenz_curve([1, 2, 3, 4, 10]).points
    expected = [(0.0, 0.0), (0.2, 0.05), (0.4, 0.15), (0.6, 0.30), (0.8, 0.50), (1.0, 1.0)]
    np.testing.assert_allclose(pts, expected, atol=1e-12)


def test_lorenz_is_convex():
    rng = np.random.default_rng(0)
    c = lorenz_curve(rng.integers(1, 1000, 50))
    slopes = np.diff(c.y) / np.diff(c.x)
    assert np.all(np.diff(slopes) >= -1e-12)


@pytest.mark.parametrize("values,expected", [([5, 5, 5, 5], 0.0), ([1, 2, 3, 4, 10], 0.6), ([1, 1, 1, 1, 16], 0.75)])
def test_loubar_threshold(values, expected):
    assert loubar_threshold(values) == pytest.approx(expected, abs=1e-15)


def test_all_equal_single_level():
    p = classify_levels([5, 5, 5, 5])
    assert p.levels == ((0, 1, 2, 3),)


def test_hand_partition():
    stops = [1, 2, 3, 4, 10]
    p = classify_levels(stops)
    assert as_values(stops, p) == [[10, 4], [3, 2], [1]]
    assert p.thresholds[0] == pytest.approx(0.6)
    assert p.thresholds[1] == pytest.approx(1 / 3)


@pytest.mark.parametrize("seed", range(100))
def test_random_partitions(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 60))
    stops = rng.integers(1, 500, n).tolist()
    if seed % 3 == 0:
        stops = (np.asarray(stops) // 50 + 1).tolist()  # plenty of ties
    p = classify_levels(stops)
    flat = [i for lvl in p.levels for i in lvl]
    assert sorted(flat) == list(range(n))
    for a, b in zip(p.levels, p.levels[1:]):
        assert min(stops[i] for i in a) > max(stops[i] for i in b)
    assert [list(l) for l in p.levels] == oracles.loubar_levels(stops)


def test_rejects_nonpositive():
    with pytest.raises(InputError):
        classify_levels([1, 0, 3])
    with pytest.raises(InputError):
        classify_levels([])


def test_level_table():
    stops = [1, 2, 3, 4, 10]
    rows = level_table(stops, classify_levels(stops))
    assert [r["n_hotspots"] for r in rows] == [2, 2, 1]
    assert rows[0]["stop_fraction_hi"] == pytest.approx(0.7)
    assert rows[-1]["stop_fraction_hi"] == pytest.approx(1.0)


def test_classifier_estimator():
    clf = LoubarClassifier().fit([1, 2, 3, 4, 10])
    assert clf.labels_.tolist() == [3, 2, 2, 1, 1]
    assert clf.predict([20, 4, 2.5, 0.5]).tolist() == [1, 1, 2, 3]


def test_classifier_max_levels():
    clf = LoubarClassifier(max_levels=2).fit([1, 2, 3, 4, 10])
    assert clf.labels_.tolist() == [0, 2, 2, 1, 1]


def test_classifier_not_fitted():
    with pytest.raises(NotFittedError):
        LoubarClassifier().predict([1])
