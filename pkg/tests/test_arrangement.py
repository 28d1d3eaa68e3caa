import math

import numpy as np
import pytest
from scipy import stats

import oracles
from hotspot_hierarchy import (ArrangementAnalyzer, CellPointSet, GridSpec, PatternConfig, RoadMask,
                               coverage_curve, coverage_ratio, inhibit_curve, knn_curve, mean_knn_distance,
                               normalized_density_pairs, null_model_random1, null_model_random2, pattern_report)
from hotspot_hierarchy.arrangement import DensityPairSet
from hotspot_hierarchy.exceptions import InsufficientRoadCellsError, PreconditionError, UndefinedRatioError


def pts(a):
    return [tuple(p) for p in np.asarray(a, dtype=float)]


# mean KNN distance

def test_mean_knn_single_pair():
    assert mean_knn_distance([(0, 0)], [(30, 40)], 1) == 50.0


def test_mean_knn_second_neighbor():
    assert mean_knn_distance([(0, 0)], [(30, 40), (60, 80)], 2) == 100.0


@pytest.mark.parametrize("seed", range(5))
def test_knn_curve_matches_sort(seed):
    rng = np.random.default_rng(seed)
    A, B = rng.uniform(0, 2000, (30, 2)), rng.uniform(0, 2000, (40, 2))
    got = knn_curve(A, B, range(1, 11)).values
    exp = [oracles.mean_knn(pts(A), pts(B), k) for k in range(1, 11)]
    np.testing.assert_allclose(got, exp, rtol=1e-12)


# coverage

def test_coverage_zero_radius():
    assert coverage_ratio([(0, 0)], [(0, 0), (5, 5)], 0.0) == 0.0


def test_coverage_beyond_diameter():
    assert coverage_ratio([(0, 0), (100, 0)], [(50, 50), (10, 0)], 1000.0) == 1.0


def test_coverage_empty_b():
    with pytest.raises(UndefinedRatioError):
        coverage_ratio([(0, 0)], [], 10.0)


@pytest.mark.parametrize("seed", range(5))
def test_coverage_matches_scan(seed):
    rng = np.random.default_rng(seed)
    A = rng.integers(0, 100, (25, 2)) * 10.0
    B = rng.integers(0, 100, (35, 2)) * 10.0
    radii = [0.0, 10.0, 50.0, 100.0, 250.0, 500.0]
    got = coverage_curve(A, B, radii).values
    exp = [oracles.coverage(pts(A), pts(B), r) for r in radii]
    assert list(got) == exp


# normalized density pairs

def _two_level_example():
    """Four far-apart regions around one higher-level center each."""
    A, B = [], []
    offsets = [(0, 0), (10000, 0), (0, 10000), (10000, 10000)]
    same = [3, 2, 1, 3]  # higher-level hotspots within d_count, the center included
    lower = [4, 3, 2, 1]
    for (ox, oy), n_a, n_b in zip(offsets, same, lower):
        A.append((ox, oy))
        for j in range(n_a - 1):
            A.append((ox + 100 * math.cos(j), oy + 100 * math.sin(j)))
        for j in range(n_b):
            B.append((ox + 150 * math.cos(0.5 + j), oy + 150 * math.sin(0.5 + j)))
    return A, B


def test_two_level_example_configuration():
    A, B = _two_level_example()
    p = normalized_density_pairs(A, B, 500.0)
    first, fourth = 0, 6
    assert (p.same_level[first], p.next_level[first]) == (1.0, 1.0)
    assert (p.same_level[fourth], p.next_level[fourth]) == (1.0, 0.25)


def test_density_empty_b():
    p = normalized_density_pairs([(0, 0), (10, 0)], [], 100.0)
    assert p.next_level.tolist() == [0.0, 0.0]


@pytest.mark.parametrize("seed", range(5))
def test_density_matches_scan(seed):
    rng = np.random.default_rng(seed)
    A = rng.integers(0, 200, (40, 2)) * 10.0
    B = rng.integers(0, 200, (60, 2)) * 10.0
    for d in (100.0, 300.0, 1000.0):
        p = normalized_density_pairs(A, B, d)
        s, n = oracles.density_pairs(pts(A), pts(B), d)
        assert p.same_level.tolist() == s
        assert p.next_level.tolist() == n


# inhibit curve

def _pairs(xs, ys):
    return DensityPairSet(np.asarray(xs, float), np.asarray(ys, float), 1.0)


def test_inhibit_identical_pairs():
    ((x, y),) = inhibit_curve(_pairs([0.4] * 3, [0.7] * 3))
    assert x == 0.4 and y == pytest.approx(0.7, rel=1e-15)


def test_inhibit_hand_grouping():
    curve = inhibit_curve(_pairs([0.5, 0.5, 1.0], [0.2, 0.4, 0.3]))
    assert curve == [(0.5, pytest.approx(0.3)), (1.0, 0.3)]


def test_inhibit_curve_shape():
    rng = np.random.default_rng(1)
    A, B = rng.uniform(0, 3000, (50, 2)), rng.uniform(0, 3000, (80, 2))
    curve = inhibit_curve(normalized_density_pairs(A, B, 500.0))
    xs = [x for x, _ in curve]
    assert all(a < b for a, b in zip(xs, xs[1:]))
    assert all(0 <= y <= 1 for _, y in curve)


# null models

GRID = GridSpec(0.0, 0.0, 30, 30, 10.0)


def _road(n_cells=None):
    cells = [(r, c) for r in range(30) for c in range(30) if r % 5 == 0 or c % 5 == 0]
    return RoadMask(GRID, cells[:n_cells] if n_cells else cells)


def test_random1_exhaustive_draw():
    road = _road()
    A = CellPointSet(road.road_cells[::7])
    n = len(road) - len(A)
    B = null_model_random1(A, n, road, 0)
    assert B.as_set() == {tuple(c) for c in road.road_cells.tolist()} - A.as_set()


def test_random1_deterministic():
    road = _road()
    A = CellPointSet(road.road_cells[:5])
    assert null_model_random1(A, 20, road, 9) == null_model_random1(A, 20, road, 9)


def test_random1_too_few_cells():
    road = _road(10)
    with pytest.raises(InsufficientRoadCellsError):
        null_model_random1(CellPointSet(road.road_cells[:5]), 6, road, 0)


def assert_uniform(counts):
    """Per-cell 3-sigma check that allows for the number of cells compared, plus a chi-square test."""
    counts = np.asarray(counts)
    n = counts.sum()
    p = 1 / len(counts)
    z = np.abs(counts - n * p) / math.sqrt(n * p * (1 - p))
    # 100 cells: P(3 or more beyond 3 sigma) < 0.3% under uniformity
    assert (z > 3).sum() <= 2
    assert z.max() < 4.5
    assert stats.chisquare(counts).pvalue > 1e-3


def test_random1_uniform_single_draws():
    road = _road(100)
    index = {tuple(c): i for i, c in enumerate(road.road_cells.tolist())}
    counts = np.zeros(100, dtype=int)
    for s in range(10000):
        (cell,) = null_model_random1(None, 1, road, s)
        counts[index[cell]] += 1
    assert_uniform(counts)


def test_random2_partition():
    road = _road()
    A, B = null_model_random2(40, len(road) - 40, road, 3)
    assert not A.as_set() & B.as_set()
    assert A.as_set() | B.as_set() == {tuple(c) for c in road.road_cells.tolist()}


def test_random2_deterministic():
    road = _road()
    assert null_model_random2(5, 9, road, 1) == null_model_random2(5, 9, road, 1)


def test_random2_pooled_uniform():
    road = _road(100)
    index = {tuple(c): i for i, c in enumerate(road.road_cells.tolist())}
    counts = np.zeros(100, dtype=int)
    for s in range(5000):
        A, B = null_model_random2(1, 1, road, s)
        for cell in list(A) + list(B):
            counts[index[cell]] += 1
    assert_uniform(counts)


# report

def _levels():
    road = _road()
    cells = road.road_cells
    A = CellPointSet(cells[::9], 10.0)
    B = CellPointSet([c for i, c in enumerate(cells.tolist()) if i % 9 == 4], 10.0)
    return road, A, B


def test_report_single_run_bands_degenerate():
    road, A, B = _levels()
    rep = pattern_report([A, B], road, PatternConfig(master_seed=0, k_max=5, n_runs=1))
    for by in rep.pairs[0].bands.values():
        for band in by.values():
            assert band.q10 == band.q50 == band.q90


def test_report_rejects_shared_cells():
    road, A, _ = _levels()
    with pytest.raises(PreconditionError):
        pattern_report([A, A], road, PatternConfig(master_seed=0, n_runs=2))


def test_report_needs_two_levels():
    road, A, _ = _levels()
    with pytest.raises(PreconditionError):
        pattern_report([A], road, PatternConfig(master_seed=0))


def test_report_independent_of_n_jobs():
    road, A, B = _levels()
    a = pattern_report([A, B], road, PatternConfig(master_seed=4, k_max=4, n_runs=6, n_jobs=1)).to_dict()
    b = pattern_report([A, B], road, PatternConfig(master_seed=4, k_max=4, n_runs=6, n_jobs=2)).to_dict()
    assert a == b


def test_report_contents():
    road, A, B = _levels()
    rep = pattern_report([A, B], road, PatternConfig(master_seed=2, k_max=3, n_runs=5, d_counts=(50.0,)))
    d = rep.to_dict()
    pair = d["pairs"][0]
    assert pair["knn"]["k"] == [1, 2, 3]
    assert set(pair["bands"]) == {"random1", "random2"}
    assert "50" in pair["inhibit"]
    assert d["seeds"] == [{"pair": 1, "entropy": [2, 0], "runs": 5}]


def test_analyzer_estimator():
    road, A, B = _levels()
    an = ArrangementAnalyzer(k_max=3, n_runs=3, random_state=1).fit([A, B], road_mask=road)
    assert len(an.report_.pairs) == 1
