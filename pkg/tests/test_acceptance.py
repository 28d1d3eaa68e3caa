"""Acceptance criteria 1-8.

Each test carries ``@pytest.mark.acceptance(n, title)``; the terminal summary
prints one PASS/FAIL line per criterion.  Criteria 4-6 analyze the planted
levels of synthetic cities, whose generator is the known ground truth.
"""

import json
import math
import shutil
import time
import warnings

import numpy as np
import pytest

from hotspot_hierarchy import (MechanismParams, PatternConfig, SyntheticCitySpec, background_split,
                               bin_points, classify_levels, count_within, coverage_ratio, detect, inhibit_curve,
                               knn_distances, mechanism_experiment, normalized_density_pairs, pattern_report,
                               rmse_compare, simulate_cascade, simulate_level, synth_city)
from hotspot_hierarchy.cli import main
from hotspot_hierarchy.detection import DetectionParams, _detect
from hotspot_hierarchy.spatial_core import CellPointSet


def detail(record_property, text):
    print(text)
    record_property("detail", text)


# brute force over the full distance matrix, no spatial index

def _dmat(X, Y):
    X, Y = np.asarray(X, float).reshape(-1, 2), np.asarray(Y, float).reshape(-1, 2)
    return np.sqrt((X[:, None, 0] - Y[None, :, 0]) ** 2 + (X[:, None, 1] - Y[None, :, 1]) ** 2)


def _config(rng, i):
    nA, nB = rng.integers(1, 201, size=2)
    if i % 2:
        A = rng.uniform(0, 5000, (nA, 2))
        B = rng.uniform(0, 5000, (nB, 2))
    else:
        # lattice points make exact distance ties with the radius likely
        A = rng.integers(0, 60, (nA, 2)) * 10.0
        B = rng.integers(0, 60, (nB, 2)) * 10.0
    return A, B


@pytest.mark.acceptance(1, "oracle equivalence")
def test_criterion_1_oracle_equivalence(record_property):
    rng = np.random.default_rng(20240101)
    t0 = time.perf_counter()
    checked = 0
    for i in range(100):
        A, B = _config(rng, i)
        d = float(rng.choice([50.0, 100.0, 250.0, rng.uniform(1, 3000)]))
        x = A[0]
        # knn_distances
        k = int(rng.integers(1, len(B) + 1))
        exp = np.sort(_dmat(x, B)[0])[:k]
        got = np.asarray(knn_distances(x, B, k))
        assert np.all(np.abs(got - exp) <= 1e-9 * np.maximum(exp, 1e-300)), i
        # count_within
        assert count_within(x, B, d) == int(np.sum(_dmat(x, B)[0] < d)), i
        # coverage_ratio
        assert coverage_ratio(A, B, d) == float(np.mean(_dmat(B, A).min(axis=1) < d)), i
        # normalized_density_pairs
        same = (_dmat(A, A) < d).sum(axis=1)
        nxt = (_dmat(A, B) < d).sum(axis=1)
        p = normalized_density_pairs(A, B, d)
        assert p.same_level.tolist() == (same / same.max()).tolist(), i
        exp_n = nxt / nxt.max() if nxt.max() > 0 else np.zeros(len(A))
        assert p.next_level.tolist() == exp_n.tolist(), i
        # rmse_compare, O = A and S = B
        diff = (_dmat(A, A) < d).sum(axis=1) - (_dmat(A, B) < d).sum(axis=1)
        exp_r = math.sqrt(float(np.mean(diff.astype(float) ** 2)))
        got_r = rmse_compare(A, B, d)
        assert abs(got_r - exp_r) <= 1e-9 * max(exp_r, 1e-300) or got_r == exp_r, i
        checked += 1
    elapsed = time.perf_counter() - t0
    detail(record_property, f"{checked} configurations x 5 functions, {elapsed:.1f} s")
    assert elapsed < 10


@pytest.mark.acceptance(2, "Loubar correctness")
def test_criterion_2_loubar(record_property):
    assert classify_levels([5, 5, 5, 5]).levels == ((0, 1, 2, 3),)
    stops = [1, 2, 3, 4, 10]
    got = [sorted((stops[i] for i in lvl), reverse=True) for lvl in classify_levels(stops).levels]
    assert got == [[10, 4], [3, 2], [1]]
    rng = np.random.default_rng(7)
    for _ in range(100):
        values = rng.integers(1, 1000, int(rng.integers(1, 80)))
        if rng.random() < 0.3:
            values = values // 100 + 1
        p = classify_levels(values)
        flat = [i for lvl in p.levels for i in lvl]
        assert sorted(flat) == list(range(len(values)))  # disjoint and exhaustive
        for a, b in zip(p.levels, p.levels[1:]):
            assert values[list(a)].min() > values[list(b)].max()
        assert p.thresholds[0] == pytest.approx(1 - values.mean() / values.max(), abs=1e-12)
    detail(record_property, "hand partitions and 100 random inputs")


@pytest.mark.acceptance(3, "detection ground truth")
def test_criterion_3_detection(record_property):
    notes = []
    for seed in (0, 1, 2):
        spec = SyntheticCitySpec(n_rows=2000, n_cols=2000, n_anchors=20, anchor_core_fraction=0.0,
                                 level_multipliers=(), stops_per_level=(400,), noise_stops=200, seed=seed)
        city = synth_city(spec)
        raster = bin_points(city.stops_lonlat(), city.grid)
        t0 = time.perf_counter()
        hotspots, radius = _detect(raster, city.roads, DetectionParams())
        elapsed = time.perf_counter() - t0
        found = {h.center for h in hotspots}
        planted = city.levels[0].as_set()
        recall = len(found & planted) / len(planted)
        precision = len(found & planted) / max(len(found), 1)
        notes.append(f"seed {seed}: recall {recall:.2f} precision {precision:.2f} radius {radius} {elapsed:.1f} s")
        assert recall == 1.0 and precision == 1.0, notes[-1]
        assert abs(radius - spec.hotspot_radius_cells) <= 1, notes[-1]
        assert elapsed < 30, notes[-1]
        # the public entry point returns the same hotspots
        assert detect(raster, city.roads) == hotspots
    detail(record_property, "; ".join(notes))


def _accompany_city(seed):
    return synth_city(SyntheticCitySpec(n_rows=1000, n_cols=1000, accompany_decay=150.0, hotspot_radius_cells=3,
                                        level_multipliers=(3, 2, 1.5), seed=seed))


@pytest.mark.acceptance(4, "accompanying pattern vs null bands")
def test_criterion_4_accompanying(record_property):
    t0 = time.perf_counter()
    city = _accompany_city(0)
    rep = pattern_report(city.levels, city.roads, PatternConfig(master_seed=7, n_runs=100))
    radii = np.asarray(rep.pairs[0].coverage.radii)
    window = (radii >= 100) & (radii <= 1000)
    for pair in rep.pairs:
        knn = np.asarray(pair.knn.values)
        ks = np.asarray(pair.knn.ks)
        cov = np.asarray(pair.coverage.values)
        for model in ("random1", "random2"):
            q10 = np.asarray(pair.bands[model]["knn"].q10)
            assert np.all(knn[ks <= 10] < q10[ks <= 10]), (pair.upper_level, model, "knn")
            q90 = np.asarray(pair.bands[model]["coverage"].q90)
            assert np.all(cov[window] > q90[window]), (pair.upper_level, model, "coverage")
    elapsed = time.perf_counter() - t0
    detail(record_property, f"levels {[len(l) for l in city.levels]}, {len(rep.pairs)} pairs, {elapsed:.1f} s")
    assert elapsed < 120


def _inhibit_spec(seed, inhibit):
    return SyntheticCitySpec(n_rows=800, n_cols=800, anchor_core_sigma=800.0, anchor_core_fraction=1.0,
                             n_anchors=100, level_multipliers=(20,), plant_alpha=1.0, plant_d_cut=1000.0,
                             plant_K=None, accompany_decay=100.0, background_fraction=0.5, hotspot_radius_cells=1,
                             inhibit_radius=1500.0, inhibit_cap=1,
                             inhibition="cap-per-disc" if inhibit else "none", seed=seed)


def _below_diagonal_fraction(levels, d):
    pooled = []
    for p in range(len(levels) - 1):
        curve = inhibit_curve(normalized_density_pairs(levels[p], levels[p + 1], d))
        pooled += [y < x for x, y in curve if x >= 0.6]
    return float(np.mean(pooled))


@pytest.mark.acceptance(5, "inhibiting pattern, discriminative")
def test_criterion_5_inhibiting(record_property):
    inhibit = synth_city(_inhibit_spec(0, True))
    accompany = synth_city(_inhibit_spec(0, False))
    fi = [_below_diagonal_fraction(inhibit.levels, d) for d in (500.0, 1000.0, 2000.0)]
    fa = [_below_diagonal_fraction(accompany.levels, d) for d in (500.0, 1000.0, 2000.0)]
    detail(record_property, f"inhibit arm {np.round(fi, 2).tolist()}, accompany-only arm {np.round(fa, 2).tolist()}")
    assert min(fi) >= 0.8
    assert max(fa) < 0.5


@pytest.mark.acceptance(6, "knn mechanism recovered")
def test_criterion_6_mechanism(record_property):
    city = synth_city(SyntheticCitySpec(n_rows=800, n_cols=800, n_anchors=60, level_multipliers=(5, 4),
                                        hotspot_radius_cells=2, plant_K=3, plant_alpha=1.0, plant_d_cut=1000.0,
                                        seed=0))
    t0 = time.perf_counter()
    res = mechanism_experiment(city.levels, city.roads, MechanismParams(x_radius_cells=2), n_sims=100, master_seed=3)
    elapsed = time.perf_counter() - t0
    margins = []
    for lvl in range(2, len(city.levels) + 1):
        k = np.asarray(res.curve("knn", lvl).q50)
        g = np.asarray(res.curve("global", lvl).q50)
        r = np.asarray(res.curve("random", lvl).q50)
        assert np.all(k < g) and np.all(k < r), lvl
        margins.append(float(np.min(np.minimum(g - k, r - k) / k)))
        assert res.curve("knn", lvl).n_runs == 100
    detail(record_property, f"levels {[len(l) for l in city.levels]}, min relative margin per level "
                            f"{np.round(margins, 2).tolist()}, {elapsed:.0f} s")
    assert elapsed < 600


@pytest.mark.acceptance(7, "simulation contracts")
def test_criterion_7_simulation(record_property):
    city = synth_city(SyntheticCitySpec(n_rows=600, n_cols=600, n_anchors=30, level_multipliers=(3, 2),
                                        hotspot_radius_cells=2, seed=1))
    xr = 2
    complete = 0
    for mech in ("knn", "global", "random"):
        for seed in range(5):
            p = MechanismParams(mech, x_radius_cells=xr)
            run = simulate_cascade(city.levels, city.roads, p, seed)
            assert run.complete
            complete += 1
            B = background_split(city.levels, p.d_cut)
            for i in range(1, len(city.levels)):
                S = run.levels[i].simulated.cells
                assert len(S) == len(city.levels[i]) - len(B[i])
                blocked = np.vstack([B[i - 1].cells, B[i].cells])
                for j, c in enumerate(S):
                    assert np.all(np.max(np.abs(blocked - c), axis=1) > xr)
                    if j:
                        assert np.all(np.max(np.abs(S[:j] - c), axis=1) > xr)
    H = CellPointSet([(0, 0)])
    p = MechanismParams("knn", K=1, alpha=1.0, x_radius_cells=0)
    n = 10000
    first = sum(simulate_level(H, [(0, 1), (0, 3)], 1, p, s).as_set() == {(0, 1)} for s in range(n))
    z = (first / n - 0.75) / math.sqrt(0.75 * 0.25 / n)
    detail(record_property, f"{complete} complete cascades; 3:1 sampler picked first {first / n:.4f} (z = {z:.2f})")
    assert abs(z) <= 3


PIPELINE = {
    "master_seed": 11,
    "output_dir": "out",
    "synth": {"n_rows": 500, "n_cols": 500, "n_anchors": 12, "level_multipliers": [3, 2],
              "hotspot_radius_cells": 2, "stops_per_level": [400, 200, 100]},
    "detection": {"radius_cells": "auto", "radius_search_range": [1, 8], "min_stops": 50},
    "metrics": {"n_runs": 20},
    "simulation": {"n_sims": 8},
}


def _run_pipeline(root, n_jobs):
    root.mkdir(parents=True, exist_ok=True)
    (root / "cfg.json").write_text(json.dumps(dict(PIPELINE, n_jobs=n_jobs)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for stage in ("synth", "detect", "classify", "metrics", "simulate", "report"):
            assert main([stage, str(root / "cfg.json")]) == 0, stage
    files = {}
    for p in sorted((root / "out").iterdir()):
        if p.name.endswith(".manifest.json"):
            m = json.loads(p.read_text())
            m.pop("elapsed_seconds")
            files[p.name] = json.dumps(m, sort_keys=True).encode()
        else:
            files[p.name] = p.read_bytes()
    return files


@pytest.mark.acceptance(8, "determinism")
def test_criterion_8_determinism(record_property, tmp_path):
    a = _run_pipeline(tmp_path / "a", 1)
    b = _run_pipeline(tmp_path / "b", 1)
    c = _run_pipeline(tmp_path / "c", 2)
    kinds = {n.rsplit(".", 1)[-1] for n in a}
    assert {"json", "csv", "svg"} <= kinds
    assert a.keys() == b.keys() == c.keys()
    assert [n for n in a if a[n] != b[n]] == []
    assert [n for n in a if a[n] != c[n]] == []
    shutil.rmtree(tmp_path)
    detail(record_property, f"{len(a)} files identical across two sequential runs and n_jobs=2")
