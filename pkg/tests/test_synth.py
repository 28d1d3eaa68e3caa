import numpy as np
import pytest

from hotspot_hierarchy import CellPointSet, SyntheticCitySpec, synth_city
from hotspot_hierarchy.exceptions import InputError
from hotspot_hierarchy.spatial_core import PointIndex
from hotspot_hierarchy.synth import _plant_weights, write_city

SMALL = dict(n_rows=300, n_cols=300, n_anchors=8, level_multipliers=(3,), hotspot_radius_cells=2)


def test_centers_on_roads_and_spaced():
    spec = SyntheticCitySpec(**SMALL, seed=1)
    city = synth_city(spec)
    cells = city.centers.cells
    assert len(cells) == sum(spec.level_sizes())
    assert all(city.roads.mask[tuple(c)] for c in cells)
    for i in range(len(cells)):
        gap = np.max(np.abs(cells[i + 1:] - cells[i]), axis=1)
        assert np.all(gap > 2 * spec.hotspot_radius_cells)


def test_level_sizes():
    spec = SyntheticCitySpec(n_anchors=20, level_multipliers=(3, 2, 1.5))
    assert spec.level_sizes() == [20, 60, 120, 180]


def test_events_inside_grid_and_on_roads():
    city = synth_city(SyntheticCitySpec(**SMALL, noise_stops=0, seed=2))
    row, col = city.grid.cell_of(city.stops_xy[:, 0], city.stops_xy[:, 1])
    assert np.all(city.grid.contains(row, col))
    assert np.all(city.roads.mask[row, col])


def test_same_seed_identical_files(tmp_path):
    spec = SyntheticCitySpec(**SMALL, seed=5)
    a = write_city(synth_city(spec), tmp_path / "a")
    b = write_city(synth_city(spec), tmp_path / "b")
    for key in a:
        assert a[key].read_bytes() == b[key].read_bytes()


def test_different_seed_differs():
    a = synth_city(SyntheticCitySpec(**SMALL, seed=5))
    b = synth_city(SyntheticCitySpec(**SMALL, seed=6))
    assert a.centers != b.centers


def test_flat_attraction_limit():
    # alpha = 0 and an unbounded cutoff: every road cell gets the same weight
    spec = SyntheticCitySpec(**SMALL, plant_alpha=0.0, plant_d_cut=1e9, plant_K=3)
    city = synth_city(spec)
    road = city.roads.road_cells
    xy = np.column_stack([(road[:, 1] + 0.5) * 10.0, (road[:, 0] + 0.5) * 10.0])
    w = _plant_weights(spec, xy, city.levels[0])
    off_center = ~np.isin(np.arange(len(road)), [np.flatnonzero((road == c).all(axis=1))[0]
                                                 for c in city.levels[0].cells])
    assert np.ptp(w[off_center]) == 0.0


def test_accompany_concentrates_lower_level():
    kw = dict(SMALL, n_rows=600, n_cols=600, n_anchors=10, level_multipliers=(4,), seed=3)
    near = synth_city(SyntheticCitySpec(**kw, accompany_decay=100.0))
    flat = synth_city(SyntheticCitySpec(**kw, accompany=False))

    def mean_gap(city):
        return PointIndex(city.levels[0]).nearest(city.levels[1].xy).mean()

    assert mean_gap(near) < 0.6 * mean_gap(flat)


def test_inhibition_caps_discs():
    kw = dict(SMALL, n_rows=600, n_cols=600, n_anchors=20, level_multipliers=(3,), seed=4, anchor_core_fraction=1.0,
              anchor_core_sigma=400.0)
    city = synth_city(SyntheticCitySpec(**kw, inhibition="cap-per-disc", inhibit_radius=600.0, inhibit_cap=1,
                                        background_fraction=0.2))
    upper, lower = city.levels
    same = PointIndex(upper).count_within(upper.xy, 600.0)
    dense = upper.xy[same / same.max() >= 0.6]
    per_disc = PointIndex(lower).count_within(dense, 600.0)
    assert per_disc.max() <= 1


def test_infeasible_spec_raises_before_output(tmp_path):
    spec = SyntheticCitySpec(n_rows=40, n_cols=40, n_anchors=500, hotspot_radius_cells=2)
    with pytest.raises(InputError, match="infeasible"):
        write_city(synth_city(spec), tmp_path / "out")
    assert not (tmp_path / "out").exists()


@pytest.mark.parametrize("bad", [
    dict(inhibition="sometimes"), dict(n_anchors=0), dict(core_fraction=1.5), dict(background_fraction=2.0),
    dict(plant_K=0), dict(stops_per_level=()), dict(satellite_fraction=0.5),
])
def test_spec_validation(bad):
    with pytest.raises(InputError):
        SyntheticCitySpec(**bad)


def test_spec_round_trip():
    spec = SyntheticCitySpec(**SMALL, seed=9)
    assert SyntheticCitySpec.from_dict(spec.to_dict()) == spec


def test_ground_truth_lists_every_center():
    city = synth_city(SyntheticCitySpec(**SMALL, seed=1))
    truth = city.ground_truth()
    got = CellPointSet(sorted((h["row"], h["col"]) for h in truth["hotspots"]))
    assert got == city.centers.sorted()
    assert truth["n_stops"] == len(city.stops_xy)
