"""Synthetic cities with planted hotspot hierarchies.

A city is a grid of one-cell-wide streets.  Level-1 anchors are placed on
streets, partly in a dense core; every lower level is drawn from the road
cells with probability proportional to a K-nearest attraction of the level
above it (optionally damped by an exponential decay), mixed with a uniform
share that ignores the level above.  With inhibition
switched on, discs around the densest higher-level centers accept only a
limited number of lower-level centers.  Each center then receives a cloud of
Gaussian-scattered events, all of them on road cells.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .exceptions import InputError
from .rng import make_rng
from .simulation import _WeightedPool
from .spatial_core import CellPointSet, GridSpec, PointIndex, RoadMask, unproject_from_meters


@dataclass(frozen=True)
class SyntheticCitySpec:
    n_rows: int = 600
    n_cols: int = 600
    cell_size: float = 10.0
    origin_lon: float = 114.20
    origin_lat: float = 30.50
    street_spacing_cells: int = 10
    n_anchors: int = 20
    anchor_core_fraction: float = 0.6
    anchor_core_sigma: float = 600.0
    level_multipliers: tuple[float, ...] = ()
    accompany: bool = True
    plant_K: int | None = 3
    plant_alpha: float = 1.0
    plant_d_cut: float = 1000.0
    accompany_decay: float | None = None
    background_fraction: float = 0.0
    inhibition: str = "none"
    inhibit_radius: float = 1000.0
    inhibit_density: float = 0.6
    inhibit_cap: int = 2
    hotspot_radius_cells: int = 4
    stop_sigma: float = 12.0
    core_fraction: float = 0.25
    n_satellites: int = 3
    satellite_fraction: float = 0.08
    stops_per_level: tuple[int, ...] = (400,)
    noise_stops: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.inhibition not in ("none", "cap-per-disc"):
            raise InputError("inhibition must be 'none' or 'cap-per-disc'")
        if self.n_anchors < 1 or self.street_spacing_cells < 1:
            raise InputError("n_anchors and street_spacing_cells must be positive")
        if self.hotspot_radius_cells < 1:
            raise InputError("hotspot_radius_cells must be positive")
        if not 0 <= self.core_fraction <= 1 or not 0 <= self.anchor_core_fraction <= 1:
            raise InputError("fractions must lie in [0, 1]")
        if self.core_fraction + self.n_satellites * self.satellite_fraction > 1:
            raise InputError("core and satellite fractions exceed the stops of a hotspot")
        if self.n_satellites and self.satellite_fraction >= self.core_fraction:
            raise InputError("satellite_fraction must stay below core_fraction so the center dominates")
        if not 0 <= self.background_fraction <= 1:
            raise InputError("background_fraction must lie in [0, 1]")
        if self.plant_K is not None and self.plant_K < 1:
            raise InputError("plant_K must be positive or None")
        if self.plant_alpha < 0 or self.plant_d_cut <= 0:
            raise InputError("plant_alpha must be >= 0 and plant_d_cut positive")
        if self.inhibit_cap < 1 or self.inhibit_radius <= 0:
            raise InputError("inhibit_cap and inhibit_radius must be positive")
        if not self.stops_per_level or min(self.stops_per_level) < 1 or self.noise_stops < 0:
            raise InputError("stops_per_level must be nonempty and positive; noise_stops >= 0")

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.origin_lon, self.origin_lat, self.n_rows, self.n_cols, self.cell_size)

    @property
    def spacing_cells(self) -> int:
        """Minimum Chebyshev gap between planted centers: one more than twice the hotspot radius."""
        return 2 * self.hotspot_radius_cells + 1

    def level_sizes(self) -> list[int]:
        sizes = [self.n_anchors]
        for m in self.level_multipliers:
            sizes.append(max(1, int(round(sizes[-1] * m))))
        return sizes

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticCitySpec":
        d = dict(d)
        for key in ("level_multipliers", "stops_per_level"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["level_multipliers"] = list(self.level_multipliers)
        out["stops_per_level"] = list(self.stops_per_level)
        return out


@dataclass
class SyntheticCity:
    spec: SyntheticCitySpec
    grid: GridSpec
    roads: RoadMask
    levels: list[CellPointSet]
    stops_xy: np.ndarray
    stop_counts: list[list[int]] = field(default_factory=list)
    street_lines: list[np.ndarray] = field(default_factory=list)

    @property
    def centers(self) -> CellPointSet:
        out = self.levels[0]
        for lv in self.levels[1:]:
            out = out.union(lv)
        return out

    def stops_lonlat(self) -> np.ndarray:
        lon, lat = unproject_from_meters(self.stops_xy[:, 0], self.stops_xy[:, 1], self.grid)
        return np.column_stack([lon, lat])

    def ground_truth(self) -> dict:
        hotspots = []
        for lvl, (cells, stops) in enumerate(zip(self.levels, self.stop_counts), start=1):
            for (r, c), s in zip(cells.cells.tolist(), stops):
                lon, lat = unproject_from_meters((c + 0.5) * self.grid.cell_size,
                                                 (r + 0.5) * self.grid.cell_size, self.grid)
                hotspots.append({"row": r, "col": c, "lon": lon, "lat": lat, "level": lvl, "stops": s})
        return {"spec": self.spec.to_dict(), "grid": self.grid.to_dict(), "hotspots": hotspots,
                "n_stops": int(len(self.stops_xy))}


def _street_mask(spec: SyntheticCitySpec) -> np.ndarray:
    k = spec.street_spacing_cells
    off = k // 2
    mask = np.zeros((spec.n_rows, spec.n_cols), dtype=bool)
    mask[off::k, :] = True
    mask[:, off::k] = True
    return mask


def _street_lines(spec: SyntheticCitySpec) -> list[np.ndarray]:
    k = spec.street_spacing_cells
    off = k // 2
    cs = spec.cell_size
    x_end = (spec.n_cols - 0.5) * cs
    y_end = (spec.n_rows - 0.5) * cs
    lines = [np.array([[0.5 * cs, (r + 0.5) * cs], [x_end, (r + 0.5) * cs]]) for r in range(off, spec.n_rows, k)]
    lines += [np.array([[(c + 0.5) * cs, 0.5 * cs], [(c + 0.5) * cs, y_end]]) for c in range(off, spec.n_cols, k)]
    return lines


class _Placer:
    """Sequential placement on road cells with Chebyshev spacing between all centers."""

    def __init__(self, road_cells: np.ndarray, shape, spacing: int, rng):
        self.cells = road_cells
        self.lookup = np.full(shape, -1, dtype=np.int64)
        self.lookup[road_cells[:, 0], road_cells[:, 1]] = np.arange(len(road_cells))
        self.free = np.ones(len(road_cells), dtype=bool)
        self.spacing = spacing
        self.rng = rng

    def block(self, r, c):
        s = self.spacing - 1
        win = self.lookup[max(r - s, 0):r + s + 1, max(c - s, 0):c + s + 1]
        idx = win[win >= 0]
        self.free[idx] = False
        return idx

    def place(self, weights: np.ndarray, n: int, caps=None) -> list[tuple[int, int]]:
        """Draw ``n`` cells with the given weights; ``caps`` = (disc member lists, per-disc limit)."""
        w = np.where(self.free, weights, 0.0)
        pool = _WeightedPool(w)
        counts = None
        if caps is not None:
            discs, limit = caps
            counts = np.zeros(len(discs), dtype=np.int64)
            owners = {}
            for j, members in enumerate(discs):
                for i in members:
                    owners.setdefault(int(i), []).append(j)
        out = []
        for t in range(n):
            if pool.total() <= 0:
                raise InputError(f"synthetic city is infeasible: only {t} of {n} centers could be placed; "
                                 "enlarge the grid or reduce counts/spacing")
            i = pool.draw(self.rng)
            r, c = (int(v) for v in self.cells[i])
            out.append((r, c))
            pool.remove(self.block(r, c))
            if counts is not None:
                for j in owners.get(i, ()):
                    counts[j] += 1
                    if counts[j] >= limit:
                        pool.remove(np.asarray(discs[j], dtype=np.int64))
        return out


def _plant_weights(spec: SyntheticCitySpec, road_xy: np.ndarray, upper: CellPointSet) -> np.ndarray:
    if not spec.accompany:
        return np.ones(len(road_xy))
    k = len(upper) if spec.plant_K is None else min(spec.plant_K, len(upper))
    d, _ = cKDTree(upper.xy).query(road_xy, k=k, distance_upper_bound=spec.plant_d_cut * (1 + 1e-9) + 1e-9)
    d = np.asarray(d, dtype=float).reshape(len(road_xy), k)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where((d <= spec.plant_d_cut) & (d > 0), d ** -spec.plant_alpha, 0.0)
        if spec.accompany_decay is not None:
            terms = terms * np.exp(-np.where(np.isfinite(d), d, 0.0) / spec.accompany_decay)
    w = terms.sum(axis=1)
    if spec.background_fraction > 0:
        # a share of the level ignores the level above and spreads uniformly on roads
        total = w.sum()
        w = (1 - spec.background_fraction) * (w / total if total > 0 else w) \
            + spec.background_fraction / len(w)
    return w


def _ring_road_cells(road_mask: np.ndarray, r: int, c: int, R: int) -> list[tuple[int, int]]:
    n_rows, n_cols = road_mask.shape
    out = []
    for dr in range(-R, R + 1):
        for dc in range(-R, R + 1):
            if max(abs(dr), abs(dc)) < 2:
                continue
            rr, cc = r + dr, c + dc
            if 0 <= rr < n_rows and 0 <= cc < n_cols and road_mask[rr, cc]:
                out.append((dr, dc))
    return out


def _hotspot_events(spec: SyntheticCitySpec, r: int, c: int, n_stops: int, rng,
                    road_mask: np.ndarray) -> list[np.ndarray]:
    """Events of one planted hotspot.

    A share of the events falls inside the center cell, a few smaller
    sub-peaks sit on road cells at Chebyshev distance 2..radius from it, and
    the rest scatter with a Gaussian around the center.
    """
    cs = spec.cell_size
    R = spec.hotspot_radius_cells
    cx, cy = (c + 0.5) * cs, (r + 0.5) * cs
    n_core = int(round(n_stops * spec.core_fraction))
    n_sat = int(round(n_stops * spec.satellite_fraction)) if R >= 2 else 0
    out = [rng.uniform(-0.4 * cs, 0.4 * cs, size=(n_core, 2)) + (cx, cy)]
    used = n_core
    ring_cells = _ring_road_cells(road_mask, r, c, R) if n_sat else []
    n_pick = min(spec.n_satellites, len(ring_cells))
    for j in (rng.choice(len(ring_cells), size=n_pick, replace=False) if n_pick else ()):
        dr, dc = ring_cells[int(j)]
        sx, sy = cx + dc * cs, cy + dr * cs
        out.append(rng.uniform(-0.4 * cs, 0.4 * cs, size=(n_sat, 2)) + (sx, sy))
        used += n_sat
    out.append(_road_gaussian(rng, road_mask, cx, cy, spec.stop_sigma, max(n_stops - used, 0), cs))
    return out


def _road_gaussian(rng, road_mask, cx, cy, sigma, n, cs) -> np.ndarray:
    """``n`` Gaussian points around (cx, cy), redrawn until each falls on a road cell.

    Points leaving the grid are kept (they are dropped later), so the loop
    always terminates: the center cell itself is a road cell.
    """
    n_rows, n_cols = road_mask.shape
    got, need = [], n
    while need > 0:
        p = rng.normal(0.0, sigma, size=(max(2 * need, 16), 2)) + (cx, cy)
        col = np.floor(p[:, 0] / cs).astype(np.int64)
        row = np.floor(p[:, 1] / cs).astype(np.int64)
        inside = (row >= 0) & (row < n_rows) & (col >= 0) & (col < n_cols)
        ok = ~inside
        ok[inside] = road_mask[row[inside], col[inside]]
        p = p[ok][:need]
        got.append(p)
        need -= len(p)
    return np.vstack(got) if got else np.empty((0, 2))


def synth_city(spec: SyntheticCitySpec) -> SyntheticCity:
    rng = make_rng(spec.seed)
    grid = spec.grid
    cs = spec.cell_size
    road = RoadMask.from_mask(grid, _street_mask(spec))
    road_cells = road.road_cells
    if not len(road_cells):
        raise InputError("street layout produced no road cells")
    road_xy = np.column_stack([(road_cells[:, 1] + 0.5) * cs, (road_cells[:, 0] + 0.5) * cs])
    placer = _Placer(road_cells, grid.shape, spec.spacing_cells, rng)

    sizes = spec.level_sizes()
    n_core = int(round(spec.n_anchors * spec.anchor_core_fraction))
    centre = np.array([spec.n_cols * cs / 2, spec.n_rows * cs / 2])
    d2 = ((road_xy - centre) ** 2).sum(axis=1)
    core_w = np.exp(-d2 / (2 * spec.anchor_core_sigma ** 2))
    anchors = placer.place(core_w, n_core) if n_core else []
    anchors += placer.place(np.ones(len(road_cells)), spec.n_anchors - n_core)
    levels = [CellPointSet(sorted(anchors), cs)]

    for n in sizes[1:]:
        upper = levels[-1]
        w = _plant_weights(spec, road_xy, upper)
        caps = None
        if spec.inhibition == "cap-per-disc":
            same = PointIndex(upper).count_within(upper.xy, spec.inhibit_radius).astype(float)
            dense = upper.xy[same / same.max() >= spec.inhibit_density]
            discs = cKDTree(road_xy).query_ball_point(dense, r=spec.inhibit_radius) if len(dense) else []
            caps = ([np.asarray(sorted(m), dtype=np.int64) for m in discs], spec.inhibit_cap)
        placed = placer.place(w, n, caps)
        levels.append(CellPointSet(sorted(placed), cs))

    stops, counts = [], []
    for lvl, cells in enumerate(levels):
        n_stops = spec.stops_per_level[min(lvl, len(spec.stops_per_level) - 1)]
        lvl_counts = []
        for r, c in cells.cells.tolist():
            stops.extend(_hotspot_events(spec, r, c, n_stops, rng, road.mask))
            lvl_counts.append(n_stops)
        counts.append(lvl_counts)
    if spec.noise_stops:
        pick = rng.integers(0, len(road_cells), size=spec.noise_stops)
        jitter = rng.uniform(-0.45 * cs, 0.45 * cs, size=(spec.noise_stops, 2))
        stops.append(road_xy[pick] + jitter)
    stops_xy = np.vstack(stops) if stops else np.empty((0, 2))
    # keep events inside the grid
    ext = np.array([spec.n_cols * cs, spec.n_rows * cs])
    stops_xy = stops_xy[np.all((stops_xy >= 0) & (stops_xy < ext), axis=1)]
    return SyntheticCity(spec, grid, road, levels, stops_xy, counts, _street_lines(spec))


def write_city(city: SyntheticCity, outdir) -> dict[str, Path]:
    """Write ``stops.csv``, ``roads.geojson``, ``grid.json`` and ``truth.json``."""
    from .io import write_geojson_lines, write_grid, write_stops_csv

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {
        "stops": outdir / "stops.csv",
        "roads": outdir / "roads.geojson",
        "grid": outdir / "grid.json",
        "truth": outdir / "truth.json",
    }
    write_stops_csv(paths["stops"], city.stops_lonlat())
    lonlat_lines = []
    for line in city.street_lines:
        lon, lat = unproject_from_meters(line[:, 0], line[:, 1], city.grid)
        lonlat_lines.append(np.column_stack([lon, lat]))
    write_geojson_lines(paths["roads"], lonlat_lines)
    write_grid(paths["grid"], city.grid)
    paths["truth"].write_text(json.dumps(city.ground_truth(), indent=1, sort_keys=True) + "\n")
    return paths
