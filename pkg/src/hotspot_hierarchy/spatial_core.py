"""Metric grid, event binning, road rasterization and exact neighbor queries.

All geometry lives on a regular lattice of square cells.  Cell ``(row, col)``
has its center at ``x = (col + 0.5) * cell_size`` and
``y = (row + 0.5) * cell_size`` meters east/north of the grid origin (the
south-west corner).  Every distance in the package is measured between cell
centers.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .exceptions import InputError, InsufficientTargetsError, InvalidCoordinateError

logger = logging.getLogger(__name__)

METERS_PER_DEG_LON_EQUATOR = 111320.0
METERS_PER_DEG_LAT = 110540.0

# Pairwise blocks larger than this are evaluated in row chunks.
_CHUNK_ELEMENTS = 2_000_000


@dataclass(frozen=True)
class GridSpec:
    """Analysis lattice anchored at a geographic origin.

    ``ref_latitude`` sets the longitude scale of the equirectangular
    projection and defaults to ``origin_lat``.
    """

    origin_lon: float
    origin_lat: float
    n_rows: int
    n_cols: int
    cell_size: float = 10.0
    ref_latitude: float | None = None

    def __post_init__(self):
        if not (self.cell_size > 0 and math.isfinite(self.cell_size)):
            raise InputError(f"cell_size must be positive, got {self.cell_size}")
        if int(self.n_rows) <= 0 or int(self.n_cols) <= 0:
            raise InputError(f"grid needs positive rows/cols, got {self.n_rows}x{self.n_cols}")
        object.__setattr__(self, "n_rows", int(self.n_rows))
        object.__setattr__(self, "n_cols", int(self.n_cols))
        if self.ref_latitude is None:
            object.__setattr__(self, "ref_latitude", float(self.origin_lat))
        for name in ("origin_lon", "origin_lat", "ref_latitude"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise InvalidCoordinateError(f"{name} must be finite, got {v}")
        if abs(self.origin_lat) >= 90 or abs(self.ref_latitude) >= 90:
            raise InvalidCoordinateError("latitudes must satisfy |lat| < 90")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def meters_per_deg_lon(self) -> float:
        return METERS_PER_DEG_LON_EQUATOR * math.cos(math.radians(self.ref_latitude))

    def cell_center(self, row, col):
        """Center of cell(s) in meters, as ``(x, y)``."""
        row = np.asarray(row)
        col = np.asarray(col)
        return (col + 0.5) * self.cell_size, (row + 0.5) * self.cell_size

    def cell_of(self, x, y):
        """Cell index ``(row, col)`` containing the metric point(s) ``(x, y)``."""
        col = np.floor(np.asarray(x, dtype=float) / self.cell_size).astype(np.int64)
        row = np.floor(np.asarray(y, dtype=float) / self.cell_size).astype(np.int64)
        return row, col

    def contains(self, row, col):
        row = np.asarray(row)
        col = np.asarray(col)
        return (row >= 0) & (row < self.n_rows) & (col >= 0) & (col < self.n_cols)

    def to_dict(self) -> dict:
        return {
            "origin_lon": self.origin_lon,
            "origin_lat": self.origin_lat,
            "n_rows": self.n_rows,
            "n_cols": self.n_cols,
            "cell_size": self.cell_size,
            "ref_latitude": self.ref_latitude,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        # accept the short config spelling as well
        rows = d.get("n_rows", d.get("rows"))
        cols = d.get("n_cols", d.get("cols"))
        origin = d.get("origin")
        lon = d.get("origin_lon", origin[0] if origin else None)
        lat = d.get("origin_lat", origin[1] if origin else None)
        if None in (rows, cols, lon, lat):
            raise InputError(f"incomplete grid spec: {d}")
        return cls(
            origin_lon=float(lon),
            origin_lat=float(lat),
            n_rows=int(rows),
            n_cols=int(cols),
            cell_size=float(d.get("cell_size", 10.0)),
            ref_latitude=d.get("ref_latitude"),
        )


class CellPointSet:
    """Ordered collection of distinct grid cells treated as points.

    Parameters
    ----------
    cells : array-like of shape (n, 2)
        Integer ``(row, col)`` indices.
    cell_size : float
        Cell edge length in meters, used to place the points at cell centers.
    """

    __slots__ = ("_cells", "cell_size", "_xy")

    def __init__(self, cells, cell_size: float = 10.0):
        arr = np.asarray(cells, dtype=np.int64)
        if arr.size == 0:
            arr = np.empty((0, 2), dtype=np.int64)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise InputError(f"cells must have shape (n, 2), got {arr.shape}")
        if len(np.unique(arr, axis=0)) != len(arr):
            raise InputError("CellPointSet cells must be distinct")
        arr = arr.copy()
        arr.setflags(write=False)
        self._cells = arr
        self.cell_size = float(cell_size)
        xy = np.column_stack(((arr[:, 1] + 0.5) * self.cell_size, (arr[:, 0] + 0.5) * self.cell_size))
        xy.setflags(write=False)
        self._xy = xy

    @property
    def cells(self) -> np.ndarray:
        return self._cells

    @property
    def xy(self) -> np.ndarray:
        """Cell centers in meters, shape (n, 2), columns ``(x, y)``."""
        return self._xy

    def __len__(self):
        return len(self._cells)

    def __iter__(self):
        return (tuple(int(v) for v in c) for c in self._cells)

    def __contains__(self, cell):
        r, c = cell
        return bool(np.any((self._cells[:, 0] == r) & (self._cells[:, 1] == c)))

    def __eq__(self, other):
        if not isinstance(other, CellPointSet):
            return NotImplemented
        return self.cell_size == other.cell_size and np.array_equal(self._cells, other._cells)

    def __repr__(self):
        return f"CellPointSet(n={len(self)}, cell_size={self.cell_size})"

    def as_set(self) -> set[tuple[int, int]]:
        return set(self)

    def sorted(self) -> "CellPointSet":
        order = np.lexsort((self._cells[:, 1], self._cells[:, 0]))
        return CellPointSet(self._cells[order], self.cell_size)

    def union(self, other: "CellPointSet") -> "CellPointSet":
        if len(other) == 0:
            return self
        if len(self) == 0:
            return other
        merged = np.unique(np.vstack([self._cells, other._cells]), axis=0)
        return CellPointSet(merged, self.cell_size)

    def to_list(self) -> list[list[int]]:
        return self._cells.tolist()


@dataclass(frozen=True, eq=False)
class DensityRaster:
    """Per-cell event counts on a grid.  ``counts`` is stored read-only."""

    grid: GridSpec
    counts: np.ndarray
    n_out_of_bounds: int = 0
    total: int = field(init=False)

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64, copy=True)
        if counts.shape != self.grid.shape:
            raise InputError(f"counts shape {counts.shape} does not match grid {self.grid.shape}")
        if np.any(counts < 0):
            raise InputError("counts must be nonnegative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "total", int(counts.sum()))

    def scaled(self, factor: int) -> "DensityRaster":
        return DensityRaster(self.grid, self.counts * int(factor), self.n_out_of_bounds)


class RoadMask:
    """Set of road cells on a grid, held both as a boolean raster and a sorted cell list."""

    def __init__(self, grid: GridSpec, road_cells):
        self.grid = grid
        arr = np.asarray(road_cells, dtype=np.int64)
        if arr.size == 0:
            arr = np.empty((0, 2), dtype=np.int64)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise InputError(f"road cells must have shape (n, 2), got {arr.shape}")
        if len(arr) and not np.all(grid.contains(arr[:, 0], arr[:, 1])):
            raise InputError("road cells must lie inside the grid")
        mask = np.zeros(grid.shape, dtype=bool)
        mask[arr[:, 0], arr[:, 1]] = True
        mask.setflags(write=False)
        self.mask = mask
        cells = np.argwhere(mask)
        cells.setflags(write=False)
        self._cells = cells

    @classmethod
    def from_mask(cls, grid: GridSpec, mask) -> "RoadMask":
        return cls(grid, np.argwhere(np.asarray(mask, dtype=bool)))

    @property
    def road_cells(self) -> np.ndarray:
        """Road cells in row-major order, shape (n, 2)."""
        return self._cells

    def __len__(self):
        return len(self._cells)

    def as_point_set(self) -> CellPointSet:
        return CellPointSet(self._cells, self.grid.cell_size)


# ---------------------------------------------------------------------------
# projection and binning
# ---------------------------------------------------------------------------


def project_to_meters(lon, lat, grid: GridSpec):
    """Equirectangular projection about the grid origin.

    Accepts scalars or arrays; returns ``(x, y)`` in meters.
    """
    lon_a = np.asarray(lon, dtype=float)
    lat_a = np.asarray(lat, dtype=float)
    if not (np.all(np.isfinite(lon_a)) and np.all(np.isfinite(lat_a))):
        raise InvalidCoordinateError("coordinates must be finite")
    if np.any(np.abs(lat_a) >= 90):
        raise InvalidCoordinateError("latitude must satisfy |lat| < 90")
    x = (lon_a - grid.origin_lon) * grid.meters_per_deg_lon
    y = (lat_a - grid.origin_lat) * METERS_PER_DEG_LAT
    if x.ndim == 0:
        return float(x), float(y)
    return x, y


def unproject_from_meters(x, y, grid: GridSpec):
    """Inverse of :func:`project_to_meters`."""
    x_a = np.asarray(x, dtype=float)
    y_a = np.asarray(y, dtype=float)
    lon = grid.origin_lon + x_a / grid.meters_per_deg_lon
    lat = grid.origin_lat + y_a / METERS_PER_DEG_LAT
    if lon.ndim == 0:
        return float(lon), float(lat)
    return lon, lat


def bin_points(points, grid: GridSpec) -> DensityRaster:
    """Count (lon, lat) events per grid cell; out-of-bounds events are tallied, not binned."""
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        return DensityRaster(grid, np.zeros(grid.shape, dtype=np.int64), 0)
    pts = pts.reshape(-1, 2)
    x, y = project_to_meters(pts[:, 0], pts[:, 1], grid)
    row, col = grid.cell_of(x, y)
    inside = grid.contains(row, col)
    flat = np.ravel_multi_index((row[inside], col[inside]), grid.shape)
    counts = np.bincount(flat, minlength=grid.n_rows * grid.n_cols).reshape(grid.shape)
    n_out = int((~inside).sum())
    if n_out:
        logger.info("%d of %d points fall outside the grid", n_out, len(pts))
    return DensityRaster(grid, counts, n_out)


def bin_metric_points(xy, grid: GridSpec) -> DensityRaster:
    """Like :func:`bin_points` for points already in grid meters."""
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    row, col = grid.cell_of(xy[:, 0], xy[:, 1])
    inside = grid.contains(row, col)
    flat = np.ravel_multi_index((row[inside], col[inside]), grid.shape)
    counts = np.bincount(flat, minlength=grid.n_rows * grid.n_cols).reshape(grid.shape)
    return DensityRaster(grid, counts, int((~inside).sum()))


# ---------------------------------------------------------------------------
# roads
# ---------------------------------------------------------------------------


def _segment_cells(p0, p1, cell: float) -> np.ndarray:
    """Supercover of a segment: every cell whose closed square it touches."""
    (x0, y0), (x1, y1) = p0, p1
    if x0 > x1:
        x0, y0, x1, y1 = x1, y1, x0, y0
    c_lo = math.ceil(x0 / cell) - 1
    c_hi = math.floor(x1 / cell)
    out = []
    for c in range(c_lo, c_hi + 1):
        xa = max(x0, c * cell)
        xb = min(x1, (c + 1) * cell)
        if xa > xb:
            continue
        if x1 == x0:
            ya, yb = y0, y1
        else:
            t = (y1 - y0) / (x1 - x0)
            ya = y0 + (xa - x0) * t
            yb = y0 + (xb - x0) * t
        lo, hi = min(ya, yb), max(ya, yb)
        r_lo = math.ceil(lo / cell) - 1
        r_hi = math.floor(hi / cell)
        for r in range(r_lo, r_hi + 1):
            out.append((r, c))
    return np.asarray(out, dtype=np.int64).reshape(-1, 2)


def rasterize_metric_segments(segments, grid: GridSpec, buffer_cells: int = 0) -> RoadMask:
    """Rasterize polylines given in grid meters.

    A cell is a road cell when some segment touches a cell within Chebyshev
    distance ``buffer_cells`` of it.
    """
    if buffer_cells < 0:
        raise InputError("buffer_cells must be >= 0")
    mask = np.zeros(grid.shape, dtype=bool)
    for line in segments:
        pts = np.asarray(line, dtype=float).reshape(-1, 2)
        if len(pts) == 1:
            pts = np.vstack([pts, pts])
        for a, b in zip(pts[:-1], pts[1:]):
            cells = _segment_cells(tuple(a), tuple(b), grid.cell_size)
            ok = grid.contains(cells[:, 0], cells[:, 1])
            mask[cells[ok, 0], cells[ok, 1]] = True
    if buffer_cells:
        mask = ndimage.binary_dilation(mask, structure=np.ones((2 * buffer_cells + 1,) * 2, dtype=bool))
    return RoadMask.from_mask(grid, mask)


def rasterize_roads(segments, grid: GridSpec, buffer_cells: int = 0) -> RoadMask:
    """Rasterize road polylines given as sequences of ``(lon, lat)`` vertices."""
    segments = list(segments)
    if not segments:
        logger.warning("empty road segment list; road mask is empty")
        return RoadMask(grid, [])
    projected = []
    for line in segments:
        pts = np.asarray(line, dtype=float).reshape(-1, 2)
        x, y = project_to_meters(pts[:, 0], pts[:, 1], grid)
        projected.append(np.column_stack([x, y]))
    return rasterize_metric_segments(projected, grid, buffer_cells)


# ---------------------------------------------------------------------------
# neighbor queries
# ---------------------------------------------------------------------------


def as_xy(points) -> np.ndarray:
    """Metric coordinates of a CellPointSet or an (n, 2) array / single point."""
    if isinstance(points, CellPointSet):
        return points.xy
    arr = np.asarray(points, dtype=float)
    return arr.reshape(-1, 2)


class PointIndex:
    """Exact k-nearest-neighbor and fixed-radius counting over a static point set."""

    def __init__(self, targets):
        self.xy = np.array(as_xy(targets), dtype=float)
        self.n = len(self.xy)
        self._tree = cKDTree(self.xy) if self.n else None

    def knn(self, xs, k: int) -> np.ndarray:
        """Ascending distances to the ``k`` nearest targets, shape (m, k)."""
        xs = as_xy(xs)
        if k < 1:
            raise InputError("k must be positive")
        if self.n < k:
            raise InsufficientTargetsError(f"need at least {k} targets, have {self.n}")
        d, _ = self._tree.query(xs, k=k)
        return np.asarray(d, dtype=float).reshape(len(xs), k)

    def nearest(self, xs) -> np.ndarray:
        return self.knn(xs, 1)[:, 0]

    def count_within(self, xs, d: float) -> np.ndarray:
        """Number of targets at distance strictly less than ``d`` from each query point."""
        xs = as_xy(xs)
        out = np.zeros(len(xs), dtype=np.int64)
        if self.n == 0 or d <= 0 or len(xs) == 0:
            return out
        step = max(1, _CHUNK_ELEMENTS // self.n)
        tx, ty = self.xy[:, 0], self.xy[:, 1]
        for s in range(0, len(xs), step):
            q = xs[s:s + step]
            dx = q[:, 0, None] - tx[None, :]
            dy = q[:, 1, None] - ty[None, :]
            out[s:s + step] = (np.sqrt(dx * dx + dy * dy) < d).sum(axis=1)
        return out


def knn_distances(x, targets, k: int) -> list[float]:
    """The ``k`` smallest Euclidean distances from ``x`` to ``targets``, ascending."""
    xy = as_xy(targets)
    if len(xy) < k:
        raise InsufficientTargetsError(f"need at least {k} targets, have {len(xy)}")
    return PointIndex(xy).knn(np.asarray(x, dtype=float).reshape(1, 2), k)[0].tolist()


def count_within(x, targets, d: float) -> int:
    """Number of targets strictly closer than ``d`` to ``x``."""
    if d < 0:
        raise InputError("d must be >= 0")
    return int(PointIndex(targets).count_within(np.asarray(x, dtype=float).reshape(1, 2), d)[0])


def chebyshev_window(center: Sequence[int], radius: int, shape: tuple[int, int]):
    """Slices of the (2*radius+1)^2 square around ``center`` clipped to ``shape``."""
    r, c = int(center[0]), int(center[1])
    return (slice(max(r - radius, 0), min(r + radius + 1, shape[0])),
            slice(max(c - radius, 0), min(c + radius + 1, shape[1])))


def cells_in_bounds(cells: Iterable, grid: GridSpec) -> bool:
    arr = np.asarray(list(cells), dtype=np.int64).reshape(-1, 2)
    return bool(np.all(grid.contains(arr[:, 0], arr[:, 1])))
