"""Local-maximum-density hotspot detection on a density raster.

The pipeline has three steps:

1. local maxima of the event count inside a square neighborhood,
2. reassignment of overlapping neighborhood cells to a single center by a
   gravity rule, giving non-overlapping preliminary hotspots,
3. a popularity cut on the number of events per hotspot.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import InconsistentInputError, InputError, NoElbowError, PreconditionError
from .spatial_core import CellPointSet, DensityRaster, RoadMask, GridSpec

logger = logging.getLogger(__name__)

HEAD_FRACTION_LIMIT = 0.4
MIN_HEAD_SIZE = 3
# a set whose largest value is below this multiple of its smallest has no tail to break
HOMOGENEOUS_RATIO = 2.0


@dataclass(frozen=True)
class Hotspot:
    center: tuple[int, int]
    members: tuple[tuple[int, int], ...]
    stops: int
    level: int | None = None

    def with_level(self, level: int | None) -> "Hotspot":
        return replace(self, level=level)


@dataclass(frozen=True)
class DetectionParams:
    """Detection settings.

    ``radius_cells`` and ``min_stops`` accept ``"auto"`` for the elbow rule and
    head/tail breaks respectively.  ``gravity_mass`` is ``"center"`` (count of
    the center cell) or ``"total"`` (events in the center's full square).
    """

    radius_cells: int | str = "auto"
    radius_search_range: tuple[int, int] = (1, 15)
    min_stops: int | str = "auto"
    gravity_exponent: float = 2.0
    gravity_mass: str = "center"

    def __post_init__(self):
        if self.radius_cells != "auto" and int(self.radius_cells) < 1:
            raise InputError("radius_cells must be a positive integer or 'auto'")
        lo, hi = self.radius_search_range
        if self.radius_cells == "auto" and hi < lo:
            raise InputError("radius_search_range is empty")
        if self.min_stops != "auto" and int(self.min_stops) < 1:
            raise InputError("min_stops must be a positive integer or 'auto'")
        if self.gravity_mass not in ("center", "total"):
            raise InputError("gravity_mass must be 'center' or 'total'")
        if self.gravity_exponent <= 0:
            raise InputError("gravity_exponent must be positive")


def _counts(raster) -> np.ndarray:
    return raster.counts if isinstance(raster, DensityRaster) else np.asarray(raster)


def find_local_maxima(raster: DensityRaster, radius_cells: int) -> CellPointSet:
    """Nonzero cells that dominate their ``(2r+1)^2`` square.

    On plateaus only the lexicographically smallest ``(row, col)`` among
    equal-count cells of the neighborhood qualifies.
    """
    if radius_cells < 1:
        raise InputError("radius_cells must be >= 1")
    counts = _counts(raster)
    r = int(radius_cells)
    size = 2 * r + 1
    mx = ndimage.maximum_filter(counts, size=size, mode="constant", cval=0)
    rows, cols = np.nonzero((counts == mx) & (counts > 0))
    vals = counts[rows, cols]
    padded = np.pad(counts, r, mode="constant", constant_values=-1)
    keep = np.ones(len(rows), dtype=bool)
    # offsets that precede (0, 0) in row-major order
    for dr in range(-r, 1):
        for dc in range(-r, r + 1):
            if dr == 0 and dc >= 0:
                break
            idx = np.nonzero(keep)[0]
            if not len(idx):
                break
            tie = padded[rows[idx] + r + dr, cols[idx] + r + dc] == vals[idx]
            keep[idx[tie]] = False
    cell_size = raster.grid.cell_size if isinstance(raster, DensityRaster) else 10.0
    return CellPointSet(np.column_stack([rows[keep], cols[keep]]), cell_size)


def elbow_point(xs, ys) -> int:
    """Index of the point farthest from the chord joining the first and last points.

    The perpendicular distance is proportional to the cross product with the
    chord, so the choice does not depend on axis scaling.  Ties go to the
    smallest index.
    """
    xs = np.asarray(xs, dtype=np.int64)
    ys = np.asarray(ys, dtype=np.int64)
    if len(np.unique(xs)) < 3:
        raise NoElbowError("elbow needs at least 3 distinct radii; set the radius manually")
    if np.all(ys == ys[0]):
        raise NoElbowError("local-maximum count is constant over the search range; set the radius manually")
    dx = int(xs[-1] - xs[0])
    dy = int(ys[-1] - ys[0])
    cross = np.abs((xs - xs[0]) * dy - (ys - ys[0]) * dx)
    if cross.max() == 0:
        raise NoElbowError("local-maximum count is linear in the radius; set the radius manually")
    return int(np.argmax(cross))


def select_radius_elbow(raster: DensityRaster, search_range=(1, 15)) -> int:
    lo, hi = int(search_range[0]), int(search_range[1])
    counts = _counts(raster)
    limit = min(counts.shape) // 2
    if lo < 1 or hi > limit:
        raise InputError(f"radius search range must lie within 1..{limit}, got {lo}..{hi}")
    radii = np.arange(lo, hi + 1)
    m = [len(find_local_maxima(raster, int(r))) for r in radii]
    logger.debug("local maxima per radius: %s", dict(zip(radii.tolist(), m)))
    return int(radii[elbow_point(radii, m)])


def reshape_neighborhoods(centers: CellPointSet, raster: DensityRaster, radius_cells: int,
                          gravity_exponent: float = 2.0, gravity_mass: str = "center") -> list[Hotspot]:
    """Assign every nonzero cell near a center to exactly one center.

    A cell goes to the center with the largest ``mass / distance**exponent``;
    ties go to the nearer center, then to the lexicographically smaller one.
    Center cells always keep themselves.
    """
    counts = _counts(raster)
    cells = np.asarray(centers.cells if isinstance(centers, CellPointSet) else centers, dtype=np.int64)
    if len(cells) == 0:
        raise PreconditionError("reshape_neighborhoods needs at least one center")
    r = int(radius_cells)
    n_rows, n_cols = counts.shape
    win_max = ndimage.maximum_filter(counts, size=2 * r + 1, mode="constant", cval=0)
    c_counts = counts[cells[:, 0], cells[:, 1]]
    bad = (c_counts <= 0) | (c_counts < win_max[cells[:, 0], cells[:, 1]])
    if np.any(bad):
        raise InconsistentInputError(f"center {tuple(cells[np.argmax(bad)])} is not a local maximum at radius {r}")
    if gravity_mass == "center":
        mass = c_counts.astype(float)
    elif gravity_mass == "total":
        box = ndimage.uniform_filter(counts.astype(float), size=2 * r + 1, mode="constant") * (2 * r + 1) ** 2
        mass = np.rint(box[cells[:, 0], cells[:, 1]])
    else:
        raise InputError("gravity_mass must be 'center' or 'total'")

    dr, dc = np.mgrid[-r:r + 1, -r:r + 1]
    dr = dr.ravel()
    dc = dc.ravel()
    d2 = dr * dr + dc * dc
    cand_r = (cells[:, 0, None] + dr[None, :]).ravel()
    cand_c = (cells[:, 1, None] + dc[None, :]).ravel()
    owner = np.repeat(np.arange(len(cells)), len(dr))
    dist2 = np.tile(d2, len(cells))
    ok = (cand_r >= 0) & (cand_r < n_rows) & (cand_c >= 0) & (cand_c < n_cols)
    cand_r, cand_c, owner, dist2 = cand_r[ok], cand_c[ok], owner[ok], dist2[ok]
    nz = counts[cand_r, cand_c] > 0
    cand_r, cand_c, owner, dist2 = cand_r[nz], cand_c[nz], owner[nz], dist2[nz]

    # distances in cell units: the ordering is unchanged by the cell size
    with np.errstate(divide="ignore"):
        if gravity_exponent == 2:
            grav = mass[owner] / dist2
        else:
            grav = mass[owner] / dist2.astype(float) ** (gravity_exponent / 2.0)
    grav[dist2 == 0] = np.inf

    flat = cand_r * n_cols + cand_c
    order = np.lexsort((cells[owner, 1], cells[owner, 0], dist2, -grav, flat))
    flat_sorted = flat[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = flat_sorted[1:] != flat_sorted[:-1]
    win = order[first]

    hotspots = []
    win_owner = owner[win]
    by_owner = np.argsort(win_owner, kind="stable")
    bounds = np.searchsorted(win_owner[by_owner], np.arange(len(cells) + 1))
    for j in range(len(cells)):
        sel = win[by_owner[bounds[j]:bounds[j + 1]]]
        mr, mc = cand_r[sel], cand_c[sel]
        o = np.lexsort((mc, mr))
        members = tuple((int(a), int(b)) for a, b in zip(mr[o], mc[o]))
        stops = int(counts[mr, mc].sum())
        hotspots.append(Hotspot(center=(int(cells[j, 0]), int(cells[j, 1])), members=members, stops=stops))
    return hotspots


def head_tail_threshold(values) -> float:
    """Popularity threshold from recursive head/tail breaks.

    The values are split at their mean and the head (values above the mean)
    is split again while it holds under 40% of the current set and at least
    3 values, and while the current set is not homogeneous (its largest value
    is at least twice its smallest).  The threshold is the mean of the last
    split whose head met the conditions; if the first head fails, it is the
    overall mean.
    """
    current = np.asarray(values, dtype=float)
    if current.size == 0:
        raise PreconditionError("head/tail breaks need at least one value")
    threshold = float(current.mean())
    while True:
        m = float(current.mean())
        head = current[current > m]
        if len(head) >= HEAD_FRACTION_LIMIT * len(current) or len(head) < MIN_HEAD_SIZE:
            break
        threshold = m
        if head.max() < HOMOGENEOUS_RATIO * head.min():
            break
        current = head
    return threshold


def threshold_popular(prelim: list[Hotspot], min_stops="auto") -> list[Hotspot]:
    if not prelim:
        raise PreconditionError("threshold_popular needs at least one preliminary hotspot")
    stops = np.array([h.stops for h in prelim], dtype=float)
    cut = head_tail_threshold(stops) if min_stops == "auto" else float(min_stops)
    kept = [h for h, s in zip(prelim, stops) if s >= cut]
    if not kept:
        warnings.warn(f"no hotspot reaches the popularity threshold {cut:g}", RuntimeWarning, stacklevel=2)
    return kept


def _restrict(raster: DensityRaster, road_mask: RoadMask | None) -> DensityRaster:
    if road_mask is None:
        return raster
    if road_mask.grid.shape != raster.grid.shape:
        raise InputError("road mask and raster grids differ")
    return DensityRaster(raster.grid, np.where(road_mask.mask, raster.counts, 0), raster.n_out_of_bounds)


def detect(raster: DensityRaster, road_mask: RoadMask | None = None,
           params: DetectionParams | None = None) -> list[Hotspot]:
    """Full detection pipeline; returns final hotspots ordered by center.

    With a road mask, off-road cells are zeroed before any step, so centers
    and members are road cells.
    """
    params = params or DetectionParams()
    return _detect(raster, road_mask, params)[0]


def _detect(raster, road_mask, params):
    raster = _restrict(raster, road_mask)
    if raster.total == 0:
        return [], None
    if params.radius_cells == "auto":
        radius = select_radius_elbow(raster, params.radius_search_range)
    else:
        radius = int(params.radius_cells)
    centers = find_local_maxima(raster, radius)
    prelim = reshape_neighborhoods(centers, raster, radius, params.gravity_exponent, params.gravity_mass)
    return threshold_popular(prelim, params.min_stops), radius


class LocalHotspotDetector(BaseEstimator):
    """Estimator wrapper around :func:`detect`.

    Parameters
    ----------
    radius : int or "auto", default="auto"
        Half-width in cells of the square neighborhood.
    radius_search_range : tuple of int, default=(1, 15)
        Inclusive radii examined by the elbow rule.
    min_stops : int or "auto", default="auto"
        Minimum events per final hotspot.
    gravity_exponent : float, default=2.0
    gravity_mass : {"center", "total"}, default="center"

    Attributes
    ----------
    radius_ : int
    hotspots_ : list of Hotspot
    centers_ : CellPointSet
    labels_ : ndarray of shape (n_rows, n_cols)
        Hotspot index per cell, -1 outside every hotspot.
    """

    def __init__(self, radius="auto", radius_search_range=(1, 15), min_stops="auto",
                 gravity_exponent=2.0, gravity_mass="center"):
        self.radius = radius
        self.radius_search_range = radius_search_range
        self.min_stops = min_stops
        self.gravity_exponent = gravity_exponent
        self.gravity_mass = gravity_mass

    def _params(self):
        return DetectionParams(self.radius, tuple(self.radius_search_range), self.min_stops,
                               self.gravity_exponent, self.gravity_mass)

    def fit(self, X, y=None, road_mask: RoadMask | None = None):
        """Detect hotspots in ``X``, a DensityRaster or a 2-D array of counts."""
        if not isinstance(X, DensityRaster):
            arr = np.asarray(X)
            if arr.ndim != 2:
                raise InputError(f"expected a 2-D count array, got shape {arr.shape}")
            X = DensityRaster(GridSpec(0.0, 0.0, arr.shape[0], arr.shape[1]), arr)
        self.hotspots_, self.radius_ = _detect(X, road_mask, self._params())
        cells = [h.center for h in self.hotspots_]
        self.centers_ = CellPointSet(cells, X.grid.cell_size)
        labels = np.full(X.grid.shape, -1, dtype=np.int64)
        for i, h in enumerate(self.hotspots_):
            m = np.asarray(h.members)
            labels[m[:, 0], m[:, 1]] = i
        self.labels_ = labels
        self.n_features_in_ = 2
        return self

    def predict(self, cells):
        """Hotspot index of each ``(row, col)`` cell, -1 where none."""
        check_is_fitted(self, "labels_")
        cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
        out = np.full(len(cells), -1, dtype=np.int64)
        n_rows, n_cols = self.labels_.shape
        ok = (cells[:, 0] >= 0) & (cells[:, 0] < n_rows) & (cells[:, 1] >= 0) & (cells[:, 1] < n_cols)
        out[ok] = self.labels_[cells[ok, 0], cells[ok, 1]]
        return out
