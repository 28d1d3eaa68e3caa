"""Accompanying and inhibiting arrangement metrics between hotspot levels.

Accompanying pattern: mean k-th nearest neighbor distance from a higher level
A to the next lower level B, and the coverage ratio of B around A, both
compared with road-constrained random placements.  Inhibiting pattern:
normalized neighbor counts of each hotspot of A within ``d_count`` in its
own level and in the next lower level.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator

from .exceptions import (InputError, InsufficientRoadCellsError, InsufficientTargetsError,
                         PreconditionError, UndefinedRatioError)
from .spatial_core import CellPointSet, PointIndex, RoadMask, as_xy
from .rng import make_rng, run_seed_sequence

DEFAULT_R_GRID = tuple(float(r) for r in range(0, 2001, 50))
DEFAULT_D_COUNTS = (500.0, 1000.0, 2000.0)
QUANTILES = (0.1, 0.5, 0.9)


@dataclass(frozen=True)
class KnnCurve:
    ks: tuple[int, ...]
    values: tuple[float, ...]


@dataclass(frozen=True)
class CoverageCurve:
    radii: tuple[float, ...]
    values: tuple[float, ...]


@dataclass(frozen=True)
class DensityPairSet:
    same_level: np.ndarray
    next_level: np.ndarray
    d_count: float

    @property
    def pairs(self) -> list[tuple[float, float]]:
        return list(zip(self.same_level.tolist(), self.next_level.tolist()))


@dataclass(frozen=True)
class NullBand:
    grid: tuple[float, ...]
    q10: tuple[float, ...]
    q50: tuple[float, ...]
    q90: tuple[float, ...]
    n_runs: int

    @classmethod
    def from_samples(cls, grid, samples) -> "NullBand":
        s = np.asarray(samples, dtype=float)
        if s.ndim != 2 or s.shape[0] == 0:
            raise InputError("null band needs at least one run")
        q = np.quantile(s, QUANTILES, axis=0)
        # quantile interpolation can break monotonicity by an ulp
        q[1] = np.maximum(q[1], q[0])
        q[2] = np.maximum(q[2], q[1])
        return cls(tuple(float(g) for g in grid), tuple(q[0].tolist()), tuple(q[1].tolist()),
                   tuple(q[2].tolist()), int(s.shape[0]))

    def to_dict(self) -> dict:
        return {"grid": list(self.grid), "q10": list(self.q10), "q50": list(self.q50),
                "q90": list(self.q90), "n_runs": self.n_runs}


# ---------------------------------------------------------------------------
# observed metrics
# ---------------------------------------------------------------------------


def mean_knn_distance(A, B, k: int) -> float:
    """Average over ``x`` in A of the distance to its k-th nearest member of B."""
    return knn_curve(A, B, [k]).values[0]


def knn_curve(A, B, ks) -> KnnCurve:
    ks = [int(k) for k in ks]
    a = as_xy(A)
    if len(a) == 0:
        raise PreconditionError("A must be nonempty")
    b = as_xy(B)
    k_max = max(ks)
    if len(b) < k_max:
        raise InsufficientTargetsError(f"need at least {k_max} points in B, have {len(b)}")
    d = PointIndex(b).knn(a, k_max)
    means = d.mean(axis=0)
    return KnnCurve(tuple(ks), tuple(float(means[k - 1]) for k in ks))


def _nearest_to_A(A, B) -> np.ndarray:
    b = as_xy(B)
    if len(b) == 0:
        raise UndefinedRatioError("coverage ratio is undefined for an empty B")
    a = as_xy(A)
    if len(a) == 0:
        return np.full(len(b), np.inf)
    return PointIndex(a).nearest(b)


def coverage_ratio(A, B, r: float) -> float:
    """Fraction of B strictly closer than ``r`` to its nearest member of A."""
    if r < 0:
        raise InputError("r must be >= 0")
    return float(np.mean(_nearest_to_A(A, B) < r))


def coverage_curve(A, B, radii) -> CoverageCurve:
    dmin = _nearest_to_A(A, B)
    radii = np.asarray(radii, dtype=float)
    vals = (dmin[None, :] < radii[:, None]).mean(axis=1)
    return CoverageCurve(tuple(radii.tolist()), tuple(vals.tolist()))


def normalized_density_pairs(A, B, d_count: float) -> DensityPairSet:
    """Neighbor counts within ``d_count`` of each ``x`` in A, normalized by their maximum over A.

    ``x`` counts itself in its own level.  If no member of A has a B
    neighbor, the next-level components are all zero.
    """
    a = as_xy(A)
    if len(a) == 0:
        raise PreconditionError("A must be nonempty")
    if d_count <= 0:
        raise InputError("d_count must be positive")
    same = PointIndex(a).count_within(a, d_count).astype(float)
    nxt = PointIndex(as_xy(B)).count_within(a, d_count).astype(float)
    same /= same.max()
    m = nxt.max()
    nxt = nxt / m if m > 0 else np.zeros_like(nxt)
    return DensityPairSet(same, nxt, float(d_count))


def inhibit_curve(pairs: DensityPairSet) -> list[tuple[float, float]]:
    """Mean next-level density for each distinct same-level density, ascending."""
    same = np.asarray(pairs.same_level, dtype=float)
    nxt = np.asarray(pairs.next_level, dtype=float)
    if same.size == 0:
        raise PreconditionError("pairs must be nonempty")
    keys, inv = np.unique(same, return_inverse=True)
    sums = np.bincount(inv, weights=nxt)
    cnt = np.bincount(inv)
    return [(float(k), float(s / c)) for k, s, c in zip(keys, sums, cnt)]


# ---------------------------------------------------------------------------
# null models
# ---------------------------------------------------------------------------


def _pool_excluding(road: RoadMask, exclude) -> np.ndarray:
    cells = road.road_cells
    if exclude is None or len(exclude) == 0:
        return cells
    ex = np.asarray(exclude.cells if isinstance(exclude, CellPointSet) else exclude, dtype=np.int64)
    blocked = np.zeros(road.grid.shape, dtype=bool)
    ok = road.grid.contains(ex[:, 0], ex[:, 1])
    blocked[ex[ok, 0], ex[ok, 1]] = True
    return cells[~blocked[cells[:, 0], cells[:, 1]]]


def null_model_random1(A_obs, n_lower: int, road: RoadMask, seed) -> CellPointSet:
    """Uniform draw of ``n_lower`` road cells, excluding the cells of ``A_obs``."""
    pool = _pool_excluding(road, A_obs)
    if len(pool) < n_lower:
        raise InsufficientRoadCellsError(f"need {n_lower} road cells, only {len(pool)} available")
    idx = make_rng(seed).choice(len(pool), size=int(n_lower), replace=False)
    return CellPointSet(pool[np.sort(idx)], road.grid.cell_size)


def null_model_random2(n_upper: int, n_lower: int, road: RoadMask, seed):
    """Disjoint uniform draws of both sets from the road cells."""
    pool = road.road_cells
    n = int(n_upper) + int(n_lower)
    if len(pool) < n:
        raise InsufficientRoadCellsError(f"need {n} road cells, only {len(pool)} available")
    idx = make_rng(seed).choice(len(pool), size=n, replace=False)
    cs = road.grid.cell_size
    return (CellPointSet(pool[np.sort(idx[:n_upper])], cs),
            CellPointSet(pool[np.sort(idx[n_upper:])], cs))


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PatternConfig:
    master_seed: int
    k_max: int = 20
    r_grid: tuple[float, ...] = DEFAULT_R_GRID
    d_counts: tuple[float, ...] = DEFAULT_D_COUNTS
    n_runs: int = 100
    n_jobs: int = 1

    def __post_init__(self):
        if self.master_seed is None:
            raise InputError("master_seed is required")
        if self.k_max < 1 or self.n_runs < 1:
            raise InputError("k_max and n_runs must be positive")

    def to_dict(self) -> dict:
        return {"master_seed": self.master_seed, "k_max": self.k_max, "r_grid": list(self.r_grid),
                "d_counts": list(self.d_counts), "n_runs": self.n_runs}


@dataclass
class PairReport:
    upper_level: int
    lower_level: int
    knn: KnnCurve
    coverage: CoverageCurve
    density_pairs: dict[float, DensityPairSet]
    inhibit: dict[float, list[tuple[float, float]]]
    bands: dict[str, dict[str, NullBand]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "upper_level": self.upper_level,
            "lower_level": self.lower_level,
            "knn": {"k": list(self.knn.ks), "observed": list(self.knn.values)},
            "coverage": {"r": list(self.coverage.radii), "observed": list(self.coverage.values)},
            "inhibit": {
                _fmt_key(d): {
                    "pairs": [list(p) for p in self.density_pairs[d].pairs],
                    "curve": [list(p) for p in curve],
                }
                for d, curve in self.inhibit.items()
            },
            "bands": {m: {s: b.to_dict() for s, b in by.items()} for m, by in self.bands.items()},
        }


def _fmt_key(d: float) -> str:
    return f"{d:g}"


@dataclass
class PatternReport:
    config: PatternConfig
    pairs: list[PairReport]
    seeds: list[dict]

    def to_dict(self) -> dict:
        return {"config": self.config.to_dict(), "seeds": self.seeds,
                "pairs": [p.to_dict() for p in self.pairs]}


def _null_run(A_xy, A_cells, n_lower, road, ks, radii, seed_seq):
    s1, s2 = seed_seq.spawn(2)
    b1 = null_model_random1(A_cells, n_lower, road, s1)
    a2, b2 = null_model_random2(len(A_cells), n_lower, road, s2)
    return (
        np.asarray(knn_curve(A_xy, b1, ks).values),
        np.asarray(coverage_curve(A_xy, b1, radii).values),
        np.asarray(knn_curve(a2, b2, ks).values),
        np.asarray(coverage_curve(a2, b2, radii).values),
    )


def pattern_report(levels, road: RoadMask, config: PatternConfig) -> PatternReport:
    """Observed curves and null bands for every adjacent level pair.

    ``levels`` is a sequence of CellPointSet, level 1 first.  Run ``j`` of
    pair ``p`` draws from ``SeedSequence([master_seed, p, j])``, so results do
    not depend on ``n_jobs``.
    """
    levels = list(levels)
    if len(levels) < 2:
        raise PreconditionError("pattern_report requires at least 2 levels")
    out, seeds = [], []
    for p in range(len(levels) - 1):
        A, B = levels[p], levels[p + 1]
        if len(A) == 0 or len(B) == 0:
            raise PreconditionError(f"levels {p + 1} and {p + 2} must both be nonempty")
        if A.as_set() & B.as_set():
            raise PreconditionError(f"levels {p + 1} and {p + 2} share cells")
        ks = list(range(1, min(config.k_max, len(B)) + 1))
        radii = np.asarray(config.r_grid, dtype=float)
        dens = {float(d): normalized_density_pairs(A, B, d) for d in config.d_counts}
        rep = PairReport(
            upper_level=p + 1, lower_level=p + 2,
            knn=knn_curve(A, B, ks), coverage=coverage_curve(A, B, radii),
            density_pairs=dens, inhibit={d: inhibit_curve(ps) for d, ps in dens.items()},
        )
        seqs = [run_seed_sequence(config.master_seed, p, j) for j in range(config.n_runs)]
        # run j of this pair uses SeedSequence(entropy + [j])
        seeds.append({"pair": p + 1, "entropy": [config.master_seed, p], "runs": config.n_runs})
        runs = Parallel(n_jobs=config.n_jobs)(
            delayed(_null_run)(A.xy, A, len(B), road, ks, radii, s) for s in seqs)
        k1, c1, k2, c2 = (np.vstack(x) for x in zip(*runs))
        rep.bands = {
            "random1": {"knn": NullBand.from_samples(ks, k1), "coverage": NullBand.from_samples(radii, c1)},
            "random2": {"knn": NullBand.from_samples(ks, k2), "coverage": NullBand.from_samples(radii, c2)},
        }
        out.append(rep)
    return PatternReport(config, out, seeds)


class ArrangementAnalyzer(BaseEstimator):
    """Estimator-style front end to :func:`pattern_report`.

    ``fit(levels, road_mask=...)`` stores the report as ``report_``.
    """

    def __init__(self, k_max=20, r_grid=DEFAULT_R_GRID, d_counts=DEFAULT_D_COUNTS, n_runs=100,
                 random_state=0, n_jobs=1):
        self.k_max = k_max
        self.r_grid = r_grid
        self.d_counts = d_counts
        self.n_runs = n_runs
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y=None, road_mask: RoadMask | None = None):
        if road_mask is None:
            raise InputError("ArrangementAnalyzer.fit needs a road_mask")
        cfg = PatternConfig(master_seed=self.random_state, k_max=self.k_max, r_grid=tuple(self.r_grid),
                            d_counts=tuple(self.d_counts), n_runs=self.n_runs, n_jobs=self.n_jobs)
        self.report_ = pattern_report(X, road_mask, cfg)
        return self
