"""Level-by-level generative cascade of hotspot centers.

Lower-level centers are drawn on road cells with probability proportional to
an attraction exerted by the higher-level centers.  Three attraction
mechanisms are available:

``knn``
    sum of ``d**-alpha`` over the K nearest higher-level centers within ``d_cut``
``global``
    the same sum over every higher-level center within ``d_cut``
``random``
    1 when some higher-level center lies within ``d_cut``, else 0
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator

from .exceptions import (ExhaustionError, InconsistentInputError, InputError, PreconditionError,
                         SimulationError, ZeroAttractionError)
from .rng import make_rng, run_seed_sequence
from .spatial_core import CellPointSet, PointIndex, RoadMask, as_xy

logger = logging.getLogger(__name__)

MECHANISMS = ("knn", "global", "random")
DEFAULT_D_RMSE = (250.0, 500.0, 1000.0)


class SingularDistanceError(PreconditionError):
    pass


@dataclass(frozen=True)
class MechanismParams:
    mechanism: str = "knn"
    K: int = 3
    alpha: float = 1.0
    d_cut: float = 1000.0
    x_radius_cells: int = 4

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise InputError(f"mechanism must be one of {MECHANISMS}, got {self.mechanism!r}")
        if int(self.K) < 1:
            raise InputError("K must be a positive integer")
        if not self.alpha > 0:
            raise InputError("alpha must be positive")
        if not self.d_cut > 0:
            raise InputError("d_cut must be positive")
        if int(self.x_radius_cells) < 0:
            raise InputError("x_radius_cells must be >= 0")

    def to_dict(self) -> dict:
        return {"mechanism": self.mechanism, "K": int(self.K), "alpha": float(self.alpha),
                "d_cut": float(self.d_cut), "x_radius_cells": int(self.x_radius_cells)}


# ---------------------------------------------------------------------------
# attraction
# ---------------------------------------------------------------------------


def _cell_xy(cell, cell_size: float) -> np.ndarray:
    r, c = cell
    return np.array([(c + 0.5) * cell_size, (r + 0.5) * cell_size])


def attraction(x, H: CellPointSet, params: MechanismParams) -> float:
    """Attraction of the single cell ``x = (row, col)`` toward the centers in ``H``."""
    if len(H) == 0:
        raise PreconditionError("H must be nonempty")
    p = _cell_xy(x, H.cell_size)
    diff = H.xy - p
    d = np.sort(np.sqrt(diff[:, 0] ** 2 + diff[:, 1] ** 2))
    if d[0] == 0:
        raise SingularDistanceError(f"cell {tuple(x)} coincides with a hotspot center")
    if params.mechanism == "random":
        return 1.0 if d[0] <= params.d_cut else 0.0
    if params.mechanism == "knn":
        d = d[:params.K]
    d = d[d <= params.d_cut]
    return float(np.sum(d ** -params.alpha))


def attraction_field(candidates, H: CellPointSet, params: MechanismParams) -> np.ndarray:
    """Vectorized :func:`attraction` over an (n, 2) array of candidate cells."""
    cand = np.asarray(candidates.cells if isinstance(candidates, CellPointSet) else candidates,
                      dtype=np.int64).reshape(-1, 2)
    if len(H) == 0:
        raise PreconditionError("H must be nonempty")
    if len(cand) == 0:
        return np.zeros(0)
    cs = H.cell_size
    if params.mechanism == "knn":
        k = min(int(params.K), len(H))
        tree = cKDTree(H.xy)
        xy = np.column_stack(((cand[:, 1] + 0.5) * cs, (cand[:, 0] + 0.5) * cs))
        d, _ = tree.query(xy, k=k, distance_upper_bound=params.d_cut * (1 + 1e-9) + 1e-9)
        d = np.asarray(d, dtype=float).reshape(len(cand), k)
        if np.any(d == 0):
            raise SingularDistanceError("a candidate cell coincides with a hotspot center")
        with np.errstate(divide="ignore"):
            terms = np.where(d <= params.d_cut, d ** -params.alpha, 0.0)
        return terms.sum(axis=1)
    return _window_field(cand, H, params)


def _window_field(cand: np.ndarray, H: CellPointSet, params: MechanismParams) -> np.ndarray:
    """Global and random attractions as kernel sums over each center's d_cut window."""
    cs = H.cell_size
    R = int(math.floor(params.d_cut / cs)) + 1
    dr, dc = np.mgrid[-R:R + 1, -R:R + 1]
    dist = np.sqrt((dr * cs) ** 2 + (dc * cs) ** 2)
    inside = dist <= params.d_cut
    if params.mechanism == "global":
        with np.errstate(divide="ignore"):
            kernel = np.where(inside & (dist > 0), dist ** -params.alpha, 0.0)
    else:
        kernel = inside.astype(float)
    hc = H.cells
    r0 = min(cand[:, 0].min(), hc[:, 0].min()) - R
    c0 = min(cand[:, 1].min(), hc[:, 1].min()) - R
    r1 = max(cand[:, 0].max(), hc[:, 0].max()) + R + 1
    c1 = max(cand[:, 1].max(), hc[:, 1].max()) + R + 1
    fld = np.zeros((r1 - r0, c1 - c0))
    span = 2 * R + 1
    for r, c in hc:
        rr, cc = r - R - r0, c - R - c0
        win = fld[rr:rr + span, cc:cc + span]
        if params.mechanism == "global":
            win += kernel
        else:
            np.maximum(win, kernel, out=win)
    occupied = np.zeros(fld.shape, dtype=bool)
    occupied[hc[:, 0] - r0, hc[:, 1] - c0] = True
    if np.any(occupied[cand[:, 0] - r0, cand[:, 1] - c0]):
        raise SingularDistanceError("a candidate cell coincides with a hotspot center")
    return fld[cand[:, 0] - r0, cand[:, 1] - c0]


# ---------------------------------------------------------------------------
# background split and RMSE
# ---------------------------------------------------------------------------


def background_split(levels, d_cut: float) -> list[CellPointSet]:
    """Background sets: all of level 1, then centers farther than ``d_cut`` from every earlier background center."""
    levels = list(levels)
    if len(levels) < 2:
        raise PreconditionError("background_split needs at least 2 levels")
    out = [levels[0]]
    acc = as_xy(levels[0])
    for O in levels[1:]:
        if len(O) == 0:
            out.append(CellPointSet([], O.cell_size))
            continue
        if len(acc):
            far = PointIndex(acc).nearest(O.xy) > d_cut
        else:
            far = np.ones(len(O), dtype=bool)
        B = CellPointSet(O.cells[far], O.cell_size)
        out.append(B)
        acc = np.vstack([acc, B.xy])
    return out


def rmse_compare(O, S, d_rmse: float) -> float:
    """Root-mean-square gap between observed and simulated neighbor counts, evaluated at observed centers."""
    o = as_xy(O)
    if len(o) == 0:
        raise PreconditionError("O must be nonempty")
    co = PointIndex(o).count_within(o, d_rmse)
    cs = PointIndex(as_xy(S)).count_within(o, d_rmse)
    diff = (co - cs).astype(float)
    return float(np.sqrt(np.mean(diff * diff)))


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


class _WeightedPool:
    """Weighted draws with deletions, using per-block partial sums."""

    def __init__(self, weights, block: int = 256):
        w = np.asarray(weights, dtype=float)
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InputError("weights must be finite and nonnegative")
        self.n = len(w)
        self.block = block
        nb = max(1, -(-self.n // block))
        self.w = np.zeros(nb * block)
        self.w[:self.n] = w
        self.alive = np.ones(self.n, dtype=bool)
        self.n_alive = self.n
        self.bs = self.w.reshape(nb, block).sum(axis=1)

    def total(self) -> float:
        return float(self.bs.sum())

    def draw(self, rng: np.random.Generator) -> int:
        cb = np.cumsum(self.bs)
        total = cb[-1]
        u = rng.random() * total
        b = int(np.searchsorted(cb, u, side="right"))
        pos_blocks = np.nonzero(self.bs > 0)[0]
        b = int(pos_blocks[min(np.searchsorted(pos_blocks, b), len(pos_blocks) - 1)])
        base = cb[b] - self.bs[b]
        seg = self.w[b * self.block:(b + 1) * self.block]
        j = int(np.searchsorted(np.cumsum(seg), u - base, side="right"))
        pos = np.nonzero(seg > 0)[0]
        j = int(pos[min(np.searchsorted(pos, j), len(pos) - 1)])
        return b * self.block + j

    def remove(self, idx) -> None:
        idx = np.asarray(idx, dtype=np.int64)
        idx = idx[self.alive[idx]]
        if not len(idx):
            return
        self.alive[idx] = False
        self.n_alive -= len(idx)
        self.w[idx] = 0.0
        blocks = np.unique(idx // self.block)
        self.bs[blocks] = self.w.reshape(-1, self.block)[blocks].sum(axis=1)


def _as_cells(obj) -> np.ndarray:
    if isinstance(obj, CellPointSet):
        return obj.cells
    if isinstance(obj, RoadMask):
        return obj.road_cells
    arr = np.asarray(sorted(obj) if isinstance(obj, (set, frozenset)) else obj, dtype=np.int64)
    return arr.reshape(-1, 2)


def _simulate_level(H_prev: CellPointSet, cand: np.ndarray, n: int, params: MechanismParams, rng):
    """Pick ``n`` cells from ``cand``; returns (picked cells, bool mask of removed candidates)."""
    removed = np.zeros(len(cand), dtype=bool)
    if n == 0:
        return np.empty((0, 2), dtype=np.int64), removed
    if len(cand) == 0:
        raise ExhaustionError(f"no candidate cells left; {n} picks missing", shortfall=n, picked=[])
    pool = _WeightedPool(attraction_field(cand, H_prev, params))
    r0, c0 = cand[:, 0].min(), cand[:, 1].min()
    lookup = np.full((cand[:, 0].max() - r0 + 1, cand[:, 1].max() - c0 + 1), -1, dtype=np.int64)
    lookup[cand[:, 0] - r0, cand[:, 1] - c0] = np.arange(len(cand))
    xr = int(params.x_radius_cells)
    picked = []
    for t in range(n):
        if pool.n_alive == 0:
            raise ExhaustionError(f"candidates exhausted after {t} of {n} picks", shortfall=n - t,
                                  picked=np.asarray(picked, dtype=np.int64).reshape(-1, 2))
        if pool.total() <= 0:
            raise ZeroAttractionError(f"every remaining candidate has zero attraction after {t} of {n} picks",
                                      picked=np.asarray(picked, dtype=np.int64).reshape(-1, 2))
        i = pool.draw(rng)
        r, c = cand[i]
        picked.append((int(r), int(c)))
        rs = slice(max(r - xr - r0, 0), max(r + xr + 1 - r0, 0))
        cs_ = slice(max(c - xr - c0, 0), max(c + xr + 1 - c0, 0))
        win = lookup[rs, cs_]
        hit = win[win >= 0]
        pool.remove(hit)
        removed[hit] = True
        win[win >= 0] = -1
    return np.asarray(picked, dtype=np.int64), removed


def simulate_level(H_prev: CellPointSet, candidates, n: int, params: MechanismParams, seed) -> CellPointSet:
    """Draw ``n`` centers one at a time, each removing its exclusion square from the candidates.

    Returned cells are in pick order.
    """
    if n < 0:
        raise InputError("n must be >= 0")
    cand = np.unique(_as_cells(candidates), axis=0) if len(_as_cells(candidates)) else np.empty((0, 2), np.int64)
    if len(H_prev) and len(cand):
        taken = {tuple(c) for c in H_prev.cells.tolist()}
        if any(tuple(c) in taken for c in cand.tolist()):
            raise InconsistentInputError("candidates must be disjoint from H_prev")
    picked, _ = _simulate_level(H_prev, cand, int(n), params, make_rng(seed))
    return CellPointSet(picked, H_prev.cell_size)


# ---------------------------------------------------------------------------
# cascade
# ---------------------------------------------------------------------------


@dataclass
class LevelRecord:
    level: int
    n_observed: int
    background: CellPointSet
    simulated: CellPointSet
    candidates_before: int
    candidates_after: int

    @property
    def combined(self) -> CellPointSet:
        return self.simulated.union(self.background)

    def to_dict(self) -> dict:
        return {"level": self.level, "n_observed": self.n_observed,
                "background": self.background.to_list(), "simulated": self.simulated.to_list(),
                "candidates_before": self.candidates_before, "candidates_after": self.candidates_after}


@dataclass
class SimulationRun:
    params: MechanismParams
    seed: list[int] | int | None
    levels: list[LevelRecord] = field(default_factory=list)
    complete: bool = True
    error: str | None = None

    def simulated(self, level: int) -> CellPointSet:
        """``H_i``: simulated plus background centers of ``level``."""
        return self.levels[level - 1].combined

    def to_dict(self) -> dict:
        return {"params": self.params.to_dict(), "seed": self.seed, "complete": self.complete,
                "error": self.error, "levels": [lv.to_dict() for lv in self.levels]}


def _exclusion_mask(cells: np.ndarray, shape, radius: int) -> np.ndarray:
    m = np.zeros(shape, dtype=bool)
    for r, c in cells:
        m[max(r - radius, 0):r + radius + 1, max(c - radius, 0):c + radius + 1] = True
    return m


def simulate_cascade(observed, road: RoadMask, params: MechanismParams, seed) -> SimulationRun:
    """Regenerate levels 2..m from level 1.

    Background centers of levels ``i - 1`` and ``i`` (with their exclusion
    squares) leave the candidate pool before level ``i`` is drawn; each
    level then draws ``|O_i| - |B_i|`` centers driven by ``H_{i-1}``.  On
    exhaustion the raised :class:`SimulationError` carries the partial run
    as ``partial_run``.
    """
    observed = list(observed)
    if not observed or len(observed[0]) == 0:
        raise PreconditionError("level 1 must be nonempty")
    for i, O in enumerate(observed, start=1):
        if len(O) and not np.all(road.grid.contains(O.cells[:, 0], O.cells[:, 1])):
            raise InputError(f"level {i} has centers outside the grid")
    cs = road.grid.cell_size
    run = SimulationRun(params=params, seed=_jsonable_seed(seed))
    rng = make_rng(seed)
    shape = road.grid.shape
    if len(observed) == 1:
        run.levels.append(LevelRecord(1, len(observed[0]), observed[0], CellPointSet([], cs), len(road), len(road)))
        return run
    backgrounds = background_split(observed, params.d_cut)
    road_cells = road.road_cells
    alive = np.ones(len(road_cells), dtype=bool)
    xr = int(params.x_radius_cells)
    run.levels.append(LevelRecord(1, len(observed[0]), backgrounds[0], CellPointSet([], cs),
                                  len(road_cells), len(road_cells)))
    H_prev = backgrounds[0]
    for i in range(1, len(observed)):
        B_prev, B_i = backgrounds[i - 1], backgrounds[i]
        block = np.vstack([B_prev.cells, B_i.cells])
        if len(block):
            excl = _exclusion_mask(block, shape, xr)
            alive &= ~excl[road_cells[:, 0], road_cells[:, 1]]
        cand_idx = np.nonzero(alive)[0]
        before = len(cand_idx)
        n = len(observed[i]) - len(B_i)
        try:
            picked, removed = _simulate_level(H_prev, road_cells[cand_idx], n, params, rng)
        except SimulationError as exc:
            part = getattr(exc, "picked", None)
            part = CellPointSet(part if part is not None else [], cs)
            run.levels.append(LevelRecord(i + 1, len(observed[i]), B_i, part, before, before - len(part)))
            run.complete = False
            run.error = f"level {i + 1}: {exc}"
            exc.partial_run = run
            raise
        alive[cand_idx[removed]] = False
        S_i = CellPointSet(picked, cs)
        run.levels.append(LevelRecord(i + 1, len(observed[i]), B_i, S_i, before, int(alive.sum())))
        H_prev = S_i.union(B_i)
    return run


def _jsonable_seed(seed):
    if isinstance(seed, np.random.SeedSequence):
        ent = seed.entropy
        return [int(e) for e in ent] if isinstance(ent, (list, tuple)) else int(ent)
    if isinstance(seed, (int, np.integer)):
        return int(seed)
    return None


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RmseCurve:
    mechanism: str
    level: int
    d_rmse: tuple[float, ...]
    q10: tuple[float, ...]
    q50: tuple[float, ...]
    q90: tuple[float, ...]
    n_runs: int


@dataclass
class ExperimentResult:
    params: MechanismParams
    d_rmse: tuple[float, ...]
    n_sims: int
    master_seed: int
    samples: dict[str, dict[int, np.ndarray]]
    curves: list[RmseCurve]
    failed_runs: dict[str, list[int]]

    def curve(self, mechanism: str, level: int) -> RmseCurve:
        for c in self.curves:
            if c.mechanism == mechanism and c.level == level:
                return c
        raise KeyError((mechanism, level))

    def to_rows(self) -> list[dict]:
        rows = []
        for c in self.curves:
            for j, d in enumerate(c.d_rmse):
                rows.append({"mechanism": c.mechanism, "level": c.level, "d_rmse": d,
                             "q10": c.q10[j], "q50": c.q50[j], "q90": c.q90[j]})
        return rows


def _experiment_run(observed, road, params, d_rmse, seed_seq):
    try:
        run = simulate_cascade(observed, road, params, seed_seq)
    except SimulationError as exc:
        return None, str(exc)
    out = {}
    for i in range(1, len(observed)):
        H = run.simulated(i + 1)
        out[i + 1] = [rmse_compare(observed[i], H, d) for d in d_rmse]
    return out, None


def mechanism_experiment(observed, road: RoadMask, params: MechanismParams | None = None,
                         mechanisms=MECHANISMS, n_sims: int = 100, d_rmse=DEFAULT_D_RMSE,
                         master_seed: int = 0, n_jobs: int = 1) -> ExperimentResult:
    """Repeat the cascade ``n_sims`` times per mechanism and summarize RMSE quantiles.

    Run ``j`` uses ``SeedSequence([master_seed, j])`` for every mechanism.
    Runs that fail are dropped with a warning.
    """
    observed = list(observed)
    if len(observed) < 2:
        raise PreconditionError("mechanism_experiment needs at least 2 levels")
    if n_sims < 1:
        raise InputError("n_sims must be positive")
    params = params or MechanismParams()
    d_rmse = tuple(float(d) for d in d_rmse)
    samples, curves, failed = {}, [], {}
    for mech in mechanisms:
        p = replace(params, mechanism=mech)
        results = Parallel(n_jobs=n_jobs)(
            delayed(_experiment_run)(observed, road, p, d_rmse, run_seed_sequence(master_seed, j))
            for j in range(n_sims))
        bad = [j for j, (res, _) in enumerate(results) if res is None]
        if bad:
            warnings.warn(f"{mech}: {len(bad)} of {n_sims} cascades did not complete and were excluded",
                          RuntimeWarning, stacklevel=2)
        failed[mech] = bad
        good = [res for res, _ in results if res is not None]
        samples[mech] = {}
        for lvl in range(2, len(observed) + 1):
            arr = np.asarray([g[lvl] for g in good], dtype=float).reshape(-1, len(d_rmse))
            samples[mech][lvl] = arr
            if len(arr):
                q = np.quantile(arr, (0.1, 0.5, 0.9), axis=0)
                q[1] = np.maximum(q[1], q[0])
                q[2] = np.maximum(q[2], q[1])
            else:
                q = np.full((3, len(d_rmse)), np.nan)
            curves.append(RmseCurve(mech, lvl, d_rmse, tuple(q[0].tolist()), tuple(q[1].tolist()),
                                    tuple(q[2].tolist()), len(arr)))
    return ExperimentResult(params, d_rmse, n_sims, master_seed, samples, curves, failed)


class CascadeSimulator(BaseEstimator):
    """Estimator front end for the cascade.

    ``fit(levels, road_mask=...)`` records the observed levels and their
    background split; ``sample()`` draws one :class:`SimulationRun`;
    ``score_rmse(run, d_rmse)`` gives per-level RMSE against the observations.
    """

    def __init__(self, mechanism="knn", K=3, alpha=1.0, d_cut=1000.0, x_radius_cells=4, random_state=0):
        self.mechanism = mechanism
        self.K = K
        self.alpha = alpha
        self.d_cut = d_cut
        self.x_radius_cells = x_radius_cells
        self.random_state = random_state

    def _params(self) -> MechanismParams:
        return MechanismParams(self.mechanism, self.K, self.alpha, self.d_cut, self.x_radius_cells)

    def fit(self, X, y=None, road_mask: RoadMask | None = None):
        if road_mask is None:
            raise InputError("CascadeSimulator.fit needs a road_mask")
        self.observed_ = list(X)
        self.road_mask_ = road_mask
        self.params_ = self._params()
        self.background_ = background_split(self.observed_, self.d_cut) if len(self.observed_) > 1 else self.observed_[:1]
        return self

    def sample(self, random_state=None) -> SimulationRun:
        seed = self.random_state if random_state is None else random_state
        return simulate_cascade(self.observed_, self.road_mask_, self.params_, seed)

    def score_rmse(self, run: SimulationRun, d_rmse=DEFAULT_D_RMSE) -> dict[int, list[float]]:
        return {i + 1: [rmse_compare(self.observed_[i], run.simulated(i + 1), d) for d in d_rmse]
                for i in range(1, len(self.observed_))}
