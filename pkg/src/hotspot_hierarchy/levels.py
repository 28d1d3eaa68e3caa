"""Iterative Loubar classification of hotspots into popularity levels."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import InputError


@dataclass(frozen=True)
class LorenzCurve:
    """Cumulative hotspot fraction vs cumulative stop fraction, values ascending."""

    x: np.ndarray
    y: np.ndarray

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.x.tolist(), self.y.tolist()))


@dataclass(frozen=True)
class LevelPartition:
    """``levels[i]`` holds input indices of level ``i + 1``; level 1 is the most popular."""

    levels: tuple[tuple[int, ...], ...]
    thresholds: tuple[float, ...]

    def __len__(self):
        return len(self.levels)

    def labels(self, n: int) -> np.ndarray:
        out = np.zeros(n, dtype=np.int64)
        for lvl, idx in enumerate(self.levels, start=1):
            out[list(idx)] = lvl
        return out


def _check_values(values) -> np.ndarray:
    arr = np.asarray(values)
    if arr.size == 0:
        raise InputError("values must be nonempty")
    if arr.ndim != 1:
        raise InputError("values must be one-dimensional")
    if not np.issubdtype(arr.dtype, np.number) or np.any(arr <= 0):
        raise InputError("values must be positive numbers")
    return arr


def lorenz_curve(values) -> LorenzCurve:
    arr = np.sort(_check_values(values).astype(float))
    n = len(arr)
    cum = np.concatenate([[0.0], np.cumsum(arr)])
    return LorenzCurve(np.arange(n + 1) / n, cum / cum[-1])


def _loubar_fraction(values) -> Fraction:
    arr = _check_values(values)
    ints = [int(v) for v in arr]
    if any(i != v for i, v in zip(ints, arr.tolist())):
        return Fraction(1) - Fraction(float(arr.mean())) / Fraction(float(arr.max()))
    return 1 - Fraction(sum(ints), len(ints) * max(ints))


def loubar_threshold(values) -> float:
    """x-intercept of the Lorenz curve's tangent at (1, 1): ``1 - mean / max``."""
    return float(_loubar_fraction(values))


def classify_levels(stops) -> LevelPartition:
    """Peel off Loubar levels until every input is classified.

    Each round selects entries whose ascending rank fraction ``k / n`` exceeds
    the Loubar threshold of the remaining values; entries tied with the
    smallest selected value are promoted with it.
    """
    arr = _check_values(stops)
    remaining = np.arange(len(arr))
    levels, thresholds = [], []
    while len(remaining):
        vals = arr[remaining]
        x_star = _loubar_fraction(vals)
        thresholds.append(float(x_star))
        n = len(vals)
        order = remaining[np.argsort(vals, kind="stable")]
        if x_star == 0:
            chosen = order
        else:
            # ranks k = 1..n with k / n > x_star
            first_rank = int(np.floor(x_star * n)) + 1
            cut_value = arr[order[first_rank - 1]]
            chosen = remaining[vals >= cut_value]
        levels.append(tuple(sorted(int(i) for i in chosen)))
        remaining = np.setdiff1d(remaining, chosen)
    return LevelPartition(tuple(levels), tuple(thresholds))


def level_table(stops, partition: LevelPartition) -> list[dict]:
    """Per-level summary rows: count, cumulative stop-fraction range, stop range, median."""
    arr = np.asarray(stops, dtype=float)
    total = arr.sum()
    rows = []
    lo = 0.0
    for lvl, idx in enumerate(partition.levels, start=1):
        v = arr[list(idx)]
        hi = lo + v.sum() / total
        rows.append({
            "level": lvl,
            "n_hotspots": len(idx),
            "stop_fraction_lo": lo,
            "stop_fraction_hi": hi,
            "max_stops": float(v.max()),
            "min_stops": float(v.min()),
            "median_stops": float(np.median(v)),
        })
        lo = hi
    return rows


class LoubarClassifier(BaseEstimator):
    """Classify stop counts into Loubar popularity levels.

    ``fit`` learns the partition of the training values; ``predict`` assigns
    new values to the first level whose smallest training value they reach,
    falling back to the last level.

    Parameters
    ----------
    max_levels : int or None, default=None
        If set, ``levels_`` keeps only the first ``max_levels`` levels and
        later entries are labelled 0.
    """

    def __init__(self, max_levels=None):
        self.max_levels = max_levels

    def fit(self, X, y=None):
        values = _check_values(np.asarray(X).ravel())
        self.partition_ = classify_levels(values)
        self.thresholds_ = np.asarray(self.partition_.thresholds)
        self.level_min_ = np.array([values[list(idx)].min() for idx in self.partition_.levels])
        labels = self.partition_.labels(len(values))
        if self.max_levels is not None:
            labels[labels > self.max_levels] = 0
        self.labels_ = labels
        self.n_levels_ = len(self.partition_)
        return self

    def predict(self, X):
        check_is_fitted(self, "level_min_")
        values = np.asarray(X, dtype=float).ravel()
        # level_min_ is strictly decreasing
        idx = np.searchsorted(-self.level_min_, -values, side="left")
        lab = np.minimum(idx, len(self.level_min_) - 1) + 1
        if self.max_levels is not None:
            lab[lab > self.max_levels] = 0
        return lab

    def fit_predict(self, X, y=None):
        return self.fit(X).labels_
