"""Discrete quadratic variation and covariation along partition ladders.

Conventions: a partition holds from each stop to the next, and the last stop
extends to the horizon, so every curve below includes the partial increment
past the final stop.  This makes the telescoping identity

    S^i_t S^j_t - S^i_0 S^j_0 = sum_k [S^i ds^j + S^j dS^i + dS^i dS^j]

hold exactly at every grid time, not just at stops.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .partitions import PartitionLadder
from .paths import SamplePath

__all__ = [
    "QVLevel",
    "QVLadder",
    "FollmerQVReport",
    "discrete_qv",
    "qv_curves",
    "covariation",
    "covariation_curves",
    "build_qv_ladder",
    "follmer_qv_check",
]


def interval_index(stops: np.ndarray, m: int) -> np.ndarray:
    """For each grid index j, the position k of the last stop <= j."""
    return np.searchsorted(stops, np.arange(m), side="right") - 1


def qv_curves(path: SamplePath, stops: np.ndarray) -> np.ndarray:
    """Per-coordinate discrete quadratic variation at every grid time, (m, d).

    V^i_t = sum_k (S^i_{s_{k+1} ^ t} - S^i_{s_k ^ t})^2 along the given stops,
    including the partial increment from the last stop to t.
    """
    stops = np.asarray(stops, dtype=np.int64)
    values = path.values
    m = path.n_points
    inc = values[stops[1:]] - values[stops[:-1]]
    completed = np.vstack([np.zeros((1, path.d)), np.cumsum(inc * inc, axis=0)])
    idx = interval_index(stops, m)
    partial = values - values[stops[idx]]
    return completed[idx] + partial * partial


def discrete_qv(path: SamplePath, stops: np.ndarray, t: float) -> np.ndarray:
    """Per-coordinate discrete quadratic variation vector at grid time t."""
    return qv_curves(path, stops)[path.index_of(t)]


def covariation_curves(path: SamplePath, stops: np.ndarray) -> np.ndarray:
    """Matrix covariation curve (m, d, d) along the given stops.

    Entry (i, j) at time t is sum_k dS^i dS^j with increments clipped at t;
    the diagonal reproduces qv_curves.
    """
    stops = np.asarray(stops, dtype=np.int64)
    values = path.values
    m = path.n_points
    inc = values[stops[1:]] - values[stops[:-1]]
    outer = np.einsum("ki,kj->kij", inc, inc)
    completed = np.concatenate(
        [np.zeros((1, path.d, path.d)), np.cumsum(outer, axis=0)], axis=0
    )
    idx = interval_index(stops, m)
    partial = values - values[stops[idx]]
    return completed[idx] + np.einsum("ki,kj->kij", partial, partial)


def covariation(path: SamplePath, stops: np.ndarray, i: int, j: int, t: float) -> float:
    """Covariation entry (i, j) at grid time t along the given stops."""
    if not (0 <= i < path.d and 0 <= j < path.d):
        raise ValueError(f"coordinates out of range for d={path.d}")
    return float(covariation_curves(path, stops)[path.index_of(t), i, j])


@dataclass(frozen=True)
class QVLevel:
    threshold: float
    stops: np.ndarray
    cov: np.ndarray  # (m, d, d) covariation curve on the full grid


@dataclass(frozen=True)
class QVLadder:
    """Covariation curves per ladder level plus the finest level as limit proxy."""

    levels: tuple
    times: np.ndarray

    def __len__(self) -> int:
        return len(self.levels)

    def __getitem__(self, i: int) -> QVLevel:
        return self.levels[i]

    @property
    def finest(self) -> QVLevel:
        return self.levels[-1]


def build_qv_ladder(path: SamplePath, ladder: PartitionLadder) -> QVLadder:
    levels = tuple(
        QVLevel(threshold=lv.threshold, stops=lv.stops, cov=covariation_curves(path, lv.stops))
        for lv in ladder.levels
    )
    return QVLadder(levels=levels, times=path.times)


@dataclass(frozen=True)
class FollmerQVReport:
    """Convergence report for the covariation ladder.

    gap_per_level is the uniform distance of each level's covariation curve to
    the finest level's curve (the weak-convergence check reduces to uniform
    convergence of these distribution functions when the limit is continuous).
    tv_per_level is the exact total variation of each level's covariation
    sampled at its own stop points (where the curve is a sum of completed
    terms); tv_bound_per_level is the bound from writing each entry as a
    quarter-difference of the two diagonal curves of S^i + S^j and S^i - S^j.
    """

    gap_per_level: np.ndarray
    tv_per_level: np.ndarray
    tv_bound_per_level: np.ndarray
    passed: bool
    tol: float


def _max_total_variation(cov: np.ndarray, stops: np.ndarray, last: int) -> float:
    """Max over (i, j) of the total variation of cov sampled at the stops."""
    ext = stops if stops[-1] == last else np.append(stops, last)
    diffs = np.abs(np.diff(cov[ext], axis=0))
    return float(diffs.sum(axis=0).max())


def _tv_polarization_bound(path: SamplePath, stops: np.ndarray) -> float:
    """Quarter-sum bound: max over (i,j) of (V[S^i+S^j]_T + V[S^i-S^j]_T) / 4."""
    values = path.values
    stops = np.asarray(stops, dtype=np.int64)
    m = path.n_points
    last = m - 1
    ext = stops if stops[-1] == last else np.append(stops, last)
    inc = values[ext[1:]] - values[ext[:-1]]
    worst = 0.0
    d = path.d
    for i in range(d):
        for j in range(d):
            plus = (inc[:, i] + inc[:, j]) ** 2
            minus = (inc[:, i] - inc[:, j]) ** 2
            worst = max(worst, 0.25 * float(plus.sum() + minus.sum()))
    return worst


def follmer_qv_check(path: SamplePath, ladder: PartitionLadder, tol: float = 1e-9) -> FollmerQVReport:
    """Check convergence of the covariation ladder in the distribution sense.

    Pass requires the uniform gaps to the finest level to be non-increasing
    across levels, except for at most one inversion (finite samples routinely
    show a single small bounce), and every level's exact total variation to
    stay within its polarization bound.  At least 2 levels are required; 3 or
    more make the monotonicity check meaningful.
    """
    if len(ladder) < 2:
        raise ValueError("follmer_qv_check needs at least 2 ladder levels")
    qv = build_qv_ladder(path, ladder)
    finest = qv.finest.cov
    gaps = np.array([float(np.abs(lv.cov - finest).max()) for lv in qv.levels])
    last = path.n_points - 1
    tvs = np.array([_max_total_variation(lv.cov, lv.stops, last) for lv in qv.levels])
    bounds = np.array([_tv_polarization_bound(path, lv.stops) for lv in qv.levels])
    scale = 1.0 + float(np.abs(finest).max())
    inversions = int(np.count_nonzero(np.diff(gaps) > tol * scale))
    gaps_monotone = inversions <= 1
    tv_ok = bool(np.all(tvs <= bounds * (1.0 + tol) + tol))
    return FollmerQVReport(
        gap_per_level=gaps,
        tv_per_level=tvs,
        tv_bound_per_level=bounds,
        passed=gaps_monotone and tv_ok,
        tol=tol,
    )
