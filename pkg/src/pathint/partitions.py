"""Crossing-time partition ladders.

A level records the grid indices at which the path has moved by at least a
threshold since the previous stop; detection happens on grid points, so the
first grid index at or after each crossing is recorded.  Levels with strictly
decreasing thresholds form a ladder.  On families whose increments are exact
multiples of the threshold (dyadic random walks) the recorded stops coincide
with the continuous-time crossing times.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .paths import SamplePath

__all__ = [
    "MODES",
    "LadderLevel",
    "PartitionLadder",
    "crossing_times",
    "build_ladder",
    "count_stops",
    "ladder_to_json",
]

MODES = ("per_coordinate_merged", "vector_norm")

_SCAN_CHUNK = 2048


def _scan_crossings_sq(values: np.ndarray, threshold_sq: float) -> np.ndarray:
    """Stop indices for |S_t - S_anchor|^2 >= threshold_sq, starting at 0.

    values is (m, d); squared deviations keep dyadic-exact families exact in
    floating point.  Scans forward in chunks so the cost is O(m) numpy work
    plus O(#stops) python overhead.
    """
    m = values.shape[0]
    stops = [0]
    anchor = 0
    pos = 1
    anchor_row = values[0]
    while pos < m:
        end = min(pos + _SCAN_CHUNK, m)
        block = values[pos:end] - anchor_row
        dev_sq = np.einsum("kd,kd->k", block, block)
        hits = dev_sq >= threshold_sq
        if hits.any():
            j = pos + int(np.argmax(hits))
            stops.append(j)
            anchor = j
            anchor_row = values[j]
            pos = j + 1
        else:
            pos = end
    return np.asarray(stops, dtype=np.int64)


def crossing_times(path: SamplePath, threshold: float, mode: str = "vector_norm") -> np.ndarray:
    """Grid indices of threshold crossings, always starting with index 0.

    ``vector_norm`` restarts whenever the Euclidean norm of the move since the
    last stop reaches the threshold.  ``per_coordinate_merged`` detects
    crossings separately per coordinate and returns the sorted union of the
    per-coordinate stop sets.
    """
    if threshold <= 0.0:
        raise ValueError(f"threshold must be > 0, got {threshold}")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "vector_norm":
        return _scan_crossings_sq(path.values, threshold * threshold)
    merged = np.unique(np.concatenate(per_coordinate_crossings(path, threshold)))
    return merged.astype(np.int64)


def per_coordinate_crossings(path: SamplePath, threshold: float) -> tuple:
    """Per-coordinate crossing index arrays (each starts with 0)."""
    if threshold <= 0.0:
        raise ValueError(f"threshold must be > 0, got {threshold}")
    t_sq = threshold * threshold
    return tuple(
        _scan_crossings_sq(path.values[:, i : i + 1], t_sq) for i in range(path.d)
    )


@dataclass(frozen=True)
class LadderLevel:
    """One partition level: threshold, merged stops, optional per-coordinate stops."""

    threshold: float
    stops: np.ndarray
    stop_times: np.ndarray
    per_coordinate: tuple | None = None

    def __post_init__(self):
        stops = np.ascontiguousarray(np.asarray(self.stops, dtype=np.int64))
        stop_times = np.ascontiguousarray(np.asarray(self.stop_times, dtype=float))
        if stops.size == 0 or stops[0] != 0:
            raise ValueError("stops must start at grid index 0")
        if np.any(np.diff(stops) <= 0):
            raise ValueError("stops must be strictly increasing")
        if stop_times.shape != stops.shape:
            raise ValueError("stop_times must match stops")
        stops.setflags(write=False)
        stop_times.setflags(write=False)
        object.__setattr__(self, "stops", stops)
        object.__setattr__(self, "stop_times", stop_times)

    @property
    def n_stops(self) -> int:
        return int(self.stops.size)


@dataclass(frozen=True)
class PartitionLadder:
    """Crossing-time levels at strictly decreasing thresholds."""

    levels: tuple
    mode: str

    def __len__(self) -> int:
        return len(self.levels)

    def __getitem__(self, i: int) -> LadderLevel:
        return self.levels[i]

    @property
    def thresholds(self) -> np.ndarray:
        return np.array([lv.threshold for lv in self.levels])

    @property
    def finest(self) -> LadderLevel:
        return self.levels[-1]


def build_ladder(path: SamplePath, thresholds, mode: str = "vector_norm") -> PartitionLadder:
    """Build a PartitionLadder for strictly decreasing positive thresholds.

    In ``per_coordinate_merged`` mode each level also keeps the per-coordinate
    stop sets (the merged list is their union).
    """
    thresholds = np.asarray(list(thresholds), dtype=float)
    if thresholds.size == 0:
        raise ValueError("need at least one threshold")
    if np.any(thresholds <= 0.0) or np.any(np.diff(thresholds) >= 0.0):
        raise ValueError("thresholds must be positive and strictly decreasing")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    levels = []
    for c in thresholds:
        if mode == "per_coordinate_merged":
            per_coord = per_coordinate_crossings(path, float(c))
            stops = np.unique(np.concatenate(per_coord)).astype(np.int64)
        else:
            per_coord = None
            stops = crossing_times(path, float(c), mode)
        levels.append(
            LadderLevel(
                threshold=float(c),
                stops=stops,
                stop_times=path.times[stops],
                per_coordinate=per_coord,
            )
        )
    return PartitionLadder(levels=tuple(levels), mode=mode)


def count_stops(ladder: PartitionLadder, level: int, t: float) -> int:
    """Number of non-initial stops with time <= t at the given level.

    Counts k >= 1 with stop time sigma_k <= t (the initial stop at time 0 is
    excluded).  Raises IndexError for an out-of-range level.
    """
    if not (0 <= level < len(ladder)):
        raise IndexError(f"level {level} out of range [0, {len(ladder)})")
    stop_times = ladder[level].stop_times
    return int(np.searchsorted(stop_times[1:], t, side="right"))


def ladder_to_json(ladder: PartitionLadder) -> dict:
    """JSON-ready dict with per-level threshold and stop-time arrays."""
    return {
        "mode": ladder.mode,
        "levels": [
            {
                "threshold": lv.threshold,
                "stop_indices": lv.stops.tolist(),
                "stop_times": lv.stop_times.tolist(),
            }
            for lv in ladder.levels
        ],
    }
