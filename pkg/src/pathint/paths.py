"""Sampled paths, p-variation norms, control functions, and path generators.

A path is a d-dimensional function of time sampled on a strictly increasing
finite grid starting at 0.  All variation quantities are computed over grid
partitions only: the supremum never refines between grid points, so reported
norms are exact for the sampled data and lower bounds for any continuous
extension.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

__all__ = [
    "SamplePath",
    "ControlFunction",
    "p_variation",
    "pvar_control",
    "two_index_variation",
    "variation_table",
    "generate",
    "GENERATOR_KINDS",
    "read_path_csv",
    "write_path_csv",
]


@dataclass(frozen=True)
class SamplePath:
    """A d-dimensional path sampled on a finite time grid.

    ``values[k]`` is the path at ``times[k]``.  The grid must be strictly
    increasing and start at 0; a one-column array is accepted for d = 1.
    Instances are immutable: the arrays are marked read-only.
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.ascontiguousarray(np.asarray(self.times, dtype=float))
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        values = np.ascontiguousarray(values)
        if times.ndim != 1 or times.size < 2:
            raise ValueError("times must be a 1-d array with at least two points")
        if times[0] != 0.0:
            raise ValueError("times must start at 0")
        if np.any(np.diff(times) <= 0.0):
            raise ValueError("times must be strictly increasing")
        if values.ndim != 2 or values.shape[0] != times.shape[0]:
            raise ValueError("values must have one row per time point")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(values))):
            raise ValueError("times and values must be finite")
        times.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def n_points(self) -> int:
        return self.times.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def increment(self, i: int, j: int) -> np.ndarray:
        """Increment values[j] - values[i] for grid indices i <= j."""
        if not (0 <= i <= j < self.n_points):
            raise ValueError(f"need 0 <= i <= j < {self.n_points}, got ({i}, {j})")
        return self.values[j] - self.values[i]

    def index_of(self, t: float) -> int:
        """Grid index of time t; raises if t is not a grid point."""
        k = int(np.searchsorted(self.times, t))
        for j in (k, k - 1, k + 1):
            if 0 <= j < self.n_points and _times_match(self.times[j], t):
                return j
        raise ValueError(f"t={t!r} is not a grid point")


def _times_match(a: float, b: float) -> bool:
    return abs(a - b) <= 1e-12 * max(1.0, abs(a), abs(b))


@dataclass(frozen=True)
class ControlFunction:
    """Superadditive two-index function on a time grid.

    ``table[i, j]`` holds c(times[i], times[j]) for i <= j; entries below the
    diagonal are zero.  Controls vanish on the diagonal and satisfy
    c(s, u) + c(u, t) <= c(s, t) for s <= u <= t.
    """

    times: np.ndarray
    table: np.ndarray

    def __post_init__(self):
        times = np.ascontiguousarray(np.asarray(self.times, dtype=float))
        table = np.ascontiguousarray(np.asarray(self.table, dtype=float))
        if table.shape != (times.size, times.size):
            raise ValueError("table must be square and match times")
        times.setflags(write=False)
        table.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "table", table)

    def value(self, i: int, j: int) -> float:
        if j < i:
            raise ValueError("need i <= j")
        return float(self.table[i, j])

    def superadditivity_defect(self) -> float:
        """Max of c(i,u) + c(u,j) - c(i,j) over grid triples i <= u <= j.

        Non-positive (up to float noise) for a genuine control.
        """
        m = self.times.size
        worst = -math.inf
        for u in range(m):
            left = self.table[: u + 1, u]
            right = self.table[u, u:]
            defect = left[:, None] + right[None, :] - self.table[: u + 1, u:]
            worst = max(worst, float(defect.max()))
        return worst

    def __add__(self, other: "ControlFunction") -> "ControlFunction":
        if other.times.shape != self.times.shape or np.any(other.times != self.times):
            raise ValueError("controls must share the same grid")
        return ControlFunction(self.times, self.table + other.table)


def variation_table(dist_pow: np.ndarray) -> np.ndarray:
    """All-windows p-th power variation of a two-index magnitude.

    ``dist_pow[i, j]`` holds |g(i, j)|^p for i < j.  Returns ``table`` with
    table[i, j] = sup over partitions i = a_0 < ... < a_K = j of
    sum_k dist_pow[a_k, a_{k+1}].  Superadditive by construction since
    partitions of adjacent windows concatenate.  O(m^3).
    """
    dist_pow = np.asarray(dist_pow, dtype=float)
    m = dist_pow.shape[0]
    table = np.zeros((m, m))
    for i in range(m - 1):
        cum = np.zeros(m)
        for j in range(i + 1, m):
            cum[j] = np.max(cum[i:j] + dist_pow[i:j, j])
        table[i, i + 1 :] = cum[i + 1 :]
    return table


def _window_variation_power(dist_pow: np.ndarray) -> float:
    """Single-window version of variation_table: best partition of [0, m-1]."""
    m = dist_pow.shape[0]
    cum = np.zeros(m)
    for j in range(1, m):
        cum[j] = np.max(cum[:j] + dist_pow[:j, j])
    return float(cum[-1])


def _pairwise_norms(values: np.ndarray) -> np.ndarray:
    """Euclidean norm of values[j] - values[i] for all index pairs."""
    diff = values[None, :, :] - values[:, None, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def p_variation(path: SamplePath, p: float, s: float | None = None, t: float | None = None) -> float:
    """p-variation norm of the path over the grid window [s, t].

    The supremum runs over partitions made of grid points only and includes
    both endpoints; the result is the 1/p-th root of the maximal power sum.
    s and t default to the full horizon and must be grid points.
    """
    if p < 1.0:
        raise ValueError(f"p must be >= 1, got {p}")
    i0 = 0 if s is None else path.index_of(s)
    i1 = path.n_points - 1 if t is None else path.index_of(t)
    if i1 < i0:
        raise ValueError("window end precedes window start")
    if i1 == i0:
        return 0.0
    window = path.values[i0 : i1 + 1]
    dist_pow = _pairwise_norms(window) ** p
    return _window_variation_power(dist_pow) ** (1.0 / p)


def pvar_control(path: SamplePath, p: float) -> ControlFunction:
    """Control c(s, t) = (p-variation norm over [s, t])^p on the full grid.

    Dominates |f(t) - f(s)|^p on every window and is superadditive, so the
    p-variation of the path over [s, t] is bounded by c(s, t)^(1/p). O(m^3):
    intended for report-scale grids (a few hundred points).
    """
    if p < 1.0:
        raise ValueError(f"p must be >= 1, got {p}")
    dist_pow = _pairwise_norms(path.values) ** p
    return ControlFunction(path.times, variation_table(dist_pow))


def two_index_variation(norms: np.ndarray, p: float) -> float:
    """p-variation of a two-index function g given |g(i, j)| for all pairs.

    Same partition supremum as p_variation with |f(t_i) - f(t_j)| replaced by
    |g(t_i, t_j)|; used for areas and controlled-path remainders.
    """
    if p < 1.0:
        raise ValueError(f"p must be >= 1, got {p}")
    norms = np.asarray(norms, dtype=float)
    if norms.ndim != 2 or norms.shape[0] != norms.shape[1]:
        raise ValueError("norms must be a square matrix")
    if norms.shape[0] < 2:
        return 0.0
    return _window_variation_power(norms**p) ** (1.0 / p)


# ---------------------------------------------------------------------------
# deterministic generators

_SM64_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM64_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_SM64_MIX2 = np.uint64(0x94D049BB133111EB)

GENERATOR_KINDS = ("linear", "sinusoid", "random_walk", "brownian")


def _splitmix64(seed: int, count: int) -> np.ndarray:
    """First `count` outputs of splitmix64 for `seed`, as uint64.

    Counter form: output k is mix(seed + k * gamma) with arithmetic mod 2^64,
    so the stream is a pure vectorizable function of (seed, k) and is
    bit-identical across platforms.
    """
    idx = np.arange(1, count + 1, dtype=np.uint64)
    z = np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + idx * _SM64_GAMMA
    z = (z ^ (z >> np.uint64(30))) * _SM64_MIX1
    z = (z ^ (z >> np.uint64(27))) * _SM64_MIX2
    return z ^ (z >> np.uint64(31))


def _uniforms_open(seed: int, count: int) -> np.ndarray:
    """Uniform draws in (0, 1], 53-bit resolution."""
    return (( _splitmix64(seed, count) >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53


def _standard_normals(seed: int, count: int) -> np.ndarray:
    """Box-Muller (cosine branch) on consecutive uniform pairs."""
    u = _uniforms_open(seed, 2 * count)
    u1 = u[0::2]
    u2 = u[1::2]
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def _require_params(kind: str, params: Mapping, names: tuple) -> None:
    missing = [n for n in names if n not in params]
    if missing:
        raise ValueError(f"generator '{kind}' missing params: {', '.join(missing)}")


def generate(kind: str, seed: int, params: Mapping) -> SamplePath:
    """Build a deterministic test path; same (kind, seed, params) -> same bytes.

    Kinds and their params (n_steps >= 1, T > 0, d >= 1 always required):

    - ``linear``: slope (default 1.0); values are slope * t in each coordinate.
    - ``sinusoid``: amplitude (default 1.0), cycles (default 1.0), phase_step
      (default 0.0); coordinate i is amplitude * sin(2 pi cycles t / T + i *
      phase_step), shifted to start at 0.
    - ``random_walk``: scale > 0 (required); independent +/-scale steps per
      coordinate from the splitmix64 sign stream.
    - ``brownian``: increments N(0, T / n_steps) per coordinate via Box-Muller
      on the splitmix64 stream.

    The uniform grid is linspace(0, T, n_steps + 1) and values[0] is 0.
    """
    if kind not in GENERATOR_KINDS:
        raise ValueError(f"unknown generator kind '{kind}'")
    _require_params(kind, params, ("n_steps", "T", "d"))
    n_steps = int(params["n_steps"])
    T = float(params["T"])
    d = int(params["d"])
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if T <= 0.0:
        raise ValueError("T must be > 0")
    if d < 1:
        raise ValueError("d must be >= 1")
    times = np.linspace(0.0, T, n_steps + 1)

    if kind == "linear":
        slope = float(params.get("slope", 1.0))
        values = slope * np.repeat(times[:, None], d, axis=1)
    elif kind == "sinusoid":
        amplitude = float(params.get("amplitude", 1.0))
        cycles = float(params.get("cycles", 1.0))
        phase_step = float(params.get("phase_step", 0.0))
        phases = phase_step * np.arange(d)
        raw = amplitude * np.sin(2.0 * np.pi * cycles * times[:, None] / T + phases[None, :])
        values = raw - raw[0]
    elif kind == "random_walk":
        if "scale" not in params:
            raise ValueError("generator 'random_walk' missing params: scale")
        scale = float(params["scale"])
        if scale <= 0.0:
            raise ValueError("scale must be > 0")
        bits = _splitmix64(seed, n_steps * d) >> np.uint64(63)
        signs = 2.0 * bits.astype(np.float64) - 1.0
        steps = scale * signs.reshape(n_steps, d)
        values = np.vstack([np.zeros((1, d)), np.cumsum(steps, axis=0)])
    else:  # brownian
        sigma = math.sqrt(T / n_steps)
        normals = _standard_normals(seed, n_steps * d).reshape(n_steps, d)
        values = np.vstack([np.zeros((1, d)), np.cumsum(sigma * normals, axis=0)])

    return SamplePath(times, values)


# ---------------------------------------------------------------------------
# delimited I/O: header t,x1,...,xd with 17 significant digits

def write_path_csv(path: SamplePath, fp) -> None:
    """Write the path as CSV with header t,x1,...,xd at 17 significant digits."""
    close = False
    if isinstance(fp, (str, bytes)) or hasattr(fp, "__fspath__"):
        fp = open(fp, "w", newline="")
        close = True
    try:
        header = "t," + ",".join(f"x{i + 1}" for i in range(path.d))
        fp.write(header + "\n")
        for k in range(path.n_points):
            row = [f"{path.times[k]:.17g}"] + [f"{v:.17g}" for v in path.values[k]]
            fp.write(",".join(row) + "\n")
    finally:
        if close:
            fp.close()


def read_path_csv(fp) -> SamplePath:
    """Read a path written by write_path_csv."""
    close = False
    if isinstance(fp, (str, bytes)) or hasattr(fp, "__fspath__"):
        fp = open(fp, "r", newline="")
        close = True
    try:
        header = fp.readline().strip()
        cols = header.split(",")
        if not cols or cols[0] != "t" or any(c != f"x{i + 1}" for i, c in enumerate(cols[1:])):
            raise ValueError(f"unexpected path CSV header: {header!r}")
        data = np.loadtxt(fp, delimiter=",", ndmin=2)
    finally:
        if close:
            fp.close()
    if data.shape[1] != len(cols):
        raise ValueError("path CSV row width does not match header")
    return SamplePath(data[:, 0], data[:, 1:])
