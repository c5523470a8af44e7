"""Pathwise Ito integration along partition ladders and superhedging certificates.

Step integrals are left-point and non-anticipating: the position set at a stop
applies from that stop (exclusive) to the next stop (inclusive), and the last
position is held to the horizon.  Integral curves are reported at every grid
time with increments clipped at t.  Paths live on finite grids, so no cemetery
state at +/-infinity is modeled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .partitions import PartitionLadder
from .paths import SamplePath
from .quadvar import interval_index, qv_curves

__all__ = [
    "StepProcess",
    "SimpleStrategy",
    "Certificate",
    "ItoLadderResult",
    "HoeffdingPreconditionError",
    "step_integral",
    "matrix_left_integral",
    "ito_ladder",
    "hoeffding_strategy",
    "hoeffding_bound_curve",
    "isometry_certificate",
]


class HoeffdingPreconditionError(ValueError):
    """Raised when |h_k . dS| exceeds b_k somewhere on the path."""

    def __init__(self, message: str, interval: int, grid_index: int):
        super().__init__(message)
        self.interval = interval
        self.grid_index = grid_index


@dataclass(frozen=True)
class StepProcess:
    """Piecewise-constant d-vector process: positions[k] held on [stops[k], stops[k+1])."""

    stops: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        stops = np.ascontiguousarray(np.asarray(self.stops, dtype=np.int64))
        positions = np.asarray(self.positions, dtype=float)
        if positions.ndim == 1:
            positions = positions[:, None]
        positions = np.ascontiguousarray(positions)
        if stops.size == 0 or stops[0] != 0:
            raise ValueError("stops must start at grid index 0")
        if np.any(np.diff(stops) <= 0):
            raise ValueError("stops must be strictly increasing")
        if positions.shape[0] != stops.size:
            raise ValueError("need one position per stop")
        stops.setflags(write=False)
        positions.setflags(write=False)
        object.__setattr__(self, "stops", stops)
        object.__setattr__(self, "positions", positions)

    @classmethod
    def from_sampling(cls, path: SamplePath, stops: np.ndarray) -> "StepProcess":
        """Sample the path itself at the stops (left-point values)."""
        stops = np.asarray(stops, dtype=np.int64)
        return cls(stops=stops, positions=path.values[stops])

    @property
    def d(self) -> int:
        return self.positions.shape[1]


def step_integral(process: StepProcess, path: SamplePath) -> np.ndarray:
    """Curve t -> sum_k positions[k] . (S_{s_{k+1} ^ t} - S_{s_k ^ t}), shape (m,).

    Inner-product pairing of d-vector positions with d-vector increments.
    """
    if process.d != path.d:
        raise ValueError(f"position dimension {process.d} != path dimension {path.d}")
    stops = process.stops
    if stops[-1] >= path.n_points:
        raise ValueError("stop index beyond path grid")
    values = path.values
    m = path.n_points
    inc = values[stops[1:]] - values[stops[:-1]]
    per_interval = np.einsum("kd,kd->k", process.positions[:-1], inc)
    completed = np.concatenate([[0.0], np.cumsum(per_interval)])
    idx = interval_index(stops, m)
    partial = np.einsum("kd,kd->k", process.positions[idx], values - values[stops[idx]])
    return completed[idx] + partial


def matrix_left_integral(path: SamplePath, stops: np.ndarray) -> np.ndarray:
    """Matrix curve (m, d, d): entry (i, j) is the left-point sum of S^i dS^j.

    Row index = integrand coordinate, column index = integrator coordinate.
    """
    stops = np.asarray(stops, dtype=np.int64)
    values = path.values
    m = path.n_points
    inc = values[stops[1:]] - values[stops[:-1]]
    outer = np.einsum("ki,kj->kij", values[stops[:-1]], inc)
    completed = np.concatenate(
        [np.zeros((1, path.d, path.d)), np.cumsum(outer, axis=0)], axis=0
    )
    idx = interval_index(stops, m)
    partial = np.einsum("ki,kj->kij", values[stops[idx]], values - values[stops[idx]])
    return completed[idx] + partial


@dataclass(frozen=True)
class ItoLadderResult:
    """Integral curves per level plus uniform residuals and the fitted rate.

    residual_per_level[k] = sup over grid times (and matrix entries) of the
    distance between level k's curve and the finest level's curve.  The rate
    is the least-squares slope of log residual against
    log(threshold_n * sqrt(log(n + 2))) with n the 1-based level position;
    zero residuals and the finest level are excluded from the fit.
    """

    thresholds: np.ndarray
    curves: tuple
    residual_per_level: np.ndarray
    abscissa: np.ndarray
    rate_slope: float
    rate_intercept: float
    rate_rvalue: float


def ito_ladder(path: SamplePath, ladder: PartitionLadder, integrand="coordinate") -> ItoLadderResult:
    """Level-resolved left-point integrals with residual and rate tracking.

    integrand "coordinate" integrates the path against itself, giving matrix
    curves (m, d, d).  Otherwise integrand must be values on the full grid,
    shape (m, d) (or (m,) when d = 1), sampled at each level's stops and
    paired by inner product, giving scalar curves (m,).
    """
    if len(ladder) < 1:
        raise ValueError("ladder must have at least one level")
    curves = []
    for lv in ladder.levels:
        if isinstance(integrand, str):
            if integrand != "coordinate":
                raise ValueError(f"unknown integrand {integrand!r}")
            curves.append(matrix_left_integral(path, lv.stops))
        else:
            f = np.asarray(integrand, dtype=float)
            if f.ndim == 1:
                f = f[:, None]
            if f.shape != (path.n_points, path.d):
                raise ValueError("integrand values must have shape (n_points, d)")
            curves.append(step_integral(StepProcess(lv.stops, f[lv.stops]), path))
    finest = curves[-1]
    residuals = np.array([float(np.abs(c - finest).max()) for c in curves])
    thresholds = ladder.thresholds
    positions = np.arange(1, len(ladder) + 1)
    abscissa = np.log(thresholds * np.sqrt(np.log(positions + 2)))
    keep = (residuals > 0.0) & (positions < len(ladder))
    if keep.sum() >= 2:
        fit = stats.linregress(abscissa[keep], np.log(residuals[keep]))
        slope, intercept, rvalue = float(fit.slope), float(fit.intercept), float(fit.rvalue)
    else:
        slope = intercept = rvalue = math.nan
    return ItoLadderResult(
        thresholds=thresholds,
        curves=tuple(curves),
        residual_per_level=residuals,
        abscissa=abscissa,
        rate_slope=slope,
        rate_intercept=intercept,
        rate_rvalue=rvalue,
    )


# ---------------------------------------------------------------------------
# pathwise Hoeffding superhedging

@dataclass(frozen=True)
class SimpleStrategy:
    """A step-process trading strategy with wealth floor -admissibility."""

    process: StepProcess
    admissibility: float
    wealth: np.ndarray  # gains curve on the full grid

    def __post_init__(self):
        if self.admissibility < 0.0:
            raise ValueError("admissibility must be >= 0")
        wealth = np.ascontiguousarray(np.asarray(self.wealth, dtype=float))
        if wealth.min() < -self.admissibility - 1e-9 * max(1.0, self.admissibility):
            raise ValueError("wealth drops below the admissibility floor")
        wealth.setflags(write=False)
        object.__setattr__(self, "wealth", wealth)


def _interval_sups(path: SamplePath, stops: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Per interval k, sup over t of |h_k . (S_{s_k ^ t, s_{k+1} ^ t})|."""
    values = path.values
    m = path.n_points
    sups = np.empty(stops.size)
    for k in range(stops.size):
        a = int(stops[k])
        e = int(stops[k + 1]) if k + 1 < stops.size else m - 1
        dots = (values[a : e + 1] - values[a]) @ h[k]
        sups[k] = float(np.abs(dots).max()) if e > a else 0.0
    return sups


def _hoeffding_factors(b: np.ndarray, lam: float) -> np.ndarray:
    """exp(-lam^2 b^2 / 2) * sinh(lam * b) / b, with the b -> 0 limit lam."""
    out = np.empty_like(b)
    small = b <= 0.0
    out[~small] = np.exp(-0.5 * lam * lam * b[~small] ** 2) * np.sinh(lam * b[~small]) / b[~small]
    out[small] = lam
    return out


def _check_hoeffding_inputs(path, stops, h, b):
    stops = np.asarray(stops, dtype=np.int64)
    h = np.asarray(h, dtype=float)
    if h.ndim == 1:
        h = h[:, None]
    b = np.asarray(b, dtype=float)
    if h.shape != (stops.size, path.d) or b.shape != (stops.size,):
        raise ValueError("need one h row and one b entry per stop")
    if np.any(b <= 0.0):
        raise ValueError("all b entries must be > 0")
    sups = _interval_sups(path, stops, h)
    bad = sups > b * (1.0 + 1e-12)
    if bad.any():
        k = int(np.argmax(bad))
        raise HoeffdingPreconditionError(
            f"interval {k}: sup |h . dS| = {sups[k]:.6g} exceeds b = {b[k]:.6g}",
            interval=k,
            grid_index=int(stops[k]),
        )
    return stops, h, b


def hoeffding_strategy(path: SamplePath, stops, h, b, lam: float) -> SimpleStrategy:
    """1-admissible strategy whose wealth superhedges the exponential bound.

    Positions follow the compounding rule: the factor at each stop is the
    current value of 1 + wealth times exp(-lam^2 b_k^2 / 2) sinh(lam b_k) / b_k
    applied to the direction h_k.  Requires sup_t |h_k . dS| <= b_k on every
    interval (checked on the path; violation raises HoeffdingPreconditionError)
    and b_k > 0.  The resulting wealth satisfies, at every grid time,

        1 + wealth_t >= exp(lam * sum_k h_k . dS(t) - lam^2/2 * sum_{k<=N_t} b_k^2)

    which is verified by hoeffding_bound_curve in tests and certificates.
    """
    stops, h, b = _check_hoeffding_inputs(path, stops, h, b)
    factors = _hoeffding_factors(b, lam)
    values = path.values
    m = path.n_points
    wealth = np.empty(m)
    positions = np.empty_like(h)
    w = 0.0
    for k in range(stops.size):
        a = int(stops[k])
        e = int(stops[k + 1]) if k + 1 < stops.size else m - 1
        pos = (1.0 + w) * factors[k] * h[k]
        positions[k] = pos
        seg = (values[a : e + 1] - values[a]) @ pos
        wealth[a : e + 1] = w + seg
        w = wealth[e]
    return SimpleStrategy(
        process=StepProcess(stops=stops, positions=positions),
        admissibility=1.0,
        wealth=wealth,
    )


def hoeffding_bound_curve(path: SamplePath, stops, h, b, lam: float) -> np.ndarray:
    """Exponential lower bound exp(lam * G_t - lam^2/2 * sum_{k <= N_t} b_k^2).

    G_t is the step integral of the h positions and N_t counts stops up to t
    inclusive; the sum of b^2 includes the interval containing t.
    """
    stops, h, b = _check_hoeffding_inputs(path, stops, h, b)
    g = step_integral(StepProcess(stops, h), path)
    idx = interval_index(stops, path.n_points)
    cum_b2 = np.cumsum(b * b)[idx]
    return np.exp(lam * g - 0.5 * lam * lam * cum_b2)


# ---------------------------------------------------------------------------
# model-free isometry certificate

@dataclass(frozen=True)
class Certificate:
    """Constructive price-bound certificate for a bounded step integrand.

    verdict is "pass" when the averaged exponential wealth reaches the target
    after the integral's sup crosses the trigger, "vacuous pass" when the
    trigger never fires on this path, "not applicable" when the preconditions
    (|F| <= a, finest quadratic variation <= c) fail, and "fail" otherwise.
    Every recorded wealth curve dominates its exponential bound pointwise.
    """

    lam_grid: tuple
    verdict: str
    price_bound: float
    trigger_level: float
    sup_integral: float
    target: float
    best_average: float
    a: float
    b: float
    c: float
    wealth_curves: tuple = field(repr=False, default=())
    bound_curves: tuple = field(repr=False, default=())


def isometry_certificate(
    F: StepProcess,
    path: SamplePath,
    ladder: PartitionLadder,
    a: float,
    b: float,
    c: float,
    tol: float = 1e-9,
) -> Certificate:
    """Check the two-sided exponential superhedge for the integral of F.

    With lam* = b / (a sqrt(c) d), builds the Hoeffding strategies for +/-lam*
    on the merge of the finest ladder stops with F's stops, F sampled at the
    merged stops.  If sup_t |(F.S)_t| >= a b sqrt(c), the average of the two
    exponential wealth processes must reach exp(b^2 / (2 d)) / 2 at some grid
    time.  The certified price bound for the corresponding claim is
    2 exp(-b^2 / (2 d)).
    """
    if a <= 0.0 or b <= 0.0 or c <= 0.0:
        raise ValueError("a, b, c must be > 0")
    d = path.d
    price_bound = 2.0 * math.exp(-b * b / (2.0 * d))
    trigger = a * b * math.sqrt(c)
    lam = b / (a * math.sqrt(c) * d)
    try:
        target = 0.5 * math.exp(b * b / (2.0 * d))
    except OverflowError:
        target = math.inf

    forward = step_integral(F, path)
    sup_integral = float(np.abs(forward).max())

    sup_f = float(np.sqrt(np.einsum("kd,kd->k", F.positions, F.positions)).max())
    qv_total = float(qv_curves(path, ladder.finest.stops)[-1].sum())
    if sup_f > a * (1.0 + 1e-12) or qv_total > c * (1.0 + 1e-12):
        return Certificate(
            lam_grid=(lam, -lam),
            verdict="not applicable",
            price_bound=price_bound,
            trigger_level=trigger,
            sup_integral=sup_integral,
            target=target,
            best_average=math.nan,
            a=a,
            b=b,
            c=c,
        )

    merged = np.unique(np.concatenate([ladder.finest.stops, F.stops])).astype(np.int64)
    f_idx = np.searchsorted(F.stops, merged, side="right") - 1
    h = F.positions[f_idx]
    sups = _interval_sups(path, merged, h)
    b_vec = np.maximum(sups, 1e-300)

    wealth_curves = []
    bound_curves = []
    for lam_k in (lam, -lam):
        strat = hoeffding_strategy(path, merged, h, b_vec, lam_k)
        wealth_curves.append(strat.wealth)
        bound_curves.append(hoeffding_bound_curve(path, merged, h, b_vec, lam_k))

    average = 0.5 * ((1.0 + wealth_curves[0]) + (1.0 + wealth_curves[1]))
    best_average = float(average.max())

    if sup_integral < trigger:
        verdict = "vacuous pass"
    elif best_average >= target * (1.0 - tol):
        verdict = "pass"
    else:
        verdict = "fail"
    return Certificate(
        lam_grid=(lam, -lam),
        verdict=verdict,
        price_bound=price_bound,
        trigger_level=trigger,
        sup_integral=sup_integral,
        target=target,
        best_average=best_average,
        a=a,
        b=b,
        c=c,
        wealth_curves=tuple(wealth_curves),
        bound_curves=tuple(bound_curves),
    )
