"""Step integrals, the integral ladder with rate fit, and superhedging bounds."""

import math

import numpy as np
import numpy.testing as npt
import pytest

from pathint.integration import (
    HoeffdingPreconditionError,
    SimpleStrategy,
    StepProcess,
    hoeffding_bound_curve,
    hoeffding_strategy,
    isometry_certificate,
    ito_ladder,
    matrix_left_integral,
    step_integral,
)
from pathint.partitions import build_ladder
from pathint.paths import SamplePath, generate
from pathint.quadvar import qv_curves


def step_integral_oracle(process: StepProcess, path: SamplePath) -> np.ndarray:
    """Plain-python clipped left-point sum; reference for step_integral."""
    values = path.values
    m = path.n_points
    stops = list(process.stops)
    out = np.zeros(m)
    for t in range(m):
        total = 0.0
        for k, a in enumerate(stops):
            b = stops[k + 1] if k + 1 < len(stops) else m - 1
            lo, hi = min(a, t), min(b, t)
            total += float(process.positions[k] @ (values[hi] - values[lo]))
        out[t] = total
    return out


def walk(seed, n=512, d=1, scale=2.0**-4):
    return generate("random_walk", seed, {"n_steps": n, "T": 1.0, "d": d, "scale": scale})


# ---------------------------------------------------------------------------
# step integrals

def test_step_integral_matches_oracle():
    path = walk(1, n=64, d=2)
    stops = np.array([0, 5, 17, 40])
    rng = np.random.default_rng(0)
    proc = StepProcess(stops=stops, positions=rng.standard_normal((4, 2)))
    npt.assert_allclose(step_integral(proc, path), step_integral_oracle(proc, path), atol=1e-13)


def test_step_integral_of_ones_is_coordinate_sum():
    path = walk(2, n=128, d=2)
    proc = StepProcess(stops=np.array([0]), positions=np.ones((1, 2)))
    expect = path.values.sum(axis=1) - path.values[0].sum()
    npt.assert_allclose(step_integral(proc, path), expect, atol=1e-14)


def test_step_integral_linear_in_positions():
    path = walk(3, n=64)
    stops = np.array([0, 10, 30])
    rng = np.random.default_rng(1)
    f = rng.standard_normal((3, 1))
    g = rng.standard_normal((3, 1))
    lhs = step_integral(StepProcess(stops, 2.0 * f + g), path)
    rhs = 2.0 * step_integral(StepProcess(stops, f), path) + step_integral(
        StepProcess(stops, g), path
    )
    npt.assert_allclose(lhs, rhs, atol=1e-13)


def test_step_integral_refinement_invariance():
    # repeating the held position on a refined stop set changes nothing
    path = walk(4, n=64)
    coarse = np.array([0, 20, 50])
    fine = np.array([0, 7, 20, 33, 50, 60])
    pos_c = np.array([[1.0], [-2.0], [0.5]])
    pos_f = np.array([[1.0], [1.0], [-2.0], [-2.0], [0.5], [0.5]])
    npt.assert_allclose(
        step_integral(StepProcess(coarse, pos_c), path),
        step_integral(StepProcess(fine, pos_f), path),
        atol=1e-14,
    )


def test_from_sampling_holds_path_values():
    path = walk(5, n=32, d=2)
    proc = StepProcess.from_sampling(path, np.array([0, 8, 16]))
    npt.assert_array_equal(proc.positions, path.values[[0, 8, 16]])


def test_matrix_left_integral_rows_are_step_integrals():
    path = walk(6, n=128, d=2)
    stops = build_ladder(path, [2.0**-2]).finest.stops
    mat = matrix_left_integral(path, stops)
    for i in range(2):
        for j in range(2):
            pos = np.zeros((stops.size, 2))
            pos[:, j] = path.values[stops, i]
            scalar = step_integral(StepProcess(stops, pos), path)
            npt.assert_allclose(mat[:, i, j], scalar, atol=1e-13)


# ---------------------------------------------------------------------------
# integral ladder and rate

def test_d1_closed_form_every_level():
    # left sums along any stop set: integral = (S_t^2 - S_0^2 - qv_t) / 2
    path = walk(7, n=2048, d=1, scale=2.0**-5)
    ladder = build_ladder(path, [2.0**-2, 2.0**-3, 2.0**-4])
    result = ito_ladder(path, ladder)
    s = path.values[:, 0]
    for lv, curve in zip(ladder.levels, result.curves):
        qv = qv_curves(path, lv.stops)[:, 0]
        npt.assert_allclose(curve[:, 0, 0], 0.5 * (s * s - s[0] ** 2 - qv), atol=1e-12)


def test_ito_ladder_residuals_and_rate():
    path = generate(
        "random_walk", 17, {"n_steps": 2**14, "T": 1.0, "d": 1, "scale": 2.0**-7}
    )
    ladder = build_ladder(path, [2.0**-n for n in range(2, 8)])
    result = ito_ladder(path, ladder)
    assert result.residual_per_level[-1] == 0.0
    assert result.residual_per_level[0] > result.residual_per_level[-2]
    assert math.isfinite(result.rate_slope)
    assert 0.4 < result.rate_slope < 1.6


def test_ito_ladder_array_integrand():
    path = walk(8, n=256, d=2)
    ladder = build_ladder(path, [2.0**-2, 2.0**-3])
    f = np.stack([np.cos(path.times), np.sin(path.times)], axis=1)
    result = ito_ladder(path, ladder, integrand=f)
    for lv, curve in zip(ladder.levels, result.curves):
        proc = StepProcess(lv.stops, f[lv.stops])
        npt.assert_allclose(curve, step_integral(proc, path), atol=1e-13)
    with pytest.raises(ValueError):
        ito_ladder(path, ladder, integrand="bogus")


def test_rate_nan_when_underdetermined():
    path = generate("linear", 0, {"n_steps": 16, "T": 1.0, "d": 1})
    ladder = build_ladder(path, [0.5, 0.25])
    result = ito_ladder(path, ladder)
    assert math.isnan(result.rate_slope)


# ---------------------------------------------------------------------------
# Hoeffding-type superhedging

def test_single_interval_wealth_closed_form():
    path = walk(9, n=256, d=1, scale=2.0**-5)
    stops = np.array([0])
    h = np.ones((1, 1))
    sup_move = float(np.abs(path.values[:, 0] - path.values[0, 0]).max())
    b = np.array([max(sup_move, 1e-12)])
    lam = 1.0
    strat = hoeffding_strategy(path, stops, h, b, lam)
    factor = math.exp(-0.5 * b[0] ** 2) * math.sinh(b[0]) / b[0]
    npt.assert_allclose(strat.wealth, factor * (path.values[:, 0] - path.values[0, 0]), atol=1e-14)
    bound = hoeffding_bound_curve(path, stops, h, b, lam)
    assert np.all(1.0 + strat.wealth >= bound - 1e-12)


@pytest.mark.parametrize("lam", [-2.0, -1.0, -0.5, 0.5, 1.0, 2.0])
def test_wealth_dominates_bound_on_crossing_ladder(lam):
    path = walk(10, n=1024, d=1, scale=2.0**-5)
    stops = build_ladder(path, [2.0**-3]).finest.stops
    values = path.values[:, 0]
    ends = np.append(stops[1:], path.n_points - 1)
    b = np.array(
        [
            max(float(np.abs(values[a : e + 1] - values[a]).max()), 1e-12)
            for a, e in zip(stops, ends)
        ]
    )
    h = np.ones((stops.size, 1))
    strat = hoeffding_strategy(path, stops, h, b, lam)
    bound = hoeffding_bound_curve(path, stops, h, b, lam)
    assert strat.admissibility == 1.0
    assert np.all(1.0 + strat.wealth >= bound - 1e-9 * max(1.0, bound.max()))
    assert np.all(1.0 + strat.wealth > 0.0)


def test_lam_zero_gives_flat_wealth_and_unit_bound():
    path = walk(11, n=128)
    stops = np.array([0, 32, 64])
    h = np.ones((3, 1))
    b = np.full(3, 10.0)
    strat = hoeffding_strategy(path, stops, h, b, 0.0)
    npt.assert_array_equal(strat.wealth, np.zeros(path.n_points))
    npt.assert_array_equal(hoeffding_bound_curve(path, stops, h, b, 0.0), np.ones(path.n_points))


def test_precondition_violation_raises():
    path = walk(12, n=128, scale=0.25)
    stops = np.array([0])
    with pytest.raises(HoeffdingPreconditionError) as exc:
        hoeffding_strategy(path, stops, np.ones((1, 1)), np.array([0.01]), 1.0)
    assert exc.value.interval == 0
    with pytest.raises(ValueError):
        hoeffding_strategy(path, stops, np.ones((1, 1)), np.array([0.0]), 1.0)


def test_strategy_floor_enforced():
    with pytest.raises(ValueError):
        SimpleStrategy(
            process=StepProcess(np.array([0]), np.ones((1, 1))),
            admissibility=1.0,
            wealth=np.array([0.0, -1.5]),
        )


# ---------------------------------------------------------------------------
# isometry-style certificate

def test_certificate_price_bound_formula_exact():
    path = walk(13, n=512, d=1, scale=2.0**-5)
    ladder = build_ladder(path, [2.0**-3])
    F = StepProcess(np.array([0]), np.ones((1, 1)))
    for b, d in ((1.0, 1), (0.5, 1), (2.0, 1)):
        cert = isometry_certificate(F, path, ladder, a=1.0, b=b, c=10.0)
        assert cert.price_bound == pytest.approx(2.0 * math.exp(-b * b / 2.0), rel=1e-15)


def test_certificate_triggered_pass():
    # small b keeps the trigger below the realized sup of |integral|
    path = walk(14, n=2048, d=1, scale=2.0**-5)
    ladder = build_ladder(path, [2.0**-3, 2.0**-4])
    qv_total = float(qv_curves(path, ladder.finest.stops)[-1].sum())
    F = StepProcess(np.array([0]), np.ones((1, 1)))
    cert = isometry_certificate(F, path, ladder, a=1.0, b=0.25, c=1.05 * qv_total)
    assert cert.sup_integral > cert.trigger_level
    assert cert.verdict == "pass"
    assert cert.best_average >= cert.target * (1.0 - 1e-9)
    assert len(cert.wealth_curves) == 2
    for wealth, bound in zip(cert.wealth_curves, cert.bound_curves):
        assert np.all(1.0 + wealth >= bound - 1e-9 * max(1.0, bound.max()))


def test_certificate_vacuous_when_trigger_unreached():
    path = walk(15, n=256, d=1, scale=2.0**-6)
    ladder = build_ladder(path, [2.0**-4])
    F = StepProcess(np.array([0]), np.ones((1, 1)))
    # huge b pushes the trigger far above any realized integral
    cert = isometry_certificate(F, path, ladder, a=1.0, b=50.0, c=10.0)
    assert cert.verdict == "vacuous pass"


def test_certificate_not_applicable_cases():
    path = walk(16, n=256, d=1, scale=2.0**-4)
    ladder = build_ladder(path, [2.0**-2])
    big = StepProcess(np.array([0]), np.full((1, 1), 3.0))
    assert (
        isometry_certificate(big, path, ladder, a=1.0, b=1.0, c=10.0).verdict
        == "not applicable"
    )
    small_c = isometry_certificate(
        StepProcess(np.array([0]), np.ones((1, 1))), path, ladder, a=1.0, b=1.0, c=1e-6
    )
    assert small_c.verdict == "not applicable"


def test_certificate_rejects_bad_params():
    path = walk(17, n=64)
    ladder = build_ladder(path, [2.0**-2])
    F = StepProcess(np.array([0]), np.ones((1, 1)))
    for kw in ({"a": 0.0}, {"b": -1.0}, {"c": 0.0}):
        params = {"a": 1.0, "b": 1.0, "c": 1.0}
        params.update(kw)
        with pytest.raises(ValueError):
            isometry_certificate(F, path, ladder, **params)
