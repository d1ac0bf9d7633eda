import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unbloc.channel import ChannelModel
from unbloc.ranging import (
    ConvergenceError,
    CurveKind,
    RangingCurve,
    RangingError,
    RangingSample,
    RankDeficientError,
    fit_polynomial,
    fit_power,
    invert_distance,
    load_samples,
    ranging_rmse,
)

# average RSSI against distance at one receiver of a campus measurement run
CAMPUS = list(zip(range(10, 111, 10), [-58.7, -70.9, -72.4, -73.3, -77.4, -79.0, -85.3, -85.6, -83.3, -87.7, -86.8]))

CUBIC = np.array([-2016.18, -75.9963, -0.961107, -0.00412021])


def cubic_samples(coef=CUBIC, lo=-116.0, hi=-70.0, n=30):
    r = np.linspace(lo, hi, n)
    d = np.polynomial.polynomial.polyval(r, coef)
    return [RangingSample(float(a), float(b)) for a, b in zip(d, r)]


def test_polynomial_recovers_cubic():
    c = fit_polynomial(cubic_samples(), 3)
    assert np.allclose(c.coefficients, CUBIC, rtol=1e-6, atol=0)
    assert c.residual_rmse < 1e-6


def test_line_through_two_points():
    c = fit_polynomial([RangingSample(10.0, -60.0), RangingSample(50.0, -80.0)], 1)
    assert c.psi(-60.0) == pytest.approx(10.0, rel=1e-12)
    assert c.psi(-80.0) == pytest.approx(50.0, rel=1e-12)


def test_polynomial_global_minimum_against_grid():
    rng = np.random.default_rng(5)
    r = rng.uniform(-100, -60, 20)
    d = 300.0 + 3.0 * r + rng.normal(0, 5, 20)
    c = fit_polynomial([RangingSample(a, b) for a, b in zip(d, r)], 1)

    def rmse(a0, a1):
        return math.sqrt(np.mean((a0 + a1 * r - d) ** 2))

    # dense 2-D grid around the solution, then a finer grid around the grid optimum
    best = (math.inf, 0.0, 0.0)
    for span0, span1 in [(40.0, 0.5), (0.5, 0.005)]:
        c0 = c.coefficients if best[0] == math.inf else best[1:]
        for a0 in np.linspace(c0[0] - span0, c0[0] + span0, 201):
            for a1 in np.linspace(c0[1] - span1, c0[1] + span1, 201):
                v = rmse(a0, a1)
                if v < best[0]:
                    best = (v, a0, a1)
    assert c.residual_rmse <= best[0] + 1e-6


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 3))
def test_polynomial_perturbation_never_improves(seed, n):
    rng = np.random.default_rng(seed)
    r = rng.uniform(-110, -50, 25)
    d = rng.uniform(10, 200, 25)
    c = fit_polynomial([RangingSample(a, b) for a, b in zip(d, r)], n)
    coef = np.array(c.coefficients)

    def obj(k):
        return np.sum((np.polynomial.polynomial.polyval(r, k) - d) ** 2)

    base = obj(coef)
    for i in range(n + 1):
        for s in (1e-3, -1e-3):
            k = coef.copy()
            k[i] += s
            assert obj(k) >= base * (1 - 1e-12)


def test_polynomial_errors():
    with pytest.raises(RankDeficientError):
        fit_polynomial([RangingSample(d, -70.0) for d in (10, 20, 30)], 1)
    with pytest.raises(RangingError):
        fit_polynomial(cubic_samples(), 6)


def test_power_recovers_parameters():
    s = [RangingSample(d, -10.0 * d**0.5 - 40.0) for d in np.linspace(10, 200, 20)]
    a, b, c = fit_power(s).abc()
    assert a == pytest.approx(-10.0, rel=1e-4)
    assert b == pytest.approx(0.5, rel=1e-4)
    assert c == pytest.approx(-40.0, rel=1e-4)


def test_power_flat_data_is_rank_deficient():
    with pytest.raises(RankDeficientError):
        fit_power([RangingSample(d, -70.0) for d in (10, 20, 30, 40)])
    with pytest.raises(RangingError):
        fit_power([RangingSample(10, -60.0), RangingSample(20, -70.0)])


def test_power_on_campus_shape_is_decreasing():
    c = fit_power([RangingSample(d, r) for d, r in CAMPUS], fit_domain=(10.0, 110.0))
    grid = np.linspace(10, 110, 500)
    assert np.all(np.diff(c.power_rssi(grid)) < 0)
    assert c.power_rssi(10.0) == pytest.approx(-58.7, abs=3.0)


def test_power_on_log_distance_data():
    # pure log-distance data sits at the b -> 0 edge of the power family
    ch = ChannelModel(pl0_db=55.0, n_p=3.0, sigma_sh=0.0)
    ds = np.arange(10.0, 201.0, 10.0)
    c = fit_power([RangingSample(d, float(ch.mean_rssi(14, d))) for d in ds])
    assert abs(c.coefficients[1]) < 1e-6
    test = np.linspace(10, 200, 97)
    est = [invert_distance(c, float(ch.mean_rssi(14, d))) for d in test]
    assert np.allclose(est, test, rtol=1e-6)


def test_power_curve_from_plain_coefficients():
    c = RangingCurve.power(-10.0, 0.5, -40.0)
    assert c.power_rssi(100.0) == pytest.approx(-140.0, rel=1e-12)
    assert c.abc() == pytest.approx((-10.0, 0.5, -40.0))
    with pytest.raises(RangingError):
        RangingCurve.power(1.0, 0.0, 0.0)


def test_convergence_error_carries_best():
    s = [RangingSample(d, -10.0 * d**0.5 - 40.0 + (3.0 if i % 2 else -3.0)) for i, d in enumerate(np.linspace(10, 200, 20))]
    with pytest.raises(ConvergenceError) as exc:
        fit_power(s, max_iter=1)
    assert exc.value.best.kind is CurveKind.POWER


@settings(max_examples=50, deadline=None)
@given(st.floats(10.0, 200.0))
def test_round_trip_power(d):
    c = RangingCurve.power(-10.0, 0.5, -40.0)
    assert invert_distance(c, c.rssi_at(d)) == pytest.approx(d, rel=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 1.0))
def test_round_trip_polynomial(u):
    ch = ChannelModel(pl0_db=55.0, n_p=3.0, sigma_sh=0.0)
    s = [RangingSample(x, float(ch.mean_rssi(14, x))) for x in np.arange(10.0, 201.0, 10.0)]
    c = fit_polynomial(s, 3)
    # the curve only reaches distances that its fitted RSSI span maps onto
    lo, hi = sorted(float(c.psi(v)) for v in c.rssi_span)
    lo, hi = max(lo, 10.0), min(hi, 200.0)
    d = lo + u * (hi - lo)
    assert invert_distance(c, c.rssi_at(d)) == pytest.approx(d, rel=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.floats(10.0, 200.0))
def test_round_trip_cubic_over_whole_domain(d):
    c = fit_polynomial(cubic_samples(), 3)
    assert invert_distance(c, c.rssi_at(d)) == pytest.approx(d, rel=1e-6)


def test_inversion_clamps():
    c = RangingCurve.power(-10.0, 0.5, -40.0)
    assert invert_distance(c, -10.0) == 10.0
    assert invert_distance(c, -500.0) == 200.0
    assert invert_distance(c, c.rssi_at(50.0)) == pytest.approx(50.0, abs=1e-6)
    with pytest.raises(RangingError):
        invert_distance(None, -70.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(-200.0, 0.0))
def test_inversion_stays_in_domain(rssi):
    for c in (RangingCurve.power(-10.0, 0.5, -40.0), fit_polynomial(cubic_samples(), 3)):
        assert 10.0 <= invert_distance(c, rssi) <= 200.0


def test_scalar_solver_on_non_monotone_function():
    from unbloc.ranging import _solve_scalar

    def g(x):
        return (x - 100.0) ** 2

    assert _solve_scalar(g, 0.0, 10.0, 200.0) == pytest.approx(100.0, abs=1e-5)
    x = _solve_scalar(g, 2500.0, 10.0, 200.0)
    assert g(x) == pytest.approx(2500.0, abs=1e-6)
    # monotone branch with an out-of-range target clamps
    assert _solve_scalar(lambda x: -x, 5.0, 10.0, 200.0) == 10.0


def test_curve_json_round_trip():
    c = fit_polynomial(cubic_samples(), 3)
    assert RangingCurve.from_dict(c.to_dict()) == c
    p = RangingCurve.power(-10.0, 0.5, -40.0)
    assert RangingCurve.from_dict(p.to_dict()) == p


def test_ranging_rmse_examples():
    assert ranging_rmse([[1.0, 2.0]], [[1.0, 2.0]]) == 0.0
    assert ranging_rmse([[13.0]], [[10.0]]) == 3.0
    assert ranging_rmse([[3.0, 4.0]], [[0.0, 0.0]]) == pytest.approx(math.sqrt(12.5), rel=1e-15)
    with pytest.raises(ValueError):
        ranging_rmse([[1.0]], [[1.0, 2.0]])


def test_load_samples():
    s = load_samples("distance_m,rssi_dbm\n10,-58.7\n20,-70.9\n")
    assert s == [RangingSample(10.0, -58.7), RangingSample(20.0, -70.9)]
    with pytest.raises(ValueError):
        load_samples("d,r\n1,2\n")
    with pytest.raises(ValueError):
        load_samples("distance_m,rssi_dbm\n-1,-50\n")
