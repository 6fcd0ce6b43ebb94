import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qmicroscopy.errors import DegeneratePosteriorError, MonotonicityError, SingularPointError
from qmicroscopy.estimators import (
    PriorInterval,
    TwoSequenceRecord,
    check_monotone,
    invert_rates,
    invert_signal,
    mle_combined,
    mle_single,
    optimal_working_point,
    sensitivity,
    sensitivity_curve,
    total_fisher,
)
from qmicroscopy.fock import SinglePhoton, TwinFock, fisher_information, table_params
from qmicroscopy.sampling import CalibrationCurve, MeasurementRecord, RandomSource, simulate_batch


class FlatCurve:
    theta_dark = 1.0

    def prob(self, theta):
        return np.full(np.shape(theta), 0.5) if np.ndim(theta) else 0.5

    def dprob(self, theta):
        return 0.0 * np.asarray(theta)


def test_prior_interval():
    assert PriorInterval(0, 1).width == 1
    for lo, hi in [(0.5, 0.2), (-0.1, 1)]:
        with pytest.raises(ValueError):
            PriorInterval(lo, hi)


def test_prior_beyond_dark_fringe_rejected(tf3_curve):
    with pytest.raises(ValueError):
        mle_single(tf3_curve, MeasurementRecord(10, 5), PriorInterval(0, 1.0))


def test_check_monotone(tf3_curve):
    assert check_monotone(tf3_curve, PriorInterval.default(tf3_curve)) is True
    with pytest.raises(MonotonicityError):
        check_monotone(tf3_curve, PriorInterval(0.0, 1.2))


@given(theta=st.floats(0.001, 0.68))
def test_inversion_round_trip(tf3_curve, theta):
    est = invert_signal(tf3_curve, tf3_curve.prob(theta))
    assert est.value == pytest.approx(theta, abs=1e-8)
    assert est.clamped is None


def test_inversion_clamps(tf3_curve):
    hi, lo = invert_signal(tf3_curve, 0.0), invert_signal(tf3_curve, 1.0)
    assert (hi.value, hi.clamped) == (pytest.approx(tf3_curve.theta_dark), "upper")
    assert (lo.value, lo.clamped) == (0.0, "lower")
    theta, code = invert_rates(tf3_curve, [1.0, 0.5, 0.0], PriorInterval.default(tf3_curve))
    assert list(code) == [-1, 0, 1]


class RisingCurve:
    theta_dark = math.pi

    def prob(self, theta):
        return 0.1 + 0.8 * np.sin(np.asarray(theta) / 2) ** 2


def test_inversion_on_increasing_branch():
    c = RisingCurve()
    prior = PriorInterval(0.0, math.pi)
    assert check_monotone(c, prior) is False
    theta, code = invert_rates(c, [0.0, float(c.prob(1.0)), 1.0], prior)
    assert theta[1] == pytest.approx(1.0, abs=1e-8)
    assert list(code) == [-1, 0, 1]
    assert (theta[0], theta[2]) == (0.0, math.pi)


@pytest.mark.parametrize("k", [1, 13, 50, 87, 99])
def test_inversion_agrees_with_mle(exact_curve, k):
    prior = PriorInterval.default(exact_curve)
    a = invert_signal(exact_curve, k / 100, prior)
    b = mle_single(exact_curve, MeasurementRecord(100, k), prior)
    assert abs(a.value - b.value) < 2 * prior.width / 1999


def test_single_photon_sigma_closed_form():
    # F = 1, so the curvature width is 1/sqrt(N)
    c = CalibrationCurve.exact(SinglePhoton())
    est = mle_single(c, MeasurementRecord(100, 50))
    assert est.value == pytest.approx(math.pi / 2, abs=1e-6)
    assert est.sigma == pytest.approx(0.1, rel=1e-3)


def test_mle_boundary_peak_is_flagged(tf3_curve):
    est = mle_single(tf3_curve, MeasurementRecord(50, 50))
    assert est.clamped == "lower" and est.value == 0.0
    est = mle_single(tf3_curve, MeasurementRecord(50, 0))
    assert est.clamped == "upper" and est.sigma > 0


def test_degenerate_posterior():
    with pytest.raises(DegeneratePosteriorError):
        mle_single(FlatCurve(), MeasurementRecord(10, 5))


def test_mle_sigma_matches_spread(tf3_curve):
    theta, shots = 0.3, 100
    counts = simulate_batch(float(tf3_curve.prob(theta)), shots, 400, RandomSource(21))
    ests = [mle_single(tf3_curve, MeasurementRecord(shots, int(k))) for k in counts]
    spread = np.std([e.value for e in ests], ddof=1)
    assert np.mean([e.sigma for e in ests]) == pytest.approx(spread, rel=0.25)


@pytest.mark.parametrize("state", [TwinFock(1), TwinFock(2), TwinFock(3)], ids=lambda s: s.label)
def test_mle_attains_cramer_rao_bound(state):
    c = CalibrationCurve.exact(state, table_params(state))
    theta = optimal_working_point(c)
    shots = 400
    counts = simulate_batch(float(c.prob(theta)), shots, 500, RandomSource(33).child(state.n))
    spread = np.std([mle_single(c, MeasurementRecord(shots, int(k))).value for k in counts], ddof=1)
    assert spread == pytest.approx(sensitivity(c, theta, shots), rel=0.15)


def test_combined_reduces_to_single(tf3_curve):
    rec = MeasurementRecord(80, 30)
    a = mle_combined(tf3_curve, TwoSequenceRecord(rec, MeasurementRecord(0, 0), -0.2))
    b = mle_single(tf3_curve, rec)
    assert (a.value, a.sigma) == (b.value, b.sigma)


def test_combined_recovers_phase(tf3_curve):
    off = -0.3 * tf3_curve.theta_dark
    phi = 0.55
    rng = RandomSource(4)
    vals = []
    for r in range(200):
        k1 = simulate_batch(float(tf3_curve.prob(phi)), 100, 1, rng.child(r, 0))[0]
        k2 = simulate_batch(float(tf3_curve.prob(phi + off)), 100, 1, rng.child(r, 1))[0]
        data = TwoSequenceRecord(MeasurementRecord(100, int(k1)), MeasurementRecord(100, int(k2)), off)
        vals.append(mle_combined(tf3_curve, data).value)
    assert np.mean(vals) == pytest.approx(phi, abs=4 * np.std(vals) / math.sqrt(200))


def test_total_fisher(tf3_curve):
    td = tf3_curve.theta_dark
    off = -0.3 * td
    f_shift = fisher_information(tf3_curve, 0.7 * td)
    # pure curve is singular at the dark fringe; the second sequence carries all the information
    ideal = CalibrationCurve.exact(TwinFock(3))
    assert total_fisher(ideal, td, off, 50, 50) == pytest.approx(50 * fisher_information(ideal, 0.7 * td))
    assert total_fisher(tf3_curve, 0.2, off, 10, 0) == pytest.approx(10 * fisher_information(tf3_curve, 0.2))
    assert f_shift > 0
    with pytest.raises(SingularPointError):
        total_fisher(ideal, td, 0.0, 10, 10)


@given(phi=st.floats(0, 0.6847))
def test_total_fisher_positive_over_branch(tf3_curve, phi):
    assert total_fisher(tf3_curve, phi, -0.3 * tf3_curve.theta_dark, 1, 1) > 0


def test_sensitivity_and_singularities(tf3_curve):
    ideal = CalibrationCurve.exact(TwinFock(3))
    with pytest.raises(SingularPointError):
        sensitivity(ideal, ideal.theta_dark, 100)
    s = sensitivity_curve(ideal, [0.0, 0.2, ideal.theta_dark])
    assert math.isinf(s[0]) and math.isinf(s[2]) and np.isfinite(s[1])
    assert sensitivity(tf3_curve, 0.25, 100) == pytest.approx(1 / math.sqrt(100 * fisher_information(tf3_curve, 0.25)))


# frozen working points of the tabulated imperfect curves
@pytest.mark.parametrize(
    "state, expected",
    [(SinglePhoton(), 1.8675), (TwinFock(1), 0.8562), (TwinFock(2), 0.3639), (TwinFock(3), 0.2511)],
    ids=lambda x: getattr(x, "label", ""),
)
def test_optimal_working_point(state, expected):
    c = CalibrationCurve.exact(state, table_params(state))
    theta_min = optimal_working_point(c)
    assert theta_min == pytest.approx(expected, abs=1e-3)
    grid = np.linspace(1e-3, c.theta_dark - 1e-3, 500)
    assert sensitivity_curve(c, [theta_min])[0] <= sensitivity_curve(c, grid).min() + 1e-12
