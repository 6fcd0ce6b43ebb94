import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qmicroscopy.errors import CalibrationError, DomainError
from qmicroscopy.fock import ProbabilityModel, SinglePhoton, TwinFock, dark_fringe, table_params
from qmicroscopy.sampling import (
    CalibrationCurve,
    CalibrationData,
    MeasurementRecord,
    RandomSource,
    calibrate,
    default_grid,
    fit_curve,
    measure_rates,
    p_fit,
    simulate_batch,
    simulate_counts,
)


def test_same_identifier_same_stream():
    a = RandomSource(7).child(3, 4).uniform(5)
    b = RandomSource(7, (3, 4)).uniform(5)
    np.testing.assert_array_equal(a, b)


def test_children_differ():
    root = RandomSource(7)
    assert not np.array_equal(root.child(0).uniform(8), root.child(1).uniform(8))
    assert not np.array_equal(root.child(0, 1).uniform(8), root.child(1, 0).uniform(8))
    assert not np.array_equal(RandomSource(7).uniform(8), RandomSource(8).uniform(8))


def test_frozen_draws():
    # regression guard for the seed -> stream mapping
    rec = simulate_counts(0.5, 1000, RandomSource(2024).child(1))
    assert rec == simulate_counts(0.5, 1000, RandomSource(2024).child(1))
    np.testing.assert_allclose(
        RandomSource(0).uniform(2), np.random.Generator(np.random.PCG64(np.random.SeedSequence(0))).random(2)
    )


@pytest.mark.parametrize("seed", [-1, 2**64])
def test_seed_range(seed):
    with pytest.raises(DomainError):
        RandomSource(seed)


@given(p=st.floats(0, 1), n=st.integers(1, 500), seed=st.integers(0, 2**32))
def test_counts_within_trials(p, n, seed):
    rec = simulate_counts(p, n, RandomSource(seed))
    assert 0 <= rec.successes <= rec.trials == n


@pytest.mark.parametrize("p, expected", [(0.0, 0), (1.0, 50)])
def test_degenerate_probabilities(p, expected):
    assert simulate_counts(p, 50, RandomSource(1)).successes == expected


@pytest.mark.parametrize("p", [-0.01, 1.01])
def test_rejects_bad_probability(p):
    with pytest.raises(DomainError):
        simulate_counts(p, 10, RandomSource(1))


def test_rejects_zero_trials():
    with pytest.raises(DomainError):
        simulate_counts(0.5, 0, RandomSource(1))


def test_batch_matches_sequential_records():
    src_a, src_b = RandomSource(3), RandomSource(3)
    batch = simulate_batch(0.3, 40, 6, src_a)
    seq = [simulate_counts(0.3, 40, src_b).successes for _ in range(6)]
    np.testing.assert_array_equal(batch, seq)


def test_binomial_moments():
    counts = simulate_batch(0.3, 100, 4000, RandomSource(11))
    assert counts.mean() == pytest.approx(30, abs=4 * math.sqrt(21 / 4000))
    assert counts.var() == pytest.approx(21, rel=0.1)


def test_measurement_record():
    assert MeasurementRecord(10, 3).rate == 0.3
    assert MeasurementRecord(0, 0).trials == 0
    with pytest.raises(DomainError):
        MeasurementRecord(0, 0).rate
    for bad in [(5, 6), (-1, 0), (5, -1)]:
        with pytest.raises(DomainError):
            MeasurementRecord(*bad)


def test_default_grid_open_interval():
    g = default_grid(201)
    assert g.size == 201 and g[0] > -math.pi and g[-1] < math.pi
    assert np.allclose(np.diff(g), 2 * math.pi / 202)


def test_exact_curve():
    st_ = TwinFock(3)
    c = CalibrationCurve.exact(st_, table_params(st_))
    assert c.theta_dark == dark_fringe(st_)
    assert p_fit(c, 0.0) == pytest.approx(table_params(st_).height)
    assert CalibrationCurve.exact(st_).prob(0.0) == pytest.approx(1.0)


def test_curve_clamps_and_zero_derivative_outside():
    c = CalibrationCurve(TwinFock(1), 1.2, -0.1, math.pi / 2)
    assert c.prob(0.0) == 1.0
    assert c.dprob(0.0) == 0.0
    assert c.prob(math.pi / 2) == 0.0
    assert c.dprob(0.6) == pytest.approx(1.2 * -math.sin(1.2))


@pytest.mark.parametrize("n_state", [SinglePhoton(), TwinFock(1), TwinFock(2), TwinFock(3)], ids=lambda s: s.label)
def test_calibration_recovers_affine_map(n_state):
    params = table_params(n_state)
    curve = calibrate(ProbabilityModel(n_state, params), default_grid(), 100, 200, RandomSource(5))
    assert curve.scale == pytest.approx(params.scale, abs=5 * curve.scale_se + 1e-4)
    assert curve.offset == pytest.approx(params.offset, abs=5 * curve.offset_se + 1e-4)
    assert curve.n_points == 201


def test_fit_of_noiseless_data_is_exact():
    st_ = TwinFock(2)
    model = ProbabilityModel(st_, table_params(st_))
    theta = default_grid(31)
    data = CalibrationData(theta, model.prob(theta), np.zeros_like(theta), 1, 1)
    curve = fit_curve(st_, data)
    assert curve.scale == pytest.approx(table_params(st_).scale, abs=1e-12)
    assert curve.residual_rms == pytest.approx(0.0, abs=1e-12)


def test_measure_rates_deterministic():
    model = ProbabilityModel(SinglePhoton())
    a = measure_rates(model, default_grid(11), 20, 3, RandomSource(9))
    b = measure_rates(model, default_grid(11), 20, 3, RandomSource(9))
    np.testing.assert_array_equal(a.mean_rate, b.mean_rate)


def test_calibration_errors():
    model = ProbabilityModel(TwinFock(1))
    with pytest.raises(CalibrationError):
        calibrate(model, [0.1, 0.2], 10, 2, RandomSource(0))
    with pytest.raises(CalibrationError):
        calibrate(model, np.linspace(0, 1, 5), 10, 2, RandomSource(0))
    flat = CalibrationData(np.zeros(5), np.ones(5), np.zeros(5), 1, 1)
    with pytest.raises(CalibrationError):
        fit_curve(TwinFock(1), flat)
    theta = default_grid(21)
    inverted = CalibrationData(theta, 1 - np.cos(theta) ** 2, np.zeros_like(theta), 1, 1)
    with pytest.raises(CalibrationError):
        fit_curve(TwinFock(1), inverted)
