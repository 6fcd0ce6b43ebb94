"""Seeded Monte Carlo photon counting and interferometer calibration."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CalibrationError, DomainError
from .fock import InputState, ProbabilityModel, dark_fringe, ideal_derivative, ideal_probability

DEFAULT_GRID_POINTS = 201


class RandomSource:
    """Keyed, splittable random stream.

    A source is identified by ``(seed, key)``; ``child(*k)`` appends to the key
    and yields a statistically independent stream.  Identical identifiers give
    bit-identical draws, so work split across pixels or threads does not
    change results.
    """

    def __init__(self, seed: int, key: tuple[int, ...] = ()):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise DomainError("seed must be a 64-bit unsigned integer")
        self.seed = seed
        self.key = tuple(int(k) for k in key)
        seq = np.random.SeedSequence(seed, spawn_key=self.key)
        self._rng = np.random.Generator(np.random.PCG64(seq))

    def child(self, *key: int) -> "RandomSource":
        return RandomSource(self.seed, self.key + tuple(key))

    def uniform(self, size) -> np.ndarray:
        return self._rng.random(size)

    def __repr__(self):
        return f"RandomSource(seed={self.seed}, key={self.key})"


@dataclass(frozen=True)
class MeasurementRecord:
    """Outcome of ``trials`` binary measurements, ``successes`` of them "+".

    An empty record (``trials == 0``) stands for a sequence that was not run.
    """

    trials: int
    successes: int

    def __post_init__(self):
        if self.trials < 0 or not 0 <= self.successes <= self.trials:
            raise DomainError(f"invalid record ({self.trials}, {self.successes})")

    @property
    def rate(self) -> float:
        if self.trials == 0:
            raise DomainError("empty record has no rate")
        return self.successes / self.trials


def _check_probability(p: float):
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"probability {p} outside [0, 1]")


def simulate_counts(p: float, trials: int, source: RandomSource) -> MeasurementRecord:
    """Draw ``trials`` uniform numbers and count those below ``p``."""
    _check_probability(p)
    if trials < 1:
        raise DomainError("need at least one trial")
    xi = source.uniform(trials)
    return MeasurementRecord(trials, int(np.count_nonzero(xi < p)))


def simulate_batch(p: float, trials: int, repetitions: int, source: RandomSource) -> np.ndarray:
    """Success counts of ``repetitions`` successive records from one stream.

    Equivalent to calling :func:`simulate_counts` ``repetitions`` times on the
    same source.
    """
    _check_probability(p)
    if trials < 1 or repetitions < 1:
        raise DomainError("trials and repetitions must be >= 1")
    xi = source.uniform((repetitions, trials))
    return np.count_nonzero(xi < p, axis=1)


@dataclass(frozen=True)
class CalibrationCurve:
    """Fitted signal ``P_fit(theta) = scale * P_ideal(theta) + offset``.

    Evaluation clamps to ``[0, 1]``; the derivative is zero where clamped.
    """

    input: InputState
    scale: float
    offset: float
    theta_dark: float
    residual_rms: float = 0.0
    n_points: int = 0
    scale_se: float = 0.0
    offset_se: float = 0.0

    @classmethod
    def exact(cls, state: InputState, params=None) -> "CalibrationCurve":
        """Curve of the noiseless limit: ``(a, b)`` straight from ``(V, h)``."""
        if params is None:
            a, b = 1.0, 0.0
        else:
            a, b = params.scale, params.offset
        return cls(state, a, b, dark_fringe(state))

    def ideal(self, theta):
        return ideal_probability(self.input, theta)

    def raw(self, theta):
        return self.scale * np.asarray(self.ideal(theta)) + self.offset

    def prob(self, theta):
        p = np.clip(self.raw(theta), 0.0, 1.0)
        return float(p) if p.ndim == 0 else p

    def dprob(self, theta):
        raw = self.raw(theta)
        d = self.scale * np.asarray(ideal_derivative(self.input, theta))
        d = np.where((raw < 0.0) | (raw > 1.0), 0.0, d)
        return float(d) if d.ndim == 0 else d


def p_fit(curve: CalibrationCurve, theta):
    return curve.prob(theta)


@dataclass(frozen=True)
class CalibrationData:
    """Averaged count rates on the calibration grid."""

    theta: np.ndarray
    mean_rate: np.ndarray
    std_rate: np.ndarray
    trials: int
    repetitions: int


def default_grid(points: int = DEFAULT_GRID_POINTS) -> np.ndarray:
    """Uniform grid on the open interval (-pi, pi)."""
    return np.linspace(-math.pi, math.pi, points + 2)[1:-1]


def measure_rates(model: ProbabilityModel, theta_grid, trials: int, repetitions: int, source: RandomSource) -> CalibrationData:
    """Mean and spread of ``N+/N`` over ``repetitions`` records per grid point."""
    theta = np.asarray(theta_grid, dtype=float)
    probs = np.atleast_1d(model.prob(theta))
    mean = np.empty_like(theta)
    std = np.empty_like(theta)
    for k, p in enumerate(probs):
        rates = simulate_batch(float(p), trials, repetitions, source.child(k)) / trials
        mean[k] = rates.mean()
        std[k] = rates.std()
    return CalibrationData(theta, mean, std, trials, repetitions)


def fit_curve(state: InputState, data: CalibrationData) -> CalibrationCurve:
    """Ordinary least squares of the mean rate on ``[P_ideal(theta), 1]``."""
    theta = data.theta
    if theta.size < 3:
        raise CalibrationError("calibration needs at least 3 grid points")
    design = np.column_stack([np.atleast_1d(ideal_probability(state, theta)), np.ones_like(theta)])
    coef, _, rank, _ = np.linalg.lstsq(design, data.mean_rate, rcond=None)
    if rank < 2:
        raise CalibrationError("degenerate calibration design")
    a, b = (float(c) for c in coef)
    if a <= 0:
        raise CalibrationError(f"fitted scale {a:.4g} is not positive")
    resid = data.mean_rate - design @ coef
    dof = max(theta.size - 2, 1)
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.inv(design.T @ design)
    return CalibrationCurve(
        input=state,
        scale=a,
        offset=b,
        theta_dark=dark_fringe(state),
        residual_rms=float(np.sqrt(np.mean(resid**2))),
        n_points=int(theta.size),
        scale_se=float(np.sqrt(cov[0, 0])),
        offset_se=float(np.sqrt(cov[1, 1])),
    )


def calibrate(model: ProbabilityModel, theta_grid, trials: int, repetitions: int, source: RandomSource) -> CalibrationCurve:
    """Simulate the no-sample calibration run and fit the affine signal curve."""
    theta = np.asarray(theta_grid, dtype=float)
    if theta.size < 3:
        raise CalibrationError("calibration needs at least 3 grid points")
    if theta.max() - theta.min() < dark_fringe(model.input):
        raise CalibrationError("calibration grid does not span a full fringe")
    data = measure_rates(model, theta, trials, repetitions, source)
    return fit_curve(model.input, data)
