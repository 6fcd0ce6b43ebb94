"""Phase estimation from binary-outcome records.

Curves passed in here are :class:`~qmicroscopy.sampling.CalibrationCurve`
objects (or anything exposing ``prob``, ``dprob``, ``theta_dark``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import DegeneratePosteriorError, MonotonicityError, SingularPointError
from .fock import fisher_array, fisher_information
from .sampling import MeasurementRecord

GRID_POINTS = 2000
BISECTION_TOL = 1e-10
PROB_CLIP = 1e-12
#: Fisher information below this counts as a singular point
FISHER_FLOOR = 1e-12
# flat log-likelihood span that counts as a degenerate posterior
_FLAT_TOL = 1e-10
_MONOTONE_SAMPLES = 513
_CONFIDENCE = 0.683


@dataclass(frozen=True)
class PriorInterval:
    lower: float
    upper: float

    def __post_init__(self):
        if not 0.0 <= self.lower < self.upper:
            raise ValueError(f"invalid prior interval ({self.lower}, {self.upper})")

    @classmethod
    def default(cls, curve) -> "PriorInterval":
        return cls(0.0, curve.theta_dark)

    def check(self, curve):
        if self.upper > curve.theta_dark * (1 + 1e-12):
            raise ValueError(
                f"prior upper bound {self.upper} exceeds the dark fringe {curve.theta_dark}"
            )

    @property
    def width(self) -> float:
        return self.upper - self.lower


@dataclass(frozen=True)
class PhaseEstimate:
    """Point estimate, its Gaussian width and how it was obtained.

    ``clamped`` is ``"lower"`` or ``"upper"`` when the estimate is pinned to an
    end of the prior interval (out-of-range rate, or likelihood peak on the
    boundary), else ``None``.
    """

    value: float
    sigma: float | None
    method: str
    clamped: str | None = None


@dataclass(frozen=True)
class TwoSequenceRecord:
    seq1: MeasurementRecord
    seq2: MeasurementRecord
    offset: float

    @property
    def total(self) -> int:
        return self.seq1.trials + self.seq2.trials


def check_monotone(curve, interval: PriorInterval) -> bool:
    """Return True if the curve decreases on the interval, False if it increases."""
    t = np.linspace(interval.lower, interval.upper, _MONOTONE_SAMPLES)
    d = np.diff(np.asarray(curve.prob(t)))
    if np.all(d < 0):
        return True
    if np.all(d > 0):
        return False
    raise MonotonicityError(f"curve is not strictly monotone on [{interval.lower}, {interval.upper}]")


def invert_rates(curve, rates, interval: PriorInterval, decreasing: bool | None = None):
    """Vectorized inversion of ``P_fit(theta) = rate`` by bisection.

    Returns ``(theta, code)`` where ``code`` is -1 for rates clamped to the
    lower end, +1 for the upper end and 0 otherwise.  Passing ``decreasing``
    skips the monotonicity check (callers inverting many rates on one branch).
    """
    if decreasing is None:
        decreasing = check_monotone(curve, interval)
    r = np.asarray(rates, dtype=float)
    lo_end, hi_end = interval.lower, interval.upper
    p_lo, p_hi = float(curve.prob(lo_end)), float(curve.prob(hi_end))
    if decreasing:
        below_lo, beyond_hi = r > p_lo, r < p_hi
    else:
        below_lo, beyond_hi = r < p_lo, r > p_hi
    lo = np.full(r.shape, lo_end)
    hi = np.full(r.shape, hi_end)
    n_iter = int(math.ceil(math.log2(max(interval.width, 1e-300) / BISECTION_TOL))) + 1
    for _ in range(max(n_iter, 1)):
        mid = 0.5 * (lo + hi)
        pm = np.asarray(curve.prob(mid))
        right = pm > r if decreasing else pm < r
        lo = np.where(right, mid, lo)
        hi = np.where(right, hi, mid)
    theta = 0.5 * (lo + hi)
    code = np.zeros(r.shape, dtype=np.int8)
    theta = np.where(below_lo, lo_end, theta)
    code[below_lo] = -1
    theta = np.where(beyond_hi, hi_end, theta)
    code[beyond_hi] = 1
    return theta, code


def invert_signal(curve, rate: float, interval: PriorInterval | None = None, decreasing: bool | None = None) -> PhaseEstimate:
    """Inversion estimator: the root of ``P_fit(theta) = rate`` on a monotone branch."""
    interval = interval or PriorInterval.default(curve)
    theta, code = invert_rates(curve, np.asarray([rate]), interval, decreasing)
    clamped = {-1: "lower", 0: None, 1: "upper"}[int(code[0])]
    return PhaseEstimate(float(theta[0]), None, "inversion", clamped)


def _loglik(curve, terms):
    """Log-likelihood closure over ``(record, shift)`` terms."""
    active = [(rec, shift) for rec, shift in terms if rec.trials > 0]

    def fn(theta):
        t = np.asarray(theta, dtype=float)
        total = np.zeros(t.shape)
        for rec, shift in active:
            p = np.clip(np.asarray(curve.prob(t + shift)), PROB_CLIP, 1 - PROB_CLIP)
            k, n = rec.successes, rec.trials
            if k:
                total = total + k * np.log(p)
            if n - k:
                total = total + (n - k) * np.log1p(-p)
        return total

    return fn


def _interval_sigma(grid, loglik_values):
    w = np.exp(loglik_values - loglik_values.max())
    w = w / w.sum()
    order = np.argsort(-w, kind="stable")
    cum = np.cumsum(w[order])
    keep = order[: int(np.searchsorted(cum, _CONFIDENCE)) + 1]
    step = grid[1] - grid[0]
    return 0.5 * (grid[keep].max() - grid[keep].min() + step)


def _maximize(fn, prior: PriorInterval, grid_points: int, method: str) -> PhaseEstimate:
    grid = np.linspace(prior.lower, prior.upper, grid_points)
    values = fn(grid)
    if values.max() - values.min() < _FLAT_TOL:
        raise DegeneratePosteriorError("likelihood is flat over the prior interval")
    k = int(np.argmax(values))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, grid_points - 1)]
    best, best_val = grid[k], values[k]
    res = minimize_scalar(lambda t: -float(fn(t)), bounds=(a, b), method="bounded", options={"xatol": 1e-11})
    if -res.fun > best_val:
        best = float(res.x)
    step = grid[1] - grid[0]
    snap = 1e-3 * step
    clamped = None
    if best - prior.lower < snap:
        best, clamped = prior.lower, "lower"
    elif prior.upper - best < snap:
        best, clamped = prior.upper, "upper"

    h = 0.5 * step
    curv = -(float(fn(best + h)) - 2 * float(fn(best)) + float(fn(best - h))) / (h * h)
    if curv > 0 and np.isfinite(curv):
        sigma = 1.0 / math.sqrt(curv)
    else:
        sigma = _interval_sigma(grid, values)
    return PhaseEstimate(float(best), float(sigma), method, clamped)


def mle_single(curve, record: MeasurementRecord, prior: PriorInterval | None = None, grid_points: int = GRID_POINTS) -> PhaseEstimate:
    """Maximum of the binomial likelihood over a flat prior.

    The peak is located on a dense grid and polished with a bounded scalar
    search; sigma comes from the curvature of the log-posterior at the peak,
    or from the 68.3% highest-density interval when the curvature is not
    negative.
    """
    prior = prior or PriorInterval.default(curve)
    prior.check(curve)
    if record.trials < 1:
        raise ValueError("record has no trials")
    return _maximize(_loglik(curve, [(record, 0.0)]), prior, grid_points, "mle")


def mle_combined(curve, data: TwoSequenceRecord, prior: PriorInterval | None = None, grid_points: int = GRID_POINTS) -> PhaseEstimate:
    """MLE from one sequence at phi and one at ``phi + offset``."""
    prior = prior or PriorInterval.default(curve)
    prior.check(curve)
    if data.seq2.trials == 0:
        return mle_single(curve, data.seq1, prior, grid_points)
    if data.total < 1:
        raise ValueError("both sequences are empty")
    fn = _loglik(curve, [(data.seq1, 0.0), (data.seq2, data.offset)])
    return _maximize(fn, prior, grid_points, "combined-mle")


def sensitivity(curve, theta: float, trials: int) -> float:
    """Phase uncertainty ``1 / sqrt(N F(theta))`` after ``trials`` shots."""
    f = fisher_information(curve, theta)
    if f < FISHER_FLOOR:
        raise SingularPointError(f"Fisher information vanishes at theta = {theta}")
    return 1.0 / math.sqrt(trials * f)


def _fisher_or_zero(curve, theta):
    try:
        f = fisher_information(curve, theta)
    except SingularPointError:
        return 0.0, True
    return f, f < FISHER_FLOOR


def total_fisher(curve, phi: float, offset: float, n1: int, n2: int) -> float:
    """``n1 F(phi) + n2 F(phi + offset)``; singular terms contribute zero."""
    total = 0.0
    singular = []
    for n, theta in ((n1, phi), (n2, phi + offset)):
        if n <= 0:
            continue
        f, sing = _fisher_or_zero(curve, theta)
        singular.append(sing)
        total += n * f
    if not singular or all(singular):
        raise SingularPointError(f"no informative sequence at phi = {phi}")
    return total


def optimal_working_point(curve, eps: float = 1e-3, grid_points: int = 2001) -> float:
    """Phase in ``[eps, theta_dark - eps]`` with the smallest ``1/sqrt(F)``.

    Ties (within 1e-9 relative) go to the smaller phase.
    """
    lo, hi = eps, curve.theta_dark - eps
    grid = np.linspace(lo, hi, grid_points)
    f = fisher_array(curve, grid)
    cost = np.where(np.isfinite(f) & (f >= FISHER_FLOOR), 1.0 / np.sqrt(np.where(f > 0, f, 1.0)), np.inf)
    if not np.isfinite(cost).any():
        raise SingularPointError("no finite sensitivity on the branch")
    best = cost.min()
    k = int(np.flatnonzero(cost <= best * (1 + 1e-9))[0])
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, grid_points - 1)]

    def obj(t):
        ft = fisher_array(curve, t)[0]
        return 1.0 / math.sqrt(ft) if np.isfinite(ft) and ft >= FISHER_FLOOR else np.inf

    res = minimize_scalar(obj, bounds=(a, b), method="bounded", options={"xatol": 1e-10})
    if res.fun < cost[k] * (1 - 1e-9):
        return float(res.x)
    return float(grid[k])


def sensitivity_curve(curve, theta) -> np.ndarray:
    """Per-shot ``1/sqrt(F)`` on a grid, ``inf`` at singular points."""
    f = np.atleast_1d(np.asarray([_fisher_or_zero(curve, float(t))[0] for t in np.atleast_1d(theta)]))
    out = np.full(f.shape, np.inf)
    ok = f >= FISHER_FLOOR
    out[ok] = 1.0 / np.sqrt(f[ok])
    return out
