"""Synthetic birefringence images and the three scan strategies.

Arrays are indexed ``[j, i]``: row ``j`` (the y direction, ``H`` rows) and
column ``i`` (the x direction, ``W`` columns).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy import ndimage

from .errors import BootstrapError, ConfigurationError, DegeneratePosteriorError
from .estimators import (
    PriorInterval,
    TwoSequenceRecord,
    check_monotone,
    invert_rates,
    invert_signal,
    mle_combined,
    mle_single,
    optimal_working_point,
)
from .sampling import CalibrationCurve, MeasurementRecord, RandomSource, simulate_counts

FIELD_FLOOR = 0.1
FIELD_AMPLITUDE = 0.437
Y_HALF_WIDTH = 1.2
#: sensed phases may overshoot the dark fringe by this much before a fixed offset is rejected
BRANCH_TOLERANCE = 0.05
REGION_HALF_WIDTH = 0.25
PILOT_ATTEMPTS = 3

FLAG_CLAMPED_LOW = 1
FLAG_CLAMPED_HIGH = 2
FLAG_DEGENERATE = 4

_CLAMP_FLAGS = {None: 0, "lower": FLAG_CLAMPED_LOW, "upper": FLAG_CLAMPED_HIGH}


@dataclass(frozen=True)
class PhaseField:
    values: np.ndarray
    x: np.ndarray
    y: np.ndarray

    @property
    def shape(self):
        return self.values.shape

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def mapping(self) -> dict:
        return {
            "x": f"pi*i/(W-1), W={self.width}",
            "y": f"{Y_HALF_WIDTH}*2*(j/(H-1)-0.5), H={self.height}",
            "phi": f"{FIELD_FLOOR}+{FIELD_AMPLITUDE}*cos^6[2(x-pi/2)^2+y^2]",
        }


def phase_formula(x, y):
    arg = 2.0 * (np.asarray(x) - math.pi / 2) ** 2 + np.asarray(y) ** 2
    return FIELD_FLOOR + FIELD_AMPLITUDE * np.cos(arg) ** 6


def build_phase_field(width: int = 60, height: int = 30) -> PhaseField:
    if width < 1 or height < 1:
        raise ValueError("field dimensions must be >= 1")
    x = np.linspace(0.0, math.pi, width) if width > 1 else np.array([math.pi / 2])
    y = Y_HALF_WIDTH * 2 * (np.linspace(0.0, 1.0, height) - 0.5) if height > 1 else np.zeros(1)
    xx, yy = np.meshgrid(x, y)
    return PhaseField(phase_formula(xx, yy), x, y)


def constant_field(value: float, width: int, height: int) -> PhaseField:
    return PhaseField(np.full((height, width), float(value)), np.arange(width, dtype=float), np.arange(height, dtype=float))


@dataclass(frozen=True)
class FixedOffset:
    """One global offset; ``None`` picks ``theta_min - 0.1``."""

    offset: float | None = None
    estimator: str = "inversion"


@dataclass(frozen=True)
class PhaseLock:
    theta_min: float | None = None
    pilot_prior: float = FIELD_FLOOR


@dataclass(frozen=True)
class TwoSequence:
    """``n1`` shots without offset, ``n2`` with ``offset`` (default ``-0.3 theta_dark``)."""

    n1: int
    n2: int
    offset: float | None = None


Strategy = Union[FixedOffset, PhaseLock, TwoSequence]


@dataclass(frozen=True)
class ScanConfig:
    curve: CalibrationCurve
    strategy: Strategy
    shots: int
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.shots < 1:
            raise ConfigurationError("shots per pixel must be >= 1")
        if isinstance(self.strategy, TwoSequence):
            s = self.strategy
            if s.n1 < 0 or s.n2 < 0 or s.n1 + s.n2 != self.shots:
                raise ConfigurationError(f"sequence split {s.n1}+{s.n2} != {self.shots} shots")

    @property
    def photons_per_pixel(self) -> int:
        return self.shots * self.curve.input.photons


def shots_for_budget(photons_per_state: int, budget: int = 600) -> int:
    if budget % photons_per_state:
        raise ConfigurationError(f"budget {budget} not divisible by N={photons_per_state}")
    return budget // photons_per_state


@dataclass
class ImageEstimate:
    estimate: np.ndarray
    truth: np.ndarray
    sensed: np.ndarray
    offsets: np.ndarray
    flags: np.ndarray
    strategy: str
    sigma: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.estimate.shape

    @property
    def flagged(self) -> int:
        return int(np.count_nonzero(self.flags))

    def flagged_pixels(self):
        return [tuple(p) for p in np.argwhere(self.flags != 0)]


def _map_rows(fn, height: int, workers: int):
    if workers <= 1:
        return [fn(j) for j in range(height)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(height)))


def _count_grid(probs: np.ndarray, shots: int, source: RandomSource, seq: int, workers: int) -> np.ndarray:
    h, w = probs.shape

    def row(j):
        return [simulate_counts(float(probs[j, i]), shots, source.child(j, i, seq)).successes for i in range(w)]

    return np.asarray(_map_rows(row, h, workers), dtype=np.int64)


def _resolve_theta_min(curve, value):
    return optimal_working_point(curve) if value is None else float(value)


def scan_fixed_offset(phase: PhaseField, config: ScanConfig, source: RandomSource | None = None) -> ImageEstimate:
    """Every pixel measured at ``offset + phi(i, j)`` and inverted on ``(0, theta_dark)``."""
    strat = config.strategy
    if not isinstance(strat, FixedOffset):
        raise ConfigurationError("scan_fixed_offset needs a FixedOffset strategy")
    curve = config.curve
    source = source or RandomSource(config.seed)
    theta_min = None
    offset = strat.offset
    if offset is None:
        theta_min = optimal_working_point(curve)
        offset = theta_min - FIELD_FLOOR
    sensed = offset + phase.values
    if sensed.min() <= 0.0 or sensed.max() > curve.theta_dark + BRANCH_TOLERANCE:
        raise ConfigurationError(
            f"offset {offset:.4f} puts sensed phases in [{sensed.min():.4f}, {sensed.max():.4f}],"
            f" outside the invertible branch (0, {curve.theta_dark:.4f}]"
        )
    counts = _count_grid(np.asarray(curve.prob(sensed)), config.shots, source, 0, config.workers)
    prior = PriorInterval.default(curve)
    flags = np.zeros(phase.shape, dtype=np.uint8)
    sigma = None
    if strat.estimator == "inversion":
        theta_est, code = invert_rates(curve, counts / config.shots, prior)
        flags[code == -1] = FLAG_CLAMPED_LOW
        flags[code == 1] = FLAG_CLAMPED_HIGH
    elif strat.estimator == "mle":
        theta_est = np.empty(phase.shape)
        sigma = np.empty(phase.shape)
        for (j, i), k in np.ndenumerate(counts):
            try:
                est = mle_single(curve, MeasurementRecord(config.shots, int(k)), prior)
            except DegeneratePosteriorError:
                theta_est[j, i], sigma[j, i], flags[j, i] = np.nan, np.nan, FLAG_DEGENERATE
                continue
            theta_est[j, i], sigma[j, i] = est.value, est.sigma
            flags[j, i] = _CLAMP_FLAGS[est.clamped]
    else:
        raise ConfigurationError(f"unknown estimator {strat.estimator!r}")
    return ImageEstimate(
        estimate=theta_est - offset,
        truth=phase.values,
        sensed=sensed,
        offsets=np.full(phase.shape, offset),
        flags=flags,
        strategy="fixed",
        sigma=sigma,
        meta={"offset": offset, "theta_min": theta_min, "estimator": strat.estimator},
    )


def _lock_prior(est, j, i, pilot):
    if i == 0 and j == 0:
        return pilot
    if j == 0:
        return est[0, i - 1]
    if i == 0:
        return est[j - 1, 0]
    return (est[j, i - 1] + est[j - 1, i] + est[j - 1, i - 1]) / 3.0


def _pilot(curve, phi00, theta_min, shots, prior_phi, source, interval, decreasing):
    """Pilot measurements at pixel (0, 0) giving a first phase guess."""
    guess = prior_phi
    for attempt in range(PILOT_ATTEMPTS):
        offset = theta_min - guess
        p = float(curve.prob(offset + phi00))
        rec = simulate_counts(p, shots, source.child(1, attempt))
        est = invert_signal(curve, rec.rate, interval, decreasing)
        value = est.value - offset
        if est.clamped is None:
            return value, attempt + 1
        # a clamped rate only bounds the phase; step past the bound and retry
        step = 0.1 * curve.theta_dark
        guess = value + step if est.clamped == "upper" else value - step
    raise BootstrapError(f"pilot estimate stayed clamped after {PILOT_ATTEMPTS} attempts")


def scan_phase_lock(phase: PhaseField, config: ScanConfig, source: RandomSource | None = None) -> ImageEstimate:
    """Raster scan with the offset of each pixel set from already-estimated neighbours.

    Row 0 and column 0 follow their single predecessor; interior pixels use the
    mean of the left, upper and upper-left estimates.  With ``workers > 1`` the
    anti-diagonals are processed as parallel wavefronts; per-pixel random
    streams make the result identical to the serial order.
    """
    strat = config.strategy
    if not isinstance(strat, PhaseLock):
        raise ConfigurationError("scan_phase_lock needs a PhaseLock strategy")
    curve = config.curve
    source = source or RandomSource(config.seed)
    theta_min = _resolve_theta_min(curve, strat.theta_min)
    interval = PriorInterval.default(curve)
    truth = phase.values
    h, w = truth.shape
    decreasing = check_monotone(curve, interval)
    pilot, attempts = _pilot(
        curve, truth[0, 0], theta_min, config.shots, strat.pilot_prior, source, interval, decreasing
    )

    est = np.zeros((h, w))
    offsets = np.zeros((h, w))
    flags = np.zeros((h, w), dtype=np.uint8)

    def visit(j, i):
        offset = theta_min - _lock_prior(est, j, i, pilot)
        p = float(curve.prob(offset + truth[j, i]))
        rec = simulate_counts(p, config.shots, source.child(j, i, 0))
        e = invert_signal(curve, rec.rate, interval, decreasing)
        est[j, i] = e.value - offset
        offsets[j, i] = offset
        flags[j, i] = _CLAMP_FLAGS[e.clamped]

    if config.workers <= 1:
        for j in range(h):
            for i in range(w):
                visit(j, i)
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            for d in range(h + w - 1):
                cells = [(j, d - j) for j in range(max(0, d - w + 1), min(h, d + 1))]
                list(pool.map(lambda c: visit(*c), cells))

    return ImageEstimate(
        estimate=est,
        truth=truth,
        sensed=offsets + truth,
        offsets=offsets,
        flags=flags,
        strategy="lock",
        meta={"theta_min": theta_min, "pilot_estimate": pilot, "pilot_attempts": attempts},
    )


def scan_two_sequence(phase: PhaseField, config: ScanConfig, source: RandomSource | None = None) -> ImageEstimate:
    """Per pixel, ``n1`` shots at ``phi`` and ``n2`` at ``phi + offset``, combined by MLE."""
    strat = config.strategy
    if not isinstance(strat, TwoSequence):
        raise ConfigurationError("scan_two_sequence needs a TwoSequence strategy")
    curve = config.curve
    source = source or RandomSource(config.seed)
    offset = -0.3 * curve.theta_dark if strat.offset is None else float(strat.offset)
    truth = phase.values
    prior = PriorInterval.default(curve)
    probs1 = np.asarray(curve.prob(truth))
    probs2 = np.asarray(curve.prob(truth + offset))
    h, w = truth.shape

    def row(j):
        out = []
        for i in range(w):
            px = source.child(j, i, 0)
            seq1 = simulate_counts(float(probs1[j, i]), strat.n1, px) if strat.n1 else MeasurementRecord(0, 0)
            seq2 = (
                simulate_counts(float(probs2[j, i]), strat.n2, source.child(j, i, 1))
                if strat.n2
                else MeasurementRecord(0, 0)
            )
            try:
                e = mle_combined(curve, TwoSequenceRecord(seq1, seq2, offset), prior)
            except DegeneratePosteriorError:
                out.append((np.nan, np.nan, FLAG_DEGENERATE))
                continue
            out.append((e.value, e.sigma, _CLAMP_FLAGS[e.clamped]))
        return out

    rows = _map_rows(row, h, config.workers)
    cells = np.asarray(rows, dtype=float)
    return ImageEstimate(
        estimate=cells[..., 0],
        truth=truth,
        sensed=truth + offset,
        offsets=np.full(truth.shape, offset),
        flags=cells[..., 2].astype(np.uint8),
        strategy="two-seq",
        sigma=cells[..., 1],
        meta={"offset": offset, "n1": strat.n1, "n2": strat.n2},
    )


def scan(phase: PhaseField, config: ScanConfig, source: RandomSource | None = None) -> ImageEstimate:
    if isinstance(config.strategy, FixedOffset):
        return scan_fixed_offset(phase, config, source)
    if isinstance(config.strategy, PhaseLock):
        return scan_phase_lock(phase, config, source)
    return scan_two_sequence(phase, config, source)


@dataclass(frozen=True)
class Rect:
    """Half-open pixel rectangle ``[i0, i1) x [j0, j1)``."""

    i0: int
    i1: int
    j0: int
    j1: int

    def mask(self, shape) -> np.ndarray:
        h, w = shape
        if not (0 <= self.i0 < self.i1 <= w and 0 <= self.j0 < self.j1 <= h):
            raise ValueError(f"region {self} outside image of shape {shape}")
        m = np.zeros(shape, dtype=bool)
        m[self.j0 : self.j1, self.i0 : self.i1] = True
        return m


Region = Union[Rect, np.ndarray]


def _region_mask(region: Region, shape) -> np.ndarray:
    if isinstance(region, Rect):
        mask = region.mask(shape)
    else:
        mask = np.asarray(region, dtype=bool)
        if mask.shape != tuple(shape):
            raise ValueError(f"region mask shape {mask.shape} != image shape {shape}")
    if not mask.any():
        raise ValueError("empty region")
    return mask


def optimal_region(sensed: np.ndarray, theta_min: float, half_width: float = REGION_HALF_WIDTH) -> np.ndarray:
    """Largest connected set of pixels sensing within ``+-half_width * theta_min`` of ``theta_min``."""
    near = np.abs(sensed - theta_min) <= half_width * theta_min
    labels, count = ndimage.label(near)
    if count == 0:
        return near
    sizes = ndimage.sum(near, labels, index=np.arange(1, count + 1))
    return labels == (1 + int(np.argmax(sizes)))


def local_standard_deviation(images: ImageEstimate | Sequence[ImageEstimate], region: Region) -> float:
    """Spread of ``phi_est - phi`` over the region, pooled across images."""
    if isinstance(images, ImageEstimate):
        images = [images]
    if not images:
        raise ValueError("no images")
    errs = []
    for img in images:
        mask = _region_mask(region, img.shape)
        errs.append((img.estimate - img.truth)[mask])
    return float(np.std(np.concatenate(errs)))


def rmse(image: ImageEstimate, phase: PhaseField | np.ndarray) -> float:
    truth = phase.values if isinstance(phase, PhaseField) else np.asarray(phase)
    if truth.shape != image.shape:
        raise ValueError(f"dimension mismatch {image.shape} vs {truth.shape}")
    return float(np.sqrt(np.mean((image.estimate - truth) ** 2)))


@dataclass(frozen=True)
class QualityReport:
    lsd: float
    rmse: float
    ratio: float | None
    region_pixels: int
    flagged: int
