"""Photon-counting probabilities behind a polarization Mach-Zehnder interferometer.

The interferometer acts on the two polarization modes as the rotation
``exp(-i theta J_y)``.  For a twin-Fock input ``|n, n>`` the amplitude of the
output ``|n1, n2>`` is the rotation matrix element ``d^n_{m', 0}(theta)`` with
``m' = (n1 - n2) / 2``.  Those elements are evaluated through fully normalized
associated Legendre functions, whose three-term degree recursion stays well
conditioned for large ``n`` (no factorials are formed).

A binary outcome "+" is the event ``n1 = n2 = n`` for twin-Fock input and
``n1 = 1, n2 = 0`` for the single photon ``|1, 0>``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Union

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, SingularPointError

#: central-difference step (rad) for curves without a closed-form derivative
FD_STEP = 1e-5
#: P(1 - P) below this value makes the two-outcome Fisher information undefined
SINGULAR_TOL = 1e-12
#: grid used to bracket the first zero of the amplitude
DARK_SCAN_STEP = 1e-3


@dataclass(frozen=True)
class TwinFock:
    """Twin-Fock probe ``|n, n>`` carrying ``N = 2n`` photons."""

    n: int

    def __post_init__(self):
        if isinstance(self.n, bool) or int(self.n) != self.n or self.n < 1:
            raise DomainError(f"twin-Fock pair number must be an integer >= 1, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))

    @property
    def photons(self) -> int:
        return 2 * self.n

    @property
    def label(self) -> str:
        return f"tf{self.n}"


@dataclass(frozen=True)
class SinglePhoton:
    """The single-photon probe ``|1, 0>``, a stand-in for classical light."""

    @property
    def photons(self) -> int:
        return 1

    @property
    def label(self) -> str:
        return "single"


InputState = Union[TwinFock, SinglePhoton]


def parse_state(label: str) -> InputState:
    """Map ``single``, ``tf1``, ``tf2``, ... onto an input state."""
    label = label.strip().lower()
    if label in ("single", "sp", "1,0"):
        return SinglePhoton()
    if label.startswith("tf") and label[2:].isdigit():
        return TwinFock(int(label[2:]))
    raise DomainError(f"unknown input state {label!r}")


@dataclass(frozen=True)
class ImperfectionParams:
    """Visibility ``V`` and peak height ``h`` of the measured fringe."""

    visibility: float
    height: float

    def __post_init__(self):
        if not 0.0 < self.visibility <= 1.0:
            raise DomainError(f"visibility must lie in (0, 1], got {self.visibility}")
        if not 0.0 < self.height <= 1.0:
            raise DomainError(f"peak height must lie in (0, 1], got {self.height}")

    @property
    def scale(self) -> float:
        """Slope ``2hV / (1 + V)`` of the affine map."""
        return 2.0 * self.height * self.visibility / (1.0 + self.visibility)

    @property
    def offset(self) -> float:
        """Floor ``h(1 - V) / (1 + V)`` of the affine map."""
        return self.height * (1.0 - self.visibility) / (1.0 + self.visibility)


# keyed by total photon number N
TABLE_I = {
    1: ImperfectionParams(visibility=0.994, height=0.99),
    2: ImperfectionParams(visibility=0.983, height=0.985),
    4: ImperfectionParams(visibility=0.97, height=0.98),
    6: ImperfectionParams(visibility=0.94, height=0.975),
}


def table_params(state: InputState) -> ImperfectionParams:
    try:
        return TABLE_I[state.photons]
    except KeyError:
        raise DomainError(f"no tabulated imperfections for N={state.photons}") from None


def apply_imperfections(p, params: ImperfectionParams):
    """Map an ideal probability onto the observed count rate.

    ``p -> 2hV/(1+V) p + h(1-V)/(1+V)``; the image of ``[0, 1]`` is
    ``[h(1-V)/(1+V), h]``.
    """
    arr = np.asarray(p, dtype=float)
    if np.any((arr < 0.0) | (arr > 1.0)) or np.any(np.isnan(arr)):
        raise DomainError("probability outside [0, 1]")
    out = params.scale * arr + params.offset
    return float(out) if out.ndim == 0 else out


@lru_cache(maxsize=None)
def _legendre_coefficients(l: int, m: int):
    seed = 1.0 / math.sqrt(2.0)
    for k in range(1, m + 1):
        seed *= math.sqrt((2 * k + 1) / (2 * k))
    steps = tuple(
        (
            math.sqrt((4 * ll * ll - 1) / (ll * ll - m * m)),
            math.sqrt(((ll - 1) ** 2 - m * m) / (4 * (ll - 1) ** 2 - 1)),
        )
        for ll in range(m + 2, l + 1)
    )
    return seed, steps


def _normalized_legendre(l: int, m: int, x, s):
    # orthonormal \bar P_l^m on [-1, 1]; Condon-Shortley sign dropped
    seed, steps = _legendre_coefficients(l, m)
    pmm = seed * s**m if m else seed * np.ones_like(x)
    if l == m:
        return pmm
    pm1 = math.sqrt(2 * m + 3) * x * pmm
    for a, b in steps:
        pmm, pm1 = pm1, a * (x * pm1 - b * pmm)
    return pm1


def rotation_amplitude(n: int, m: int, theta):
    """Real matrix element ``d^n_{m,0}(theta)`` up to an overall sign."""
    if n < 0 or abs(m) > n:
        raise DomainError(f"invalid angular momentum pair j={n}, m={m}")
    t = np.asarray(theta, dtype=float)
    x, s = np.cos(t), np.sin(t)
    val = math.sqrt(2.0 / (2 * n + 1)) * _normalized_legendre(n, abs(m), x, s)
    return float(val) if val.ndim == 0 else val


def rotation_probability(n1: int, n2: int, n: int, theta):
    """``|<n1, n2| exp(-i theta J_y) |n, n>|^2`` for the twin-Fock input ``|n, n>``."""
    if n < 1:
        raise DomainError("pair number n must be >= 1")
    if n1 < 0 or n2 < 0 or n1 + n2 != 2 * n:
        raise DomainError(f"outcome ({n1}, {n2}) does not conserve N = {2 * n}")
    amp = rotation_amplitude(n, (n1 - n2) // 2, theta)
    return amp * amp


# analytic dP/dtheta of the twin-Fock curves with known closed forms
_CLOSED_DERIVATIVES = {
    1: lambda t: -np.sin(2 * t),
    2: lambda t: -12 * (1 + 3 * np.cos(2 * t)) * np.sin(2 * t) / 16,
    3: lambda t: 2 * (3 * np.cos(t) + 5 * np.cos(3 * t)) * (-3 * np.sin(t) - 15 * np.sin(3 * t)) / 64,
}


def _scalar_or_array(val):
    val = np.asarray(val, dtype=float)
    return float(val) if val.ndim == 0 else val


def ideal_probability(state: InputState, theta):
    """Ideal P(+|theta) of the binary outcome."""
    t = np.asarray(theta, dtype=float)
    if isinstance(state, SinglePhoton):
        return _scalar_or_array(np.cos(t / 2) ** 2)
    return rotation_probability(state.n, state.n, state.n, t)


def ideal_derivative(state: InputState, theta):
    """dP(+|theta)/dtheta, analytic where a closed form exists."""
    t = np.asarray(theta, dtype=float)
    if isinstance(state, SinglePhoton):
        return _scalar_or_array(-np.sin(t) / 2)
    if state.n in _CLOSED_DERIVATIVES:
        return _scalar_or_array(_CLOSED_DERIVATIVES[state.n](t))
    hi = ideal_probability(state, t + FD_STEP)
    lo = ideal_probability(state, t - FD_STEP)
    return _scalar_or_array((np.asarray(hi) - np.asarray(lo)) / (2 * FD_STEP))


def ideal_amplitude(state: InputState, theta):
    """Signed amplitude whose square is the ideal P(+|theta)."""
    t = np.asarray(theta, dtype=float)
    if isinstance(state, SinglePhoton):
        return _scalar_or_array(np.cos(t / 2))
    return rotation_amplitude(state.n, 0, t)


@dataclass(frozen=True)
class ProbabilityModel:
    """Binary-outcome curve of one probe, optionally degraded by (V, h)."""

    input: InputState
    imperfections: ImperfectionParams | None = None

    def ideal(self, theta):
        return ideal_probability(self.input, theta)

    def prob(self, theta):
        p = self.ideal(theta)
        if self.imperfections is None:
            return p
        p = np.clip(p, 0.0, 1.0)
        return apply_imperfections(p if np.ndim(p) else float(p), self.imperfections)

    def dprob(self, theta):
        d = ideal_derivative(self.input, theta)
        if self.imperfections is None:
            return d
        return self.imperfections.scale * d


def success_probability(model: ProbabilityModel, theta):
    """P(+|theta) of ``model`` including its imperfections, if any."""
    return model.prob(theta)


def fisher_information(model, theta: float) -> float:
    """Per-shot Fisher information ``(dP/dtheta)^2 / [P(1 - P)]``.

    ``model`` is anything with ``prob`` and ``dprob`` (a ProbabilityModel or a
    fitted calibration curve).  Raises SingularPointError where the binary
    outcome is deterministic and the formula degenerates.
    """
    p = float(model.prob(theta))
    var = p * (1.0 - p)
    if var < SINGULAR_TOL:
        raise SingularPointError(f"P(1-P) = {var:.3g} at theta = {theta}")
    d = float(model.dprob(theta))
    return d * d / var


def fisher_array(model, theta) -> np.ndarray:
    """Vectorized Fisher information; NaN marks singular points."""
    t = np.atleast_1d(np.asarray(theta, dtype=float))
    p = np.asarray(model.prob(t), dtype=float)
    d = np.asarray(model.dprob(t), dtype=float)
    var = p * (1.0 - p)
    out = np.full_like(t, np.nan)
    ok = var >= SINGULAR_TOL
    out[ok] = d[ok] ** 2 / var[ok]
    return out


def dark_fringe(state: InputState) -> float:
    """Smallest theta > 0 where the ideal P(+|theta) vanishes.

    The probability touches zero quadratically, so the bracket is taken on the
    signed amplitude, scanned on a 1e-3 rad grid and then bisected.
    """
    upper = 2 * math.pi
    grid = np.arange(DARK_SCAN_STEP, upper + DARK_SCAN_STEP, DARK_SCAN_STEP)
    amp = np.asarray(ideal_amplitude(state, grid))
    exact = np.flatnonzero(amp == 0.0)
    change = np.flatnonzero(np.sign(amp[:-1]) * np.sign(amp[1:]) < 0)
    if change.size and (not exact.size or change[0] < exact[0]):
        k = change[0]
        root = brentq(
            lambda t: ideal_amplitude(state, t),
            grid[k],
            grid[k + 1],
            xtol=1e-14,
            rtol=4 * np.finfo(float).eps,
        )
        return float(root)
    if exact.size:
        return float(grid[exact[0]])
    raise SingularPointError("no dark fringe found in (0, 2 pi]")


def quantum_crb(photons: int) -> float:
    """Quantum Cramer-Rao bound ``1 / sqrt(N(N + 2)/2)`` of a twin-Fock probe.

    For large N this behaves as ``sqrt(2) / N``.
    """
    if photons < 1:
        raise DomainError("photon number must be >= 1")
    return 1.0 / math.sqrt(photons * (photons + 2) / 2.0)


def shot_noise_limit(photons: int) -> float:
    """Classical benchmark ``1 / sqrt(N)``."""
    if photons < 1:
        raise DomainError("photon number must be >= 1")
    return 1.0 / math.sqrt(photons)
