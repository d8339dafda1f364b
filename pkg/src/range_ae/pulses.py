"""Bandlimited outgoing pulses and their building blocks.

Time is measured in units of the inverse bandwidth 1/F, so every pulse here
has its spectrum confined to |f| <= 1 (the Bessel pulse only up to the
truncation of the sampling window).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

MAX_BESSEL_ORDER = 12

TRIANGLE_POLY_COEFFS = (8.0, -14.3984, 4.77612, -0.82315)  # orders 1, 3, 5, 7
BESSEL_COEFFS = (0.259858, 0.0879936, 1.13614, -0.136663, 1.23652, -0.185957, 0.565418)
BESSEL_ORDERS = (0, 2, 4, 6, 8, 10, 12)

_SMALL_X = 1e-6


class PulseKind(str, enum.Enum):
    SINC = "sinc"
    TRIANGLE = "triangle"
    BESSEL = "bessel"


@dataclass(frozen=True)
class PulseSpec:
    """Outgoing pulse family plus its constants."""

    kind: PulseKind
    m: int = 10
    omega: float = 2.0 * math.pi
    poly_coeffs: tuple[float, ...] = field(default=TRIANGLE_POLY_COEFFS)
    bessel_coeffs: tuple[float, ...] = field(default=BESSEL_COEFFS)

    def __post_init__(self):
        object.__setattr__(self, "kind", PulseKind(self.kind))
        if self.m < 1:
            raise ValueError(f"sinc exponent must be >= 1, got {self.m}")
        if not self.omega > 0:
            raise ValueError(f"omega must be positive, got {self.omega}")
        if len(self.poly_coeffs) != 4:
            raise ValueError("triangle polynomial needs 4 odd-order coefficients")
        if len(self.bessel_coeffs) != len(BESSEL_ORDERS):
            raise ValueError("Bessel pulse needs 7 even-order coefficients")

    @classmethod
    def named(cls, kind: str | PulseKind) -> "PulseSpec":
        return cls(kind=PulseKind(kind))

    def __call__(self, t):
        return evaluate_pulse(t, self)


def _double_factorial(n: int) -> int:
    return math.prod(range(n, 0, -2)) if n > 0 else 1


def spherical_bessel(n: int, x):
    """Spherical Bessel function of the first kind j_n(x) for 0 <= n <= 12.

    Closed forms (n <= 2) or upward recurrence where x > n, Miller's
    downward recurrence where x <= n, leading series term below 1e-6.
    Accepts scalars or arrays.
    """
    if not 0 <= n <= MAX_BESSEL_ORDER:
        raise ValueError(f"order must be in [0, {MAX_BESSEL_ORDER}], got {n}")
    x = np.asarray(x, dtype=np.float64)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)

    # j_n(-x) = (-1)^n j_n(x)
    ax = np.abs(x)
    sign = np.where((x < 0) & (n % 2 == 1), -1.0, 1.0)
    out = np.empty_like(ax)

    small = ax < _SMALL_X
    out[small] = ax[small] ** n / _double_factorial(2 * n + 1)

    up = ~small & ((ax > n) | (n == 0))
    if up.any():
        out[up] = _upward(n, ax[up])
    down = ~small & ~up
    if down.any():
        out[down] = _downward(n, ax[down])

    out *= sign
    return float(out[0]) if scalar else out


def _closed_form(n: int, x: np.ndarray) -> np.ndarray:
    s, c = np.sin(x), np.cos(x)
    if n == 0:
        return s / x
    if n == 1:
        return s / x**2 - c / x
    return (3.0 / x**3 - 1.0 / x) * s - 3.0 / x**2 * c


def _upward(n: int, x: np.ndarray) -> np.ndarray:
    if n <= 2:
        return _closed_form(n, x)
    j_prev, j_cur = _closed_form(0, x), _closed_form(1, x)
    for k in range(1, n):
        j_prev, j_cur = j_cur, (2 * k + 1) / x * j_cur - j_prev
    return j_cur


def _downward(n: int, x: np.ndarray) -> np.ndarray:
    # Miller: recur down from far above n with arbitrary seed values, keep
    # j_n and j_1 (relative), then fix the scale from a closed form.
    start = n + 30 + int(np.ceil(x.max()))
    j_next = np.zeros_like(x)
    j_cur = np.full_like(x, 1e-30)
    kept = {}
    for k in range(start, 0, -1):
        j_next, j_cur = j_cur, (2 * k + 1) / x * j_cur - j_next
        if k - 1 in (n, 1):
            kept[k - 1] = j_cur.copy()
        big = np.abs(j_cur) > 1e200
        if big.any():
            j_cur[big] *= 1e-200
            j_next[big] *= 1e-200
            for v in kept.values():
                v[big] *= 1e-200
    j0 = j_cur
    # normalize against whichever of j0, j1 is further from a zero
    true0, true1 = _closed_form(0, x), _closed_form(1, x)
    use0 = np.abs(true0) >= np.abs(true1)
    scale = np.where(use0, true0 / np.where(use0, j0, 1.0), true1 / np.where(use0, 1.0, kept[1]))
    return kept[n] * scale


def sinc_pulse(t, spec: PulseSpec):
    """sinc(omega t / (m pi))**m with the normalized sinc sin(pi x)/(pi x)."""
    return np.sinc(spec.omega * np.asarray(t, dtype=np.float64) / (spec.m * np.pi)) ** spec.m


def triangle_polynomial(t, spec: PulseSpec):
    t = np.asarray(t, dtype=np.float64)
    a1, a3, a5, a7 = spec.poly_coeffs
    t2 = t * t
    return t * (a1 + t2 * (a3 + t2 * (a5 + t2 * a7)))


def triangle_pulse(t, spec: PulseSpec):
    return triangle_polynomial(t, spec) * sinc_pulse(t, spec)


def bessel_pulse(t, spec: PulseSpec):
    x = spec.omega * np.asarray(t, dtype=np.float64)
    total = np.zeros_like(x)
    for c, n in zip(spec.bessel_coeffs, BESSEL_ORDERS):
        total = total + c * spherical_bessel(n, x)
    return total


_EVALUATORS = {
    PulseKind.SINC: sinc_pulse,
    PulseKind.TRIANGLE: triangle_pulse,
    PulseKind.BESSEL: bessel_pulse,
}


def evaluate_pulse(t, spec: PulseSpec):
    value = _EVALUATORS[spec.kind](t, spec)
    return float(value) if np.ndim(value) == 0 else value


def power_spectrum(values, window: float) -> tuple[np.ndarray, np.ndarray]:
    """Squared magnitudes of the 1/N-normalized DFT.

    Returns ``(freqs, power)`` in FFT bin order; ``freqs`` is in units of F
    with bin spacing ``1/window``. ``power.sum()`` equals ``sum(values**2)/N``.
    """
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    if n == 0:
        raise ValueError("empty signal")
    coeffs = np.fft.fft(values) / n
    freqs = np.fft.fftfreq(n, d=window / n)
    return freqs, coeffs.real**2 + coeffs.imag**2


def power_fraction_above(values, window: float, cutoff: float = 1.0) -> float:
    """Fraction of total spectral power at |f| strictly above ``cutoff``."""
    freqs, power = power_spectrum(values, window)
    total = power.sum()
    if total == 0:
        return 0.0
    return float(power[np.abs(freqs) > cutoff * (1 + 1e-12)].sum() / total)
