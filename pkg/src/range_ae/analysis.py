"""Bottleneck analyses: scaled response curves, noise statistics, ranking."""
from __future__ import annotations

import csv
import enum
import os
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .pulses import PulseSpec
from .scene import CANONICAL_GRID, SampledSignal, SamplingGrid, return_signals, sample_pulse
from .streams import Purpose, stream


class DegenerateCurveError(ValueError):
    """Endpoints of a response curve coincide, so it cannot be scaled."""


@dataclass
class ResponseCurve:
    separations: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.separations = np.asarray(self.separations, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.separations.shape != self.values.shape:
            raise ValueError("separations and values differ in length")
        if np.any(np.diff(self.separations) <= 0):
            raise ValueError("separations must be strictly increasing")


@dataclass
class ScaledCurve(ResponseCurve):
    pass


@dataclass
class NoiseStats:
    separations: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    scaled_means: np.ndarray
    scaled_stds: np.ndarray
    target_ratio: float
    n_draws: int

    @property
    def mean_scaled_std(self) -> float:
        return float(np.mean(self.scaled_stds))


def _encode(model, signals: np.ndarray, chunk: int = 1024) -> np.ndarray:
    out = np.empty(len(signals))
    for s in range(0, len(signals), chunk):
        out[s:s + chunk] = model.encode(signals[s:s + chunk, None, :])[:, 0]
    return out


def encoder_response(model, spec: PulseSpec, n_seps: int = 256,
                     grid: SamplingGrid = CANONICAL_GRID) -> ResponseCurve:
    """Encoder outputs on clean returns at n_seps equally spaced l in [0, 1]."""
    if n_seps < 2:
        raise ValueError("need at least two separations")
    seps = np.linspace(0.0, 1.0, n_seps)
    return ResponseCurve(seps, _encode(model, return_signals(spec, seps, grid)))


def _span(first: float, last: float, values: np.ndarray) -> float:
    span = last - first
    scale = float(np.max(np.abs(values))) if values.size else 0.0
    if span == 0 or abs(span) <= 1e-15 * scale:
        raise DegenerateCurveError(
            f"endpoints {first!r} and {last!r} coincide; training likely failed"
        )
    return span


def scale_curve(curve: ResponseCurve) -> ScaledCurve:
    """(y - y_first) / (y_last - y_first); endpoints come out exactly 0 and 1."""
    y = curve.values
    y_i, y_f = y[0], y[-1]
    scaled = (y - y_i) / _span(y_i, y_f, y)
    scaled[0], scaled[-1] = 0.0, 1.0
    return ScaledCurve(curve.separations.copy(), scaled)


def monotonicity_fraction(curve: ResponseCurve) -> float:
    """Share of consecutive pairs that strictly increase."""
    if curve.values.size < 2:
        raise ValueError("need at least two points")
    return float(np.mean(np.diff(curve.values) > 0))


def noise_stats_from_samples(separations, outputs: np.ndarray, target_ratio: float) -> NoiseStats:
    """Mean / population std over draws (axis 1), then endpoint scaling.

    sigma_scaled = |1 / (m_last - m_first)| * sigma.
    """
    outputs = np.asarray(outputs, dtype=np.float64)
    # shift by the first draw so identical draws give exactly zero spread
    shift = outputs[:, :1]
    dev = outputs - shift
    means = shift[:, 0] + dev.mean(axis=1)
    stds = dev.std(axis=1)
    span = _span(means[0], means[-1], means)
    scaled_means = (means - means[0]) / span
    scaled_means[0], scaled_means[-1] = 0.0, 1.0
    return NoiseStats(np.asarray(separations, dtype=np.float64), means, stds, scaled_means,
                      abs(1.0 / span) * stds, target_ratio, outputs.shape[1])


def noisy_outputs(model, spec: PulseSpec, sigma: float, n_seps: int = 101, n_draws: int = 1000,
                  seed: int = 0, grid: SamplingGrid = CANONICAL_GRID) -> tuple[np.ndarray, np.ndarray]:
    """Encoder outputs (n_seps, n_draws) on independently corrupted returns.

    The noise for separation index s comes from stream (seed, ANALYSIS_NOISE, s).
    """
    seps = np.linspace(0.0, 1.0, n_seps)
    clean = return_signals(spec, seps, grid)
    out = np.empty((n_seps, n_draws))
    if sigma == 0:
        # every draw is the clean input; encode it once, in the same batch
        # layout as encoder_response, so the two agree bit for bit
        out[:] = _encode(model, clean)[:, None]
        return seps, out
    for s, x in enumerate(clean):
        noise = stream(seed, Purpose.ANALYSIS_NOISE, s).standard_normal((n_draws, x.size))
        out[s] = _encode(model, x + sigma * noise)
    return seps, out


def noisy_response_stats(model, spec: PulseSpec, target_ratio: float, n_seps: int = 101,
                         n_draws: int = 1000, seed: int = 0, sigma: float | None = None,
                         grid: SamplingGrid = CANONICAL_GRID) -> NoiseStats:
    """Mean and spread of the encoder output under detector noise.

    ``sigma`` overrides the per-sample std implied by ``target_ratio``
    (used for the zero-noise check).
    """
    from .scene import noise_sigma_for_ratio

    if sigma is None:
        sigma = noise_sigma_for_ratio(target_ratio, grid.n_samples, 1.0)
    seps, out = noisy_outputs(model, spec, sigma, n_seps, n_draws, seed, grid)
    return noise_stats_from_samples(seps, out, target_ratio)


def rank_signals(stats: Mapping[str, NoiseStats | Sequence[NoiseStats]]) -> list[str]:
    """Pulse names sorted by mean scaled std, best first.

    A sequence value is an ensemble and contributes the mean over members.
    Ties fall back to the name.
    """
    grid = None
    score = {}
    for name, entry in stats.items():
        members = [entry] if isinstance(entry, NoiseStats) else list(entry)
        if not members:
            raise ValueError(f"{name}: no statistics")
        for member in members:
            if grid is None:
                grid = member.separations
            elif member.separations.shape != grid.shape or not np.array_equal(member.separations, grid):
                raise ValueError(f"{name}: separation grid differs from the others")
        score[name] = float(np.mean([m.mean_scaled_std for m in members]))
    return sorted(score, key=lambda name: (score[name], name))


class SceneOrder(str, enum.Enum):
    FIRST_LARGER = "first_larger"
    SECOND_LARGER = "second_larger"
    INDISTINGUISHABLE = "indistinguishable"


def compare_scenes(model, spec: PulseSpec, first: SampledSignal | np.ndarray,
                   second: SampledSignal | np.ndarray, tol: float = 1e-9) -> SceneOrder:
    """Which scene has the larger separation, judged by |y - y_0| against the
    outgoing pulse's own encoding y_0. No separation labels involved."""
    x1 = first.values if isinstance(first, SampledSignal) else np.asarray(first, dtype=np.float64)
    x2 = second.values if isinstance(second, SampledSignal) else np.asarray(second, dtype=np.float64)
    ref = sample_pulse(spec, CANONICAL_GRID if x1.size == CANONICAL_GRID.n_samples
                       else SamplingGrid(n_samples=x1.size)).values
    y0, y1, y2 = _encode(model, np.stack([ref, x1, x2]))
    d1, d2 = abs(y1 - y0), abs(y2 - y0)
    if abs(d1 - d2) < tol:
        return SceneOrder.INDISTINGUISHABLE
    return SceneOrder.FIRST_LARGER if d1 > d2 else SceneOrder.SECOND_LARGER


# --- CSV ----------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def export_curves(curve: ResponseCurve | NoiseStats, path: str | os.PathLike,
                  scaled: bool = True) -> Path:
    """Write ``separation,value[,std]`` with round-trippable floats.

    NoiseStats are written as scaled (mean, std) by default, raw if
    ``scaled=False``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if isinstance(curve, NoiseStats):
            values = curve.scaled_means if scaled else curve.means
            stds = curve.scaled_stds if scaled else curve.stds
            writer.writerow(["separation", "value", "std"])
            for row in zip(curve.separations, values, stds):
                writer.writerow([_fmt(v) for v in row])
        else:
            writer.writerow(["separation", "value"])
            for row in zip(curve.separations, curve.values):
                writer.writerow([_fmt(v) for v in row])
    return path


def read_curve_csv(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with Path(path).open(newline="", encoding="ascii") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    cols = list(zip(*body)) if body else [()] * len(header)
    return {name: np.array([float(v) for v in col]) for name, col in zip(header, cols)}


def stats_from_csv(path: str | os.PathLike, target_ratio: float = float("nan")) -> NoiseStats:
    """Rebuild scaled NoiseStats from an exported ``separation,value,std`` file."""
    cols = read_curve_csv(path)
    if "std" not in cols:
        raise ValueError(f"{path}: no std column, not a noise-statistics file")
    seps = cols["separation"]
    nan = np.full_like(seps, np.nan)
    return NoiseStats(seps, nan, nan, cols["value"], cols["std"], target_ratio, 0)
