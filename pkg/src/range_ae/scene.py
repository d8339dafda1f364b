"""Sampled outgoing pulses, two-scatterer returns and detector noise."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .pulses import PulseSpec, evaluate_pulse


@dataclass(frozen=True)
class SamplingGrid:
    """Midpoint grid on [t_min, t_max]; symmetric about 0, no sample at 0."""

    t_min: float = -5.0
    t_max: float = 5.0
    n_samples: int = 1024

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("grid needs at least one sample")
        if not self.t_max > self.t_min:
            raise ValueError("empty time window")

    @property
    def window(self) -> float:
        return self.t_max - self.t_min

    @property
    def points(self) -> np.ndarray:
        k = np.arange(self.n_samples, dtype=np.float64)
        return self.t_min + (k + 0.5) * (self.window / self.n_samples)


CANONICAL_GRID = SamplingGrid()


@dataclass
class SampledSignal:
    values: np.ndarray
    grid: SamplingGrid = CANONICAL_GRID
    normalized: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.grid.n_samples,):
            raise ValueError(
                f"expected {self.grid.n_samples} samples, got shape {self.values.shape}"
            )

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


@dataclass(frozen=True)
class SceneConfig:
    pulse: PulseSpec
    separation: float

    def __post_init__(self):
        if not 0.0 <= self.separation <= 1.0:
            raise ValueError(f"separation must lie in [0, 1], got {self.separation}")


@dataclass(frozen=True)
class NoiseModel:
    """White Gaussian detector noise at a given noise-to-signal norm ratio.

    ``target_ratio`` is ||xi|| / ||X(0)||, the quantity the experiments call
    SNR; ``sigma`` is the matching per-sample standard deviation.
    """

    target_ratio: float
    sigma: float = field(default=float("nan"))
    seed: int = 0

    @classmethod
    def for_ratio(cls, target_ratio: float, n_samples: int = 1024,
                  ref_norm: float = 1.0, seed: int = 0) -> "NoiseModel":
        return cls(target_ratio, noise_sigma_for_ratio(target_ratio, n_samples, ref_norm), seed)


def normalize(values: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(values)
    if norm == 0 or not np.isfinite(norm):
        raise ValueError("cannot normalize a zero or non-finite signal")
    return values / norm


def sample_pulse(spec: PulseSpec, grid: SamplingGrid = CANONICAL_GRID) -> SampledSignal:
    values = np.asarray(evaluate_pulse(grid.points, spec), dtype=np.float64)
    try:
        values = normalize(values)
    except ValueError as exc:
        raise ValueError(f"degenerate pulse {spec.kind.value}: {exc}") from None
    return SampledSignal(values, grid, normalized=True)


def clean_return(spec: PulseSpec, separation: float, t: np.ndarray) -> np.ndarray:
    """Unnormalized noiseless return: mean of the pulse shifted by +-l/2."""
    if separation == 0.0:
        return np.asarray(evaluate_pulse(t, spec), dtype=np.float64)
    half = 0.5 * separation
    return 0.5 * (evaluate_pulse(t - half, spec) + evaluate_pulse(t + half, spec))


def return_signal(scene: SceneConfig, grid: SamplingGrid = CANONICAL_GRID) -> SampledSignal:
    values = normalize(clean_return(scene.pulse, scene.separation, grid.points))
    return SampledSignal(values, grid, normalized=True)


def return_signals(spec: PulseSpec, separations, grid: SamplingGrid = CANONICAL_GRID) -> np.ndarray:
    """Stack of normalized clean returns, one row per separation."""
    return np.stack([
        return_signal(SceneConfig(spec, float(l)), grid).values for l in separations
    ])


def noise_sigma_for_ratio(target_ratio: float, n_samples: int, ref_norm: float = 1.0) -> float:
    """Per-sample std giving E[||xi||^2]^(1/2) = target_ratio * ref_norm."""
    if not target_ratio > 0:
        raise ValueError(f"target ratio must be positive, got {target_ratio}")
    if not ref_norm > 0:
        raise ValueError(f"reference norm must be positive, got {ref_norm}")
    if n_samples < 1:
        raise ValueError(f"need at least one sample, got {n_samples}")
    return target_ratio * ref_norm / math.sqrt(n_samples)


def corrupt(signal: SampledSignal, noise: NoiseModel | float,
            rng: np.random.Generator) -> SampledSignal:
    """Add i.i.d. N(0, sigma^2) noise. The result is not renormalized."""
    sigma = noise.sigma if isinstance(noise, NoiseModel) else float(noise)
    if not sigma >= 0:
        raise ValueError("noise std must be non-negative")
    noisy = signal.values + sigma * rng.standard_normal(signal.values.shape)
    return SampledSignal(noisy, signal.grid, normalized=False)
