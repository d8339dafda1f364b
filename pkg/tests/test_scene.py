import numpy as np
import pytest
from scipy.special import spherical_jn

from range_ae.pulses import BESSEL_COEFFS, BESSEL_ORDERS, PulseSpec
from range_ae.scene import (
    CANONICAL_GRID, NoiseModel, SampledSignal, SamplingGrid, SceneConfig, corrupt,
    noise_sigma_for_ratio, normalize, return_signal, return_signals, sample_pulse,
)
from range_ae.streams import Purpose, stream

SPECS = {name: PulseSpec.named(name) for name in ("sinc", "triangle", "bessel")}


def _oracle_bessel(t):
    return sum(c * spherical_jn(n, 2 * np.pi * t) for c, n in zip(BESSEL_COEFFS, BESSEL_ORDERS))


def test_grid_is_symmetric_midpoint():
    t = CANONICAL_GRID.points
    assert t.size == 1024
    assert t[0] == pytest.approx(-5 + 5 / 1024)
    assert np.all(t != 0)
    assert np.allclose(t, -t[::-1], atol=1e-15)
    with pytest.raises(ValueError):
        SamplingGrid(1.0, 1.0, 4)


@pytest.mark.parametrize("name", SPECS)
def test_unit_norm(name):
    sig = sample_pulse(SPECS[name])
    assert sig.norm == pytest.approx(1.0, abs=1e-14)
    assert sig.normalized


def test_sinc_peak_straddles_origin():
    v = sample_pulse(SPECS["sinc"]).values
    assert set(np.argsort(v)[-2:]) == {511, 512}


def test_triangle_antisymmetric():
    v = sample_pulse(SPECS["triangle"]).values
    assert np.max(np.abs(v + v[::-1])) < 1e-15


@pytest.mark.parametrize("name", SPECS)
def test_zero_separation_is_pulse(name):
    spec = SPECS[name]
    diff = return_signal(SceneConfig(spec, 0.0)).values - sample_pulse(spec).values
    assert np.max(np.abs(diff)) < 1e-12


def test_sinc_return_even():
    v = return_signal(SceneConfig(SPECS["sinc"], 0.5)).values
    assert np.max(np.abs(v - v[::-1])) < 1e-14


def test_bessel_return_against_oracle():
    t = CANONICAL_GRID.points
    raw = 0.5 * (_oracle_bessel(t - 0.25) + _oracle_bessel(t + 0.25))
    expected = raw / np.linalg.norm(raw)
    got = return_signal(SceneConfig(SPECS["bessel"], 0.5)).values
    assert np.max(np.abs(got - expected)) < 1e-10


def test_return_signals_stack():
    seps = [0.0, 0.3, 1.0]
    rows = return_signals(SPECS["triangle"], seps)
    assert rows.shape == (3, 1024)
    assert np.array_equal(rows[1], return_signal(SceneConfig(SPECS["triangle"], 0.3)).values)


def test_separation_bounds():
    with pytest.raises(ValueError):
        SceneConfig(SPECS["sinc"], 1.5)
    with pytest.raises(ValueError):
        SceneConfig(SPECS["sinc"], -0.1)


def test_shape_and_normalize_errors():
    with pytest.raises(ValueError):
        SampledSignal(np.zeros(10))
    with pytest.raises(ValueError):
        normalize(np.zeros(4))


@pytest.mark.parametrize("args, expected", [((1, 1024, 1), 1 / 32), ((2, 1024, 1), 1 / 16),
                                            ((1, 1, 1), 1.0)])
def test_noise_sigma(args, expected):
    assert noise_sigma_for_ratio(*args) == pytest.approx(expected, rel=1e-15)


def test_noise_sigma_monte_carlo():
    sigma = noise_sigma_for_ratio(1.0, 1024, 1.0)
    xi = sigma * np.random.default_rng(5).standard_normal((4000, 1024))
    assert np.sqrt(np.mean(np.sum(xi**2, axis=1))) == pytest.approx(1.0, rel=0.01)


@pytest.mark.parametrize("bad", [0.0, -1.0])
def test_noise_sigma_rejects(bad):
    with pytest.raises(ValueError):
        noise_sigma_for_ratio(bad, 1024)


def test_zero_noise_is_identity():
    sig = sample_pulse(SPECS["bessel"])
    out = corrupt(sig, 0.0, stream(0, Purpose.SCENE_NOISE))
    assert np.array_equal(out.values, sig.values)
    assert not out.normalized


def test_noise_mean_zero():
    sig = SampledSignal(np.zeros(1024))
    sigma = 0.5
    rng = stream(3, Purpose.SCENE_NOISE)
    draws = np.stack([corrupt(sig, sigma, rng).values for _ in range(100)])  # 1e5 samples
    assert abs(draws.mean()) < 4 * sigma / np.sqrt(draws.size)


def test_noise_norm_at_unit_ratio():
    sig = SampledSignal(np.zeros(1024))
    model = NoiseModel.for_ratio(1.0)
    rng = stream(4, Purpose.SCENE_NOISE)
    norms = [corrupt(sig, model, rng).norm for _ in range(1000)]
    assert np.mean(norms) == pytest.approx(1.0, rel=0.02)


def test_noisy_signal_not_renormalized():
    sig = sample_pulse(SPECS["sinc"])
    out = corrupt(sig, NoiseModel.for_ratio(2.0), stream(0, Purpose.SCENE_NOISE))
    assert out.norm > 1.5


def test_streams_reproducible_and_independent():
    a = stream(7, 1, 2, 3).standard_normal(5)
    b = stream(7, 1, 2, 3).standard_normal(5)
    c = stream(7, 1, 2, 4).standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    with pytest.raises(ValueError):
        stream(-1)
