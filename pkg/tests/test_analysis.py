import locale

import numpy as np
import pytest

from range_ae.analysis import (
    DegenerateCurveError, NoiseStats, ResponseCurve, SceneOrder, compare_scenes, encoder_response,
    export_curves, monotonicity_fraction, noise_stats_from_samples, noisy_outputs,
    noisy_response_stats, rank_signals, read_curve_csv, scale_curve, stats_from_csv,
)
from range_ae.pulses import PulseSpec, evaluate_pulse
from range_ae.scene import CANONICAL_GRID, SceneConfig, noise_sigma_for_ratio, return_signal, sample_pulse

SINC = PulseSpec.named("sinc")
BESSEL = PulseSpec.named("bessel")


class FnEncoder:
    """Stand-in model whose encoder is an arbitrary function of the signal."""

    def __init__(self, fn):
        self.fn = fn

    def encode(self, x):
        return self.fn(x[:, 0, :])[:, None]


SUM = FnEncoder(lambda x: x.sum(axis=1))
FIRST = FnEncoder(lambda x: x[:, 0])
PROJECT = FnEncoder(lambda x: -x @ sample_pulse(SINC).values)


def affine(model, a, b):
    return FnEncoder(lambda x: a * model.fn(x) + b)


class TestScaleCurve:
    def test_examples(self):
        seps = [0.0, 0.5, 1.0]
        assert scale_curve(ResponseCurve(seps, [2, 3, 4])).values.tolist() == [0, 0.5, 1]
        assert scale_curve(ResponseCurve(seps, [4, 3, 2])).values.tolist() == [0, 0.5, 1]

    def test_affine_invariance(self):
        rng = np.random.default_rng(0)
        y = rng.standard_normal(50)
        seps = np.linspace(0, 1, 50)
        ref = scale_curve(ResponseCurve(seps, y)).values
        for a, b in [(-3.7, 12.0), (1e-3, -5e-3), (250.0, 0.1)]:
            out = scale_curve(ResponseCurve(seps, a * y + b)).values
            assert np.max(np.abs(out - ref)) < 1e-12
            assert out[0] == 0.0 and out[-1] == 1.0
        # power-of-two scaling without offset is exact in binary floating point
        assert np.array_equal(scale_curve(ResponseCurve(seps, 4.0 * y)).values, ref)

    def test_degenerate(self):
        with pytest.raises(DegenerateCurveError):
            scale_curve(ResponseCurve([0, 0.5, 1], [1.0, 2.0, 1.0]))
        with pytest.raises(DegenerateCurveError):
            scale_curve(ResponseCurve([0, 1], [1.0, 1.0 + 1e-17]))

    def test_curve_validation(self):
        with pytest.raises(ValueError):
            ResponseCurve([0, 1], [1.0])
        with pytest.raises(ValueError):
            ResponseCurve([0, 0], [1.0, 2.0])


class TestMonotonicity:
    def test_examples(self):
        assert monotonicity_fraction(ResponseCurve([0, 0.5, 1], [0, 0.5, 1])) == 1.0
        assert monotonicity_fraction(ResponseCurve([0, 1, 2, 3], [0, 1, 0.5, 1])) == pytest.approx(2 / 3)
        assert monotonicity_fraction(ResponseCurve([0, 1, 2, 3], [0, 0.5, 0.5, 1])) == pytest.approx(2 / 3)

    def test_too_short(self):
        with pytest.raises(ValueError):
            monotonicity_fraction(ResponseCurve([0.0], [1.0]))


class TestEncoderResponse:
    def test_first_value_is_pulse_encoding(self):
        curve = encoder_response(SUM, BESSEL, 16)
        assert curve.values[0] == sample_pulse(BESSEL).values.sum()
        assert np.array_equal(curve.separations, np.linspace(0, 1, 16))

    def test_pure(self):
        a = encoder_response(PROJECT, SINC, 32)
        b = encoder_response(PROJECT, SINC, 32)
        assert np.array_equal(a.values, b.values)

    def test_sum_encoder_closed_form(self):
        t = CANONICAL_GRID.points
        seps = np.linspace(0, 1, 9)
        expected = []
        for l in seps:
            r = 0.5 * (evaluate_pulse(t - l / 2, BESSEL) + evaluate_pulse(t + l / 2, BESSEL))
            expected.append(r.sum() / np.sqrt(np.sum(r * r)))
        assert np.allclose(encoder_response(SUM, BESSEL, 9).values, expected, rtol=1e-12, atol=0)

    def test_needs_two_points(self):
        with pytest.raises(ValueError):
            encoder_response(SUM, SINC, 1)


class TestNoiseStats:
    def test_from_samples(self):
        out = np.array([[1.0, 3.0], [4.0, 6.0], [9.0, 13.0]])
        stats = noise_stats_from_samples([0, 0.5, 1], out, 1.0)
        assert stats.means.tolist() == [2.0, 5.0, 11.0]
        assert stats.stds.tolist() == [1.0, 1.0, 2.0]
        assert stats.scaled_means.tolist() == [0.0, 1 / 3, 1.0]
        assert np.allclose(stats.scaled_stds, np.array([1, 1, 2]) / 9)
        assert stats.n_draws == 2

    def test_zero_noise_reproduces_clean_curve(self):
        stats = noisy_response_stats(PROJECT, SINC, 1.0, n_seps=11, n_draws=3, sigma=0.0)
        clean = scale_curve(encoder_response(PROJECT, SINC, 11))
        assert not stats.scaled_stds.any()
        assert np.array_equal(stats.scaled_means, clean.values)

    def test_affine_covariance(self):
        base = noisy_response_stats(SUM, BESSEL, 1.0, n_seps=11, n_draws=50, seed=3)
        for a, b in [(2.0, 0.0), (-0.3, 4.0)]:
            other = noisy_response_stats(affine(SUM, a, b), BESSEL, 1.0, n_seps=11, n_draws=50, seed=3)
            assert np.max(np.abs(other.scaled_means - base.scaled_means)) < 1e-12
            assert np.max(np.abs(other.scaled_stds - base.scaled_stds)) < 1e-12 * np.max(base.scaled_stds) + 1e-15
            assert other.scaled_means[0] == 0.0 and other.scaled_means[-1] == 1.0

    def test_first_sample_encoder_oracle(self):
        # z = x[0]: mean is the clean first sample, std is sigma itself
        n_draws = 20000
        sigma = noise_sigma_for_ratio(1.0, 1024)
        stats = noisy_response_stats(FIRST, BESSEL, 1.0, n_seps=5, n_draws=n_draws, seed=1)
        x0 = [return_signal(SceneConfig(BESSEL, l)).values[0] for l in (0.0, 1.0)]
        expected = sigma / abs(x0[1] - x0[0])
        # the sample mean carries noise too, so the span is only approximately x0[1]-x0[0]
        span_err = sigma * np.sqrt(2 / n_draws) / abs(x0[1] - x0[0])
        tol = 5 / np.sqrt(2 * n_draws) + 5 * span_err
        assert np.allclose(stats.scaled_stds, expected, rtol=tol, atol=0)
        assert np.allclose(stats.stds, sigma, rtol=5 / np.sqrt(2 * n_draws), atol=0)

    def test_seed_stability(self):
        n = 400
        a = noisy_response_stats(SUM, BESSEL, 1.0, n_seps=21, n_draws=n, seed=0).mean_scaled_std
        b = noisy_response_stats(SUM, BESSEL, 1.0, n_seps=21, n_draws=n, seed=9).mean_scaled_std
        assert abs(a - b) / a < 3 / np.sqrt(n)

    def test_draws_are_per_separation(self):
        seps, out = noisy_outputs(FIRST, SINC, 0.1, n_seps=4, n_draws=10, seed=0)
        _, again = noisy_outputs(FIRST, SINC, 0.1, n_seps=6, n_draws=10, seed=0)
        assert np.array_equal(out[0], again[0])
        assert out.shape == (4, 10)


def _stats(score, seps=(0.0, 0.5, 1.0)):
    s = np.asarray(seps)
    return NoiseStats(s, s, np.zeros_like(s), s, np.full_like(s, score), 1.0, 10)


class TestRank:
    def test_order(self):
        stats = {"sinc": _stats(0.3), "bessel": _stats(0.1), "triangle": _stats(0.2)}
        assert rank_signals(stats) == ["bessel", "triangle", "sinc"]
        reordered = dict(reversed(list(stats.items())))
        assert rank_signals(reordered) == ["bessel", "triangle", "sinc"]

    def test_ensemble_mean_and_ties(self):
        stats = {"b": [_stats(0.25), _stats(0.75)], "a": [_stats(0.5)]}
        assert rank_signals(stats) == ["a", "b"]

    def test_mismatched_grid(self):
        with pytest.raises(ValueError):
            rank_signals({"a": _stats(0.1), "b": _stats(0.2, (0.0, 0.4, 1.0))})
        with pytest.raises(ValueError):
            rank_signals({"a": []})


class TestCompare:
    def test_orders(self):
        curve = encoder_response(PROJECT, SINC, 64)
        assert monotonicity_fraction(curve) == 1.0
        x0 = sample_pulse(SINC)
        x1 = return_signal(SceneConfig(SINC, 0.4))
        assert compare_scenes(PROJECT, SINC, x0, x1) is SceneOrder.SECOND_LARGER
        assert compare_scenes(PROJECT, SINC, x1, x0) is SceneOrder.FIRST_LARGER
        assert compare_scenes(PROJECT, SINC, x1, x1) is SceneOrder.INDISTINGUISHABLE
        assert compare_scenes(PROJECT, SINC, x1.values, x1.values.copy()) is SceneOrder.INDISTINGUISHABLE


class TestCSV:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        curve = ResponseCurve(np.linspace(0, 1, 7), rng.standard_normal(7) * 1e-7)
        path = export_curves(curve, tmp_path / "c.csv")
        cols = read_curve_csv(path)
        assert np.array_equal(cols["separation"], curve.separations)
        assert np.array_equal(cols["value"], curve.values)

    def test_stats_round_trip(self, tmp_path):
        stats = noise_stats_from_samples([0, 0.5, 1], np.array([[1.0, 3.0], [4.0, 6.0], [9.0, 13.0]]), 1.0)
        path = export_curves(stats, tmp_path / "s.csv")
        assert path.read_text().splitlines()[0] == "separation,value,std"
        back = stats_from_csv(path)
        assert np.array_equal(back.scaled_stds, stats.scaled_stds)
        assert back.mean_scaled_std == stats.mean_scaled_std
        raw = read_curve_csv(export_curves(stats, tmp_path / "r.csv", scaled=False))
        assert raw["value"].tolist() == [2.0, 5.0, 11.0]

    def test_empty_curve(self, tmp_path):
        path = export_curves(ResponseCurve([], []), tmp_path / "e.csv")
        assert path.read_text() == "separation,value\n"
        assert read_curve_csv(path)["value"].size == 0

    def test_locale_independent(self, tmp_path):
        saved = locale.setlocale(locale.LC_NUMERIC)
        for name in ("de_DE.UTF-8", "de_DE.utf8", "fr_FR.UTF-8"):
            try:
                locale.setlocale(locale.LC_NUMERIC, name)
                break
            except locale.Error:
                continue
        try:
            path = export_curves(ResponseCurve([0.0, 1.0], [0.25, 1.5]), tmp_path / "l.csv")
        finally:
            locale.setlocale(locale.LC_NUMERIC, saved)
        assert path.read_text() == "separation,value\n0,0.25\n1,1.5\n"

    def test_not_a_stats_file(self, tmp_path):
        path = export_curves(ResponseCurve([0.0, 1.0], [0.0, 1.0]), tmp_path / "c.csv")
        with pytest.raises(ValueError):
            stats_from_csv(path)


@pytest.mark.slow
def test_compare_under_noise_on_trained_model():
    from range_ae.scene import corrupt
    from range_ae.streams import Purpose, stream
    from range_ae.training import TrainConfig, train_autoencoder

    model, _ = train_autoencoder("fourier", TrainConfig(BESSEL, target_ratio=1.0, epochs=500))
    near = return_signal(SceneConfig(BESSEL, 0.3))
    far = return_signal(SceneConfig(BESSEL, 0.7))
    sigma = noise_sigma_for_ratio(1.0, 1024)
    rng = stream(0, Purpose.SCENE_NOISE, 1)
    hits = sum(
        compare_scenes(model, BESSEL, corrupt(near, sigma, rng), corrupt(far, sigma, rng))
        is SceneOrder.SECOND_LARGER
        for _ in range(1000)
    )
    assert hits >= 950
