import json

import numpy as np
import pytest

from range_ae.architectures import (
    DECODER_SHAPES, TABLE_SHAPES, CheckpointError, EncoderKind, build_model, describe,
    dumps_model, load_checkpoint, model_from_dict, model_to_dict, save_checkpoint,
)
from range_ae.pulses import PulseSpec
from range_ae.scene import sample_pulse
from range_ae.streams import Purpose, stream


def _count(layer_specs):
    """Parameter count from (kind, dims) descriptions, independent of the builders."""
    total = 0
    for kind, dims in layer_specs:
        if kind == "conv":
            c_in, c_out, k = dims
            total += c_out * c_in * k + c_out
        else:
            f_in, f_out = dims
            total += f_out * f_in + f_out
    return total


DECODER = [("lin", (1, 256)), ("lin", (256, 1024))]
EXPECTED_PARAMS = {
    EncoderKind.CONV: _count([("conv", (1, 32, 64)), ("conv", (32, 32, 32)), ("conv", (32, 32, 16)),
                              ("conv", (32, 32, 9)), ("lin", (32, 1))] + DECODER),
    EncoderKind.LINEAR: _count([("lin", (1024, 256)), ("lin", (256, 64)), ("lin", (64, 8)),
                                ("lin", (8, 1))] + DECODER),
    EncoderKind.FOURIER: _count([("lin", (22, 22))] * 4 + [("lin", (22, 1))] + DECODER),
}


@pytest.fixture(scope="module")
def models():
    return {k: build_model(k, stream(0, Purpose.INIT, 0)) for k in EncoderKind}


def test_conv_trace_matches_table(models):
    enc, dec = models[EncoderKind.CONV].table_trace(batch=2)
    sizes = [s[-1] for s in enc]
    assert sizes == [961, 240, 209, 52, 37, 9, 1, 32, 1]
    assert enc[-1] == (2, 1)
    assert dec[-1] == (2, 1, 1024)


def test_linear_trace(models):
    enc, _ = models[EncoderKind.LINEAR].table_trace(batch=3)
    assert [s[1:] for s in enc] == [(1024,), (256,), (64,), (8,), (1,)]


def test_fourier_trace(models):
    enc, dec = models[EncoderKind.FOURIER].table_trace(batch=1)
    assert enc[0] == (1, 1, 22)
    assert [s[1:] for s in enc] == TABLE_SHAPES[EncoderKind.FOURIER]
    assert [s[1:] for s in dec] == DECODER_SHAPES


@pytest.mark.parametrize("kind", list(EncoderKind))
def test_parameter_counts(models, kind):
    assert models[kind].n_params == EXPECTED_PARAMS[kind]


def test_known_totals():
    assert EXPECTED_PARAMS[EncoderKind.FOURIER] == 2047 + 263680
    assert EXPECTED_PARAMS[EncoderKind.CONV] == 60577 + 263680


@pytest.mark.parametrize("kind", list(EncoderKind))
def test_forward_outputs(models, kind):
    x = np.stack([sample_pulse(PulseSpec.named("bessel")).values] * 2)[:, None, :]
    z, xhat = models[kind].forward(x)
    assert z.shape == (2, 1) and xhat.shape == (2, 1, 1024)
    assert np.all(np.isfinite(xhat))
    z1, xhat1 = models[kind].forward(x[:1])
    assert np.allclose(z1, z[:1], rtol=0, atol=1e-14)
    assert np.allclose(xhat1, xhat[:1], rtol=0, atol=1e-14)


def test_deterministic_build():
    a = build_model("conv", stream(5, Purpose.INIT, 0))
    b = build_model("conv", stream(5, Purpose.INIT, 0))
    assert dumps_model(a) == dumps_model(b)
    c = build_model("conv", stream(5, Purpose.INIT, 1))
    assert dumps_model(a) != dumps_model(c)


def test_wrong_input_shape(models):
    with pytest.raises(ValueError):
        models[EncoderKind.FOURIER].encode(np.zeros((2, 1024)))


def test_backward_fills_all_grads(models):
    m = models[EncoderKind.CONV]
    x = np.random.default_rng(0).standard_normal((2, 1, 1024))
    _, xhat = m.forward(x)
    m.backward(np.ones_like(xhat))
    grads = m.grads()
    assert set(grads) == set(m.params())
    assert all(g.shape == m.params()[k].shape for k, g in grads.items())


class TestCheckpoint:
    def test_round_trip_bytes(self, models, tmp_path):
        m = models[EncoderKind.FOURIER]
        m.metadata = {"pulse": "bessel", "member": 3}
        p1 = save_checkpoint(m, tmp_path / "a.json")
        loaded = load_checkpoint(p1)
        p2 = save_checkpoint(loaded, tmp_path / "b.json")
        assert p1.read_bytes() == p2.read_bytes()
        x = np.random.default_rng(1).standard_normal((3, 1, 1024))
        assert np.array_equal(m.forward(x)[1], loaded.forward(x)[1])
        assert loaded.metadata == {"pulse": "bessel", "member": 3}

    def test_kind_mismatch(self, models, tmp_path):
        path = save_checkpoint(models[EncoderKind.LINEAR], tmp_path / "lin.json")
        with pytest.raises(CheckpointError, match="linear"):
            load_checkpoint(path, expected_kind=EncoderKind.CONV)

    def test_bad_version(self, models):
        doc = model_to_dict(models[EncoderKind.FOURIER])
        doc["format_version"] = 99
        with pytest.raises(CheckpointError):
            model_from_dict(doc)

    def test_bad_shape(self, models):
        doc = json.loads(dumps_model(models[EncoderKind.FOURIER]))
        doc["layers"][0]["shape"] = [11, 44]
        with pytest.raises(CheckpointError):
            model_from_dict(doc)

    def test_renamed_layer(self, models):
        doc = model_to_dict(models[EncoderKind.FOURIER])
        doc["layers"][0]["name"] = "encoder.bogus"
        with pytest.raises(CheckpointError):
            model_from_dict(doc)

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "x.json"
        path.write_text("{not json")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_describe(self, models):
        text = describe(models[EncoderKind.FOURIER])
        assert "encoder: fourier" in text
        assert f"parameters: {EXPECTED_PARAMS[EncoderKind.FOURIER]}" in text
