"""The three encoders, the shared decoder, and JSON checkpoints."""
from __future__ import annotations

import base64
import enum
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nn.layers import (
    GELU, Conv1d, Flatten, FourierLowpass, Linear, MaxPool1d, Reshape,
    Sequential, Tanh,
)

FORMAT_VERSION = 1
N_SAMPLES = 1024
DECODER_HIDDEN = 256


class EncoderKind(str, enum.Enum):
    CONV = "conv"
    LINEAR = "linear"
    FOURIER = "fourier"


class CheckpointError(ValueError):
    """Malformed, mismatched or incompatible checkpoint."""


# Output shapes after each table row, batch dimension dropped. The
# convolutional rows fuse pool+GELU and flatten+GELU into a single entry.
TABLE_SHAPES = {
    EncoderKind.CONV: [(32, 961), (32, 240), (32, 209), (32, 52), (32, 37), (32, 9),
                       (32, 1), (32,), (1,)],
    EncoderKind.LINEAR: [(1024,), (256,), (64,), (8,), (1,)],
    EncoderKind.FOURIER: [(1, 22), (22,), (22,), (22,), (22,), (22,), (1,)],
}
DECODER_SHAPES = [(DECODER_HIDDEN,), (N_SAMPLES,), (1, N_SAMPLES)]


def _rows(*groups):
    """Flatten [[layers of row 1], [layers of row 2], ...] and record row ends."""
    layers, ends = [], []
    for group in groups:
        layers.extend(group)
        ends.append(len(layers) - 1)
    return layers, ends


def build_conv_encoder(rng=None) -> tuple[Sequential, list[int]]:
    return _rows(
        [Conv1d(1, 32, 64, rng)],
        [MaxPool1d(4), GELU()],
        [Conv1d(32, 32, 32, rng)],
        [MaxPool1d(4), GELU()],
        [Conv1d(32, 32, 16, rng)],
        [MaxPool1d(4), GELU()],
        [Conv1d(32, 32, 9, rng)],
        [Flatten(), GELU()],
        [Linear(32, 1, rng)],
    )


def build_linear_encoder(rng=None) -> tuple[list, list[int]]:
    return _rows(
        [Flatten()],
        [Linear(N_SAMPLES, 256, rng), GELU()],
        [Linear(256, 64, rng), GELU()],
        [Linear(64, 8, rng), GELU()],
        [Linear(8, 1, rng)],
    )


def build_fourier_encoder(rng=None) -> tuple[list, list[int]]:
    blocks = [[Linear(22, 22, rng), GELU()] for _ in range(4)]
    return _rows(
        [FourierLowpass(N_SAMPLES, 11)],
        [Flatten()],
        *blocks,
        [Linear(22, 1, rng)],
    )


def build_decoder(rng=None) -> tuple[list, list[int]]:
    return _rows(
        [Linear(1, DECODER_HIDDEN, rng), Tanh()],
        [Linear(DECODER_HIDDEN, N_SAMPLES, rng)],
        [Reshape(1, N_SAMPLES)],
    )


_ENCODER_BUILDERS = {
    EncoderKind.CONV: build_conv_encoder,
    EncoderKind.LINEAR: build_linear_encoder,
    EncoderKind.FOURIER: build_fourier_encoder,
}


@dataclass
class AutoencoderModel:
    kind: EncoderKind
    encoder: Sequential
    decoder: Sequential
    encoder_rows: list[int]
    decoder_rows: list[int]
    metadata: dict = field(default_factory=dict)

    @property
    def n_params(self) -> int:
        return sum(v.size for _, v in self.named_params())

    def named_params(self):
        for name, value in self.encoder.named_params():
            yield "encoder." + name, value
        for name, value in self.decoder.named_params():
            yield "decoder." + name, value

    def params(self) -> dict[str, np.ndarray]:
        return dict(self.named_params())

    def grads(self) -> dict[str, np.ndarray]:
        out = {"encoder." + k: v for k, v in self.encoder.named_grads()}
        out.update({"decoder." + k: v for k, v in self.decoder.named_grads()})
        return out

    def encode(self, x: np.ndarray) -> np.ndarray:
        _check_input(x)
        return self.encoder.forward(x)

    def decode(self, z: np.ndarray) -> np.ndarray:
        return self.decoder.forward(z)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        z = self.encode(x)
        return z, self.decode(z)

    def backward(self, grad_xhat: np.ndarray) -> None:
        """Fill layer grads from d(loss)/d(X_hat); input gradient is discarded."""
        grad_z = self.decoder.backward(grad_xhat)
        self.encoder.backward(grad_z, need_input_grad=False)

    def table_trace(self, batch: int = 1) -> tuple[list[tuple], list[tuple]]:
        """Per-row output shapes (batch dim included) for encoder and decoder."""
        enc = self.encoder.shape_trace((batch, 1, N_SAMPLES))
        dec = self.decoder.shape_trace(enc[-1])
        return [enc[i] for i in self.encoder_rows], [dec[i] for i in self.decoder_rows]


def _check_input(x: np.ndarray) -> None:
    if x.ndim != 3 or x.shape[1:] != (1, N_SAMPLES):
        raise ValueError(f"expected input of shape (B, 1, {N_SAMPLES}), got {x.shape}")


def build_model(kind: EncoderKind | str, rng: np.random.Generator | None = None,
                metadata: dict | None = None) -> AutoencoderModel:
    """Assemble an autoencoder; ``rng=None`` gives zero parameters (for loading).

    Parameters are drawn in layer order, encoder first. Layer shapes are
    checked against the architecture tables here rather than trusted.
    """
    kind = EncoderKind(kind)
    enc_layers, enc_rows = _ENCODER_BUILDERS[kind](rng)
    dec_layers, dec_rows = build_decoder(rng)
    model = AutoencoderModel(kind, Sequential(enc_layers), Sequential(dec_layers),
                             enc_rows, dec_rows, dict(metadata or {}))
    enc_trace, dec_trace = model.table_trace(batch=1)
    if [s[1:] for s in enc_trace] != TABLE_SHAPES[kind]:
        raise AssertionError(f"{kind.value} encoder trace {enc_trace} deviates from its table")
    if [s[1:] for s in dec_trace] != DECODER_SHAPES:
        raise AssertionError(f"decoder trace {dec_trace} deviates from its table")
    return model


# --- checkpoints --------------------------------------------------------------

def encode_array(a: np.ndarray) -> dict:
    data = np.ascontiguousarray(a, dtype="<f8").tobytes()
    return {"shape": list(a.shape), "data": base64.b64encode(data).decode("ascii")}


def decode_array(entry: dict) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in entry["shape"])
        raw = base64.b64decode(entry["data"], validate=True)
        arr = np.frombuffer(raw, dtype="<f8")
        return arr.reshape(shape).astype(np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"corrupt array entry: {exc}") from None


def model_to_dict(model: AutoencoderModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "encoder_kind": model.kind.value,
        "metadata": model.metadata,
        "layers": [{"name": name, **encode_array(value)} for name, value in model.named_params()],
    }


def model_from_dict(doc: dict, expected_kind: EncoderKind | str | None = None) -> AutoencoderModel:
    if not isinstance(doc, dict):
        raise CheckpointError("checkpoint root must be an object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format_version {version!r} (expected {FORMAT_VERSION})")
    try:
        kind = EncoderKind(doc["encoder_kind"])
    except (KeyError, ValueError):
        raise CheckpointError(f"unknown encoder_kind {doc.get('encoder_kind')!r}") from None
    if expected_kind is not None and kind != EncoderKind(expected_kind):
        raise CheckpointError(
            f"checkpoint holds a {kind.value} encoder, expected {EncoderKind(expected_kind).value}"
        )
    model = build_model(kind, metadata=doc.get("metadata") or {})
    params = model.params()
    layers = doc.get("layers")
    if not isinstance(layers, list):
        raise CheckpointError("missing layer list")
    names = [entry.get("name") for entry in layers]
    if names != list(params):
        raise CheckpointError(f"layer names do not match a {kind.value} model")
    for entry in layers:
        value = decode_array(entry)
        target = params[entry["name"]]
        if value.shape != target.shape:
            raise CheckpointError(f"{entry['name']}: shape {value.shape}, expected {target.shape}")
        target[...] = value
    return model


def dumps_model(model: AutoencoderModel) -> str:
    return json.dumps(model_to_dict(model), indent=1, sort_keys=True) + "\n"


def save_checkpoint(model: AutoencoderModel, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(dumps_model(model), encoding="utf-8")
    os.replace(tmp, path)
    return path


def load_checkpoint(path: str | os.PathLike, expected_kind: EncoderKind | str | None = None) -> AutoencoderModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not valid JSON ({exc})") from None
    return model_from_dict(doc, expected_kind)


def describe(model: AutoencoderModel) -> str:
    enc_trace, dec_trace = model.table_trace(batch=1)
    lines = [f"encoder: {model.kind.value}", f"parameters: {model.n_params}"]
    lines += [f"  {name}: {list(v.shape)}" for name, v in model.named_params()]
    lines.append("encoder rows: " + ", ".join(str(s[1:]) for s in enc_trace))
    lines.append("decoder rows: " + ", ".join(str(s[1:]) for s in dec_trace))
    for key in sorted(model.metadata):
        lines.append(f"{key}: {model.metadata[key]}")
    return "\n".join(lines)
