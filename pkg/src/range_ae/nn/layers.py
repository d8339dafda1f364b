"""Layers with hand-written backward passes.

Arrays are float64 numpy arrays laid out (batch, channels, length) or
(batch, features). Each layer caches what its backward pass needs during
``forward`` and drops the cache in ``backward``; calling ``backward``
without a fresh forward raises ``StaleCacheError``.
"""
from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# upper bound on im2col elements materialized at once by conv1d
_CONV_CHUNK_ELEMS = 1 << 23


class StaleCacheError(RuntimeError):
    """backward() called without a matching forward()."""


# --- functional forms -------------------------------------------------------

def conv1d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Valid, stride-1 cross-correlation.

    out[b, o, i] = bias[o] + sum_{c, k} x[b, c, i + k] * weight[o, c, k]
    """
    if x.ndim != 3 or weight.ndim != 3:
        raise ValueError(f"conv1d expects (B,C,L) input and (O,C,K) weight, got {x.shape}, {weight.shape}")
    b, c_in, length = x.shape
    c_out, c_w, k = weight.shape
    if c_w != c_in:
        raise ValueError(f"weight expects {c_w} input channels, input has {c_in}")
    if bias.shape != (c_out,):
        raise ValueError(f"bias shape {bias.shape} does not match {c_out} output channels")
    if length < k:
        raise ValueError(f"input length {length} shorter than kernel {k}")
    l_out = length - k + 1
    out = np.empty((b, c_out, l_out))
    windows = sliding_window_view(x, k, axis=2)  # (B, C, L_out, K), no copy
    step = max(1, _CONV_CHUNK_ELEMS // (l_out * c_in * k))
    for s in range(0, b, step):
        y = np.tensordot(windows[s:s + step], weight, axes=([1, 3], [1, 2]))  # (b, L_out, O)
        out[s:s + step] = y.transpose(0, 2, 1)
    out += bias[None, :, None]
    return out


def conv1d_backward(grad_out: np.ndarray, x: np.ndarray, weight: np.ndarray):
    """Gradients of conv1d_forward: (grad_input, grad_weight, grad_bias)."""
    b, c_in, length = x.shape
    c_out, _, k = weight.shape
    l_out = length - k + 1
    if grad_out.shape != (b, c_out, l_out):
        raise ValueError(f"grad shape {grad_out.shape} does not match output {(b, c_out, l_out)}")
    grad_bias = grad_out.sum(axis=(0, 2))

    grad_weight = np.zeros_like(weight)
    windows = sliding_window_view(x, k, axis=2)
    step = max(1, _CONV_CHUNK_ELEMS // (l_out * c_in * k))
    for s in range(0, b, step):
        grad_weight += np.tensordot(grad_out[s:s + step], windows[s:s + step], axes=([0, 2], [0, 2]))

    # full correlation of grad_out with the flipped kernel
    padded = np.pad(grad_out, ((0, 0), (0, 0), (k - 1, k - 1)))
    gwin = sliding_window_view(padded, k, axis=2)  # (B, O, L, K)
    flipped = weight[:, :, ::-1]
    grad_input = np.empty_like(x)
    step = max(1, _CONV_CHUNK_ELEMS // (length * c_out * k))
    for s in range(0, b, step):
        y = np.tensordot(gwin[s:s + step], flipped, axes=([1, 3], [0, 2]))  # (b, L, C)
        grad_input[s:s + step] = y.transpose(0, 2, 1)
    return grad_input, grad_weight, grad_bias


def maxpool1d_forward(x: np.ndarray, kernel: int = 4):
    """Non-overlapping max pool; trailing L % kernel samples are dropped.

    Returns the pooled array and the within-window argmax (first max wins).
    """
    b, c, length = x.shape
    n = length // kernel
    if n == 0:
        raise ValueError(f"input length {length} shorter than pool kernel {kernel}")
    win = x[:, :, :n * kernel].reshape(b, c, n, kernel)
    idx = win.argmax(axis=3)
    out = np.take_along_axis(win, idx[..., None], axis=3)[..., 0]
    return out, idx


def maxpool1d_backward(grad_out: np.ndarray, idx: np.ndarray, length: int, kernel: int = 4) -> np.ndarray:
    b, c, n = grad_out.shape
    grad = np.zeros((b, c, n, kernel))
    np.put_along_axis(grad, idx[..., None], grad_out[..., None], axis=3)
    out = np.zeros((b, c, length))
    out[:, :, :n * kernel] = grad.reshape(b, c, n * kernel)
    return out


def gelu(x: np.ndarray) -> np.ndarray:
    """x * Phi(x) with the exact error-function CDF."""
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    return cdf + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def linear_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise ValueError(f"linear: bias {bias.shape} incompatible with weight {weight.shape}")
    return x @ weight.T + bias


def linear_backward(grad_out: np.ndarray, x: np.ndarray, weight: np.ndarray):
    """(grad_input, grad_weight, grad_bias) of linear_forward."""
    return grad_out @ weight, grad_out.T @ x, grad_out.sum(axis=0)


def lowpass_bins(n_samples: int = 1024, window: float = 10.0, cutoff: float = 1.0) -> int:
    """Number of DFT bins k >= 0 with frequency k / window <= cutoff."""
    return min(n_samples, int(math.floor(cutoff * window + 1e-9)) + 1)


def dft_basis(n_samples: int, n_bins: int) -> np.ndarray:
    """(N, 2 * n_bins) real matrix mapping a signal to [Re X_0.., Im X_0..]
    under the orthonormal (1/sqrt(N)) forward DFT.

    With this scaling a unit-norm signal whose power sits below the cutoff
    yields a feature vector of norm close to 1. Under 1/N scaling the
    features shrink to O(1/sqrt(N)) and training stalls at the batch-mean
    reconstruction.
    """
    n = np.arange(n_samples)[:, None]
    k = np.arange(n_bins)[None, :]
    phase = 2.0 * np.pi * ((n * k) % n_samples) / n_samples
    return np.concatenate([np.cos(phase), -np.sin(phase)], axis=1) / math.sqrt(n_samples)


def fourier_lowpass_features(x: np.ndarray, n_bins: int = 11) -> np.ndarray:
    """(B, 1, N) signals -> (B, 2 * n_bins) [real_0..real_{n-1}, imag_0..imag_{n-1}],
    orthonormal DFT scaling."""
    if x.ndim == 3:
        if x.shape[1] != 1:
            raise ValueError(f"expected a single channel, got {x.shape[1]}")
        x = x[:, 0, :]
    return x @ dft_basis(x.shape[-1], n_bins)


def init_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """Uniform on [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


# --- layer objects ----------------------------------------------------------

class Layer:
    """Base class. Parameter-free layers leave ``params`` empty."""

    name = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def output_shape(self, shape: tuple) -> tuple:
        return shape

    def _take_cache(self):
        if self._cache is None:
            raise StaleCacheError(f"{self.name}: backward without a matching forward")
        cache, self._cache = self._cache, None
        return cache

    def __repr__(self):
        return f"{type(self).__name__}()"


class Conv1d(Layer):
    name = "conv1d"

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator | None = None):
        super().__init__()
        self.in_channels, self.out_channels, self.kernel_size = in_channels, out_channels, kernel_size
        shape = (out_channels, in_channels, kernel_size)
        fan_in = in_channels * kernel_size
        if rng is None:
            self.params["weight"], self.params["bias"] = np.zeros(shape), np.zeros(out_channels)
        else:
            self.params["weight"] = init_uniform(rng, shape, fan_in)
            self.params["bias"] = init_uniform(rng, (out_channels,), fan_in)

    def forward(self, x):
        self._cache = x
        return conv1d_forward(x, self.params["weight"], self.params["bias"])

    def backward(self, grad):
        x = self._take_cache()
        gx, gw, gb = conv1d_backward(grad, x, self.params["weight"])
        self.grads["weight"], self.grads["bias"] = gw, gb
        return gx

    def output_shape(self, shape):
        b, c, length = shape
        if c != self.in_channels:
            raise ValueError(f"conv1d expects {self.in_channels} channels, got {c}")
        return (b, self.out_channels, length - self.kernel_size + 1)

    def __repr__(self):
        return f"Conv1d({self.in_channels}, {self.out_channels}, kernel_size={self.kernel_size})"


class MaxPool1d(Layer):
    name = "maxpool1d"

    def __init__(self, kernel_size: int = 4):
        super().__init__()
        self.kernel_size = kernel_size

    def forward(self, x):
        out, idx = maxpool1d_forward(x, self.kernel_size)
        self._cache = (idx, x.shape[2])
        return out

    def backward(self, grad):
        idx, length = self._take_cache()
        return maxpool1d_backward(grad, idx, length, self.kernel_size)

    def output_shape(self, shape):
        b, c, length = shape
        return (b, c, length // self.kernel_size)

    def __repr__(self):
        return f"MaxPool1d(kernel_size={self.kernel_size})"


class GELU(Layer):
    name = "gelu"

    def forward(self, x):
        self._cache = x
        return gelu(x)

    def backward(self, grad):
        return grad * gelu_grad(self._take_cache())


class Tanh(Layer):
    name = "tanh"

    def forward(self, x):
        y = np.tanh(x)
        self._cache = y
        return y

    def backward(self, grad):
        y = self._take_cache()
        return grad * (1.0 - y * y)


class Linear(Layer):
    name = "linear"

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator | None = None):
        super().__init__()
        self.in_features, self.out_features = in_features, out_features
        shape = (out_features, in_features)
        if rng is None:
            self.params["weight"], self.params["bias"] = np.zeros(shape), np.zeros(out_features)
        else:
            self.params["weight"] = init_uniform(rng, shape, in_features)
            self.params["bias"] = init_uniform(rng, (out_features,), in_features)

    def forward(self, x):
        self._cache = x
        return linear_forward(x, self.params["weight"], self.params["bias"])

    def backward(self, grad):
        x = self._take_cache()
        gx, gw, gb = linear_backward(grad, x, self.params["weight"])
        self.grads["weight"], self.grads["bias"] = gw, gb
        return gx

    def output_shape(self, shape):
        b, f = shape
        if f != self.in_features:
            raise ValueError(f"linear expects {self.in_features} features, got {f}")
        return (b, self.out_features)

    def __repr__(self):
        return f"Linear({self.in_features}, {self.out_features})"


class Flatten(Layer):
    name = "flatten"

    def forward(self, x):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._take_cache())

    def output_shape(self, shape):
        return (shape[0], math.prod(shape[1:]))


class Reshape(Layer):
    name = "reshape"

    def __init__(self, *shape: int):
        super().__init__()
        self.shape = shape

    def forward(self, x):
        self._cache = x.shape
        return x.reshape(x.shape[0], *self.shape)

    def backward(self, grad):
        return grad.reshape(self._take_cache())

    def output_shape(self, shape):
        if math.prod(shape[1:]) != math.prod(self.shape):
            raise ValueError(f"cannot reshape {shape[1:]} to {self.shape}")
        return (shape[0], *self.shape)

    def __repr__(self):
        return f"Reshape{self.shape}"


class FourierLowpass(Layer):
    """Fixed low-pass DFT features, (B, 1, N) -> (B, 1, 2 * n_bins).

    Not trainable. The backward pass returns the input gradient (the map is
    linear) although the encoders never need it.
    """

    name = "fourier_lowpass"

    def __init__(self, n_samples: int = 1024, n_bins: int = 11):
        super().__init__()
        self.n_samples, self.n_bins = n_samples, n_bins
        self._basis = dft_basis(n_samples, n_bins)

    def forward(self, x):
        if x.ndim != 3 or x.shape[1:] != (1, self.n_samples):
            raise ValueError(f"expected (B, 1, {self.n_samples}) input, got {x.shape}")
        self._cache = True
        return (x[:, 0, :] @ self._basis)[:, None, :]

    def backward(self, grad):
        self._take_cache()
        return (grad[:, 0, :] @ self._basis.T)[:, None, :]

    def output_shape(self, shape):
        if tuple(shape[1:]) != (1, self.n_samples):
            raise ValueError(f"expected (B, 1, {self.n_samples}) input, got {shape}")
        return (shape[0], 1, 2 * self.n_bins)

    def __repr__(self):
        return f"FourierLowpass(n_samples={self.n_samples}, n_bins={self.n_bins})"


class Sequential:
    """Fixed layer list; backward is the reverse sweep of the same list."""

    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad: np.ndarray, need_input_grad: bool = True) -> np.ndarray | None:
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            if i == 0 and not need_input_grad and not layer.params:
                layer._cache = None
                return None
            grad = layer.backward(grad)
        return grad

    def shape_trace(self, shape: tuple) -> list[tuple]:
        trace = []
        for layer in self.layers:
            shape = layer.output_shape(tuple(shape))
            trace.append(shape)
        return trace

    def named_params(self):
        """Yields (qualified name, array) in layer order."""
        for i, layer in enumerate(self.layers):
            for key, value in layer.params.items():
                yield f"{i}.{layer.name}.{key}", value

    def named_grads(self):
        for i, layer in enumerate(self.layers):
            for key in layer.params:
                yield f"{i}.{layer.name}.{key}", layer.grads[key]

    def __iter__(self):
        return iter(self.layers)

    def __len__(self):
        return len(self.layers)
