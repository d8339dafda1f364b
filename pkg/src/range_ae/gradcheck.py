"""Central finite-difference checks for every layer's backward pass."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn.layers import GELU, Conv1d, FourierLowpass, Linear, MaxPool1d, Tanh
from .nn.optim import mse_loss

STEP = 1e-6
TOLERANCE = 1e-6


@dataclass
class GradCheckResult:
    layer: str
    shape: tuple
    wrt: str
    rel_error: float

    @property
    def passed(self) -> bool:
        return self.rel_error < TOLERANCE


def numerical_grad(f, x: np.ndarray, step: float = STEP) -> np.ndarray:
    """d f / d x by central differences; ``x`` is perturbed in place and restored."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def check_layer(layer, x: np.ndarray, rng: np.random.Generator, step: float = STEP) -> list[GradCheckResult]:
    """Check input and parameter gradients of ``layer`` at ``x`` through the
    scalar probe sum(layer(x) * r) with a random r."""
    out = layer.forward(x)
    probe = rng.standard_normal(out.shape)
    grad_in = layer.backward(probe)

    def f():
        y = layer.forward(x)
        layer._cache = None
        return float(np.sum(y * probe))

    results = [GradCheckResult(type(layer).__name__, x.shape, "input",
                               rel_error(grad_in, numerical_grad(f, x, step)))]
    for name, p in layer.params.items():
        results.append(GradCheckResult(type(layer).__name__, x.shape, name,
                                       rel_error(layer.grads[name], numerical_grad(f, p, step))))
    return results


def check_mse(shape, rng: np.random.Generator, step: float = STEP) -> GradCheckResult:
    pred, target = rng.standard_normal(shape), rng.standard_normal(shape)
    _, grad = mse_loss(pred, target)
    num = numerical_grad(lambda: mse_loss(pred, target)[0], pred, step)
    return GradCheckResult("MSELoss", shape, "input", rel_error(grad, num))


def _separated_normal(rng, shape, min_gap=1e-3):
    # max-pool is only differentiable away from ties
    while True:
        x = rng.standard_normal(shape)
        s = np.sort(x.reshape(-1))
        if np.min(np.diff(s)) > min_gap or s.size < 2:
            return x


def run_all(seed: int = 0, cases_per_layer: int = 20) -> list[GradCheckResult]:
    """Random small-shape checks for conv1d, maxpool, GELU, tanh, linear,
    the Fourier features and the MSE loss."""
    rng = np.random.default_rng(seed)
    results: list[GradCheckResult] = []
    for _ in range(cases_per_layer):
        b, c_in, c_out = rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 4)
        k = int(rng.integers(1, 5))
        length = int(rng.integers(k, k + 8))
        conv = Conv1d(int(c_in), int(c_out), k, rng)
        results += check_layer(conv, rng.standard_normal((b, c_in, length)), rng)

        pool_len = int(rng.integers(4, 14))
        results += check_layer(MaxPool1d(4), _separated_normal(rng, (b, c_in, pool_len)), rng)

        f_in, f_out = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        results += check_layer(Linear(f_in, f_out, rng), rng.standard_normal((b, f_in)), rng)

        shape = (int(b), int(rng.integers(1, 4)), int(rng.integers(1, 7)))
        results += check_layer(GELU(), 2.0 * rng.standard_normal(shape), rng)
        results += check_layer(Tanh(), 2.0 * rng.standard_normal(shape), rng)

        n = int(rng.integers(4, 17))
        results += check_layer(FourierLowpass(n, min(n, int(rng.integers(1, 5)))),
                               rng.standard_normal((b, 1, n)), rng)
        results.append(check_mse(shape, rng))
    return results
