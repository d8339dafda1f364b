from .layers import (
    GELU, Conv1d, Flatten, FourierLowpass, Layer, Linear, MaxPool1d, Reshape,
    Sequential, StaleCacheError, Tanh, conv1d_backward, conv1d_forward,
    dft_basis, fourier_lowpass_features, gelu, gelu_grad, init_uniform, linear_backward,
    linear_forward, lowpass_bins, maxpool1d_backward, maxpool1d_forward,
)
from .optim import Adam, AdamState, adam_step, mse_loss

__all__ = [
    "GELU", "Conv1d", "Flatten", "FourierLowpass", "Layer", "Linear", "MaxPool1d",
    "Reshape", "Sequential", "StaleCacheError", "Tanh", "conv1d_backward",
    "conv1d_forward", "dft_basis", "fourier_lowpass_features", "gelu", "gelu_grad",
    "init_uniform", "linear_backward", "linear_forward", "lowpass_bins", "maxpool1d_backward",
    "maxpool1d_forward", "Adam", "AdamState", "adam_step", "mse_loss",
]
