"""Layers with hand-written forward and backward passes.

Each layer caches what its backward pass needs during ``forward`` and
accumulates parameter gradients into ``self.grads`` during ``backward``.
Activations are laid out batch-first: ``(batch, features)`` for dense-type
layers and ``(batch, channels, length)`` for convolutions.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..exceptions import NonFinite, ShapeMismatch, SpecInvalid


def _check_finite(y: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(y)):
        raise NonFinite(f"non-finite values in {where} output")
    return y


class Layer:
    """Base class. Subclasses set ``kind`` and implement the passes."""

    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def config(self) -> dict:
        return {}

    def init_params(self, rng: np.random.Generator, dtype) -> None:
        pass

    def output_shape(self, shape: tuple) -> tuple:
        return shape

    def forward(self, x, training=False, rng=None):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def zero_grad(self):
        for k, p in self.params.items():
            self.grads[k] = np.zeros_like(p)

    def astype(self, dtype):
        for store in (self.params, self.grads, self.buffers):
            for k in store:
                store[k] = store[k].astype(dtype)

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.config().items())
        return f"{type(self).__name__}({args})"


def _kaiming_uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Dense(Layer):
    """Fully connected layer, ``y = x @ W.T + b`` with ``W`` of shape
    ``(out_features, in_features)``."""

    kind = "dense"

    def __init__(self, in_features: int, out_features: int):
        super().__init__()
        if in_features < 1 or out_features < 1:
            raise SpecInvalid("dense layer sizes must be positive")
        self.in_features = int(in_features)
        self.out_features = int(out_features)

    def config(self):
        return {"in_features": self.in_features, "out_features": self.out_features}

    def init_params(self, rng, dtype):
        self.params["weight"] = _kaiming_uniform(
            rng, (self.out_features, self.in_features), self.in_features, dtype)
        self.params["bias"] = np.zeros(self.out_features, dtype=dtype)
        self.zero_grad()

    def output_shape(self, shape):
        if shape != (self.in_features,):
            raise ShapeMismatch(f"dense expects ({self.in_features},), got {shape}")
        return (self.out_features,)

    def forward(self, x, training=False, rng=None):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeMismatch(
                f"dense expects (batch, {self.in_features}), got {x.shape}")
        self._x = x
        return x @ self.params["weight"].T + self.params["bias"]

    def backward(self, grad):
        self.grads["weight"] += grad.T @ self._x
        self.grads["bias"] += grad.sum(axis=0)
        return grad @ self.params["weight"]


class Conv1d(Layer):
    """1-D cross-correlation (no kernel flip).

    ``y[f, i] = sum_{c,k} K[f, c, k] * x[c, i*stride + k] + b[f]`` over the
    zero-padded input. A 2-D input is read as a single channel.
    """

    kind = "conv1d"

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 stride: int = 1, padding: int = 0):
        super().__init__()
        if kernel_size < 1 or stride < 1 or padding < 0:
            raise SpecInvalid("invalid kernel_size/stride/padding")
        if in_channels < 1 or out_channels < 1:
            raise SpecInvalid("channel counts must be positive")
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel_size = int(kernel_size)
        self.stride = int(stride)
        self.padding = int(padding)

    def config(self):
        return {
            "in_channels": self.in_channels, "out_channels": self.out_channels,
            "kernel_size": self.kernel_size, "stride": self.stride,
            "padding": self.padding,
        }

    def out_length(self, length: int) -> int:
        span = length + 2 * self.padding - self.kernel_size
        if span < 0:
            raise ShapeMismatch(f"input length {length} shorter than kernel")
        return span // self.stride + 1

    def init_params(self, rng, dtype):
        fan_in = self.in_channels * self.kernel_size
        self.params["weight"] = _kaiming_uniform(
            rng, (self.out_channels, self.in_channels, self.kernel_size), fan_in, dtype)
        self.params["bias"] = np.zeros(self.out_channels, dtype=dtype)
        self.zero_grad()

    def output_shape(self, shape):
        if len(shape) == 1 and self.in_channels == 1:
            shape = (1, shape[0])
        if len(shape) != 2 or shape[0] != self.in_channels:
            raise ShapeMismatch(f"conv1d expects ({self.in_channels}, L), got {shape}")
        return (self.out_channels, self.out_length(shape[1]))

    def forward(self, x, training=False, rng=None):
        if x.ndim == 2 and self.in_channels == 1:
            x = x[:, None, :]
        if x.ndim != 3 or x.shape[1] != self.in_channels:
            raise ShapeMismatch(
                f"conv1d expects (batch, {self.in_channels}, L), got {x.shape}")
        self._in_shape = x.shape
        if self.padding:
            x = np.pad(x, ((0, 0), (0, 0), (self.padding, self.padding)))
        batch, chans, length = x.shape
        k, s = self.kernel_size, self.stride
        n_out = self.out_length(self._in_shape[2])
        win = sliding_window_view(x, k, axis=2)[:, :, : (n_out - 1) * s + 1 : s, :]
        cols = win.transpose(0, 2, 1, 3).reshape(batch * n_out, chans * k)
        self._cols = cols
        self._padded_len = length
        w = self.params["weight"].reshape(self.out_channels, -1)
        y = cols @ w.T + self.params["bias"]
        return y.reshape(batch, n_out, self.out_channels).transpose(0, 2, 1)

    def backward(self, grad):
        batch, _, n_out = grad.shape
        k, s = self.kernel_size, self.stride
        gcol = grad.transpose(0, 2, 1).reshape(batch * n_out, self.out_channels)
        w = self.params["weight"].reshape(self.out_channels, -1)
        self.grads["weight"] += (gcol.T @ self._cols).reshape(self.params["weight"].shape)
        self.grads["bias"] += grad.sum(axis=(0, 2))
        dcols = (gcol @ w).reshape(batch, n_out, self.in_channels, k)
        dx = np.zeros((batch, self.in_channels, self._padded_len), dtype=grad.dtype)
        stop = (n_out - 1) * s + 1
        for j in range(k):
            dx[:, :, j : j + stop : s] += dcols[:, :, :, j].transpose(0, 2, 1)
        if self.padding:
            dx = dx[:, :, self.padding : -self.padding]
        return dx.reshape(self._in_shape)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, training=False, rng=None):
        self._mask = x > 0
        return np.where(self._mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, grad):
        return np.where(self._mask, grad, 0).astype(grad.dtype, copy=False)


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x, training=False, rng=None):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


class BatchNorm1d(Layer):
    """Per-feature batch normalization over ``(batch, features)`` input.

    Training mode normalizes with batch statistics (biased variance) and
    updates running statistics with ``momentum``; the running variance is
    fed the unbiased batch variance. Eval mode uses the running statistics.
    """

    kind = "batchnorm1d"

    def __init__(self, num_features: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        if num_features < 1 or eps <= 0 or not 0 <= momentum <= 1:
            raise SpecInvalid("invalid batchnorm configuration")
        self.num_features = int(num_features)
        self.eps = float(eps)
        self.momentum = float(momentum)

    def config(self):
        return {"num_features": self.num_features, "eps": self.eps,
                "momentum": self.momentum}

    def init_params(self, rng, dtype):
        self.params["gamma"] = np.ones(self.num_features, dtype=dtype)
        self.params["beta"] = np.zeros(self.num_features, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(self.num_features, dtype=dtype)
        self.buffers["running_var"] = np.ones(self.num_features, dtype=dtype)
        self.zero_grad()

    def output_shape(self, shape):
        if shape != (self.num_features,):
            raise ShapeMismatch(f"batchnorm expects ({self.num_features},), got {shape}")
        return shape

    def forward(self, x, training=False, rng=None):
        if x.ndim != 2 or x.shape[1] != self.num_features:
            raise ShapeMismatch(
                f"batchnorm expects (batch, {self.num_features}), got {x.shape}")
        gamma, beta = self.params["gamma"], self.params["beta"]
        if not training:
            rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
            return (x - rm) / np.sqrt(rv + self.eps) * gamma + beta
        n = x.shape[0]
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        self._xhat, self._inv_std = xhat, inv_std
        m = self.momentum
        unbiased = var * (n / (n - 1)) if n > 1 else var
        self.buffers["running_mean"] = ((1 - m) * self.buffers["running_mean"] + m * mean).astype(x.dtype)
        self.buffers["running_var"] = ((1 - m) * self.buffers["running_var"] + m * unbiased).astype(x.dtype)
        return xhat * gamma + beta

    def backward(self, grad):
        xhat, inv_std = self._xhat, self._inv_std
        n = grad.shape[0]
        self.grads["gamma"] += (grad * xhat).sum(axis=0)
        self.grads["beta"] += grad.sum(axis=0)
        dxhat = grad * self.params["gamma"]
        return (inv_std / n) * (
            n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))


class Dropout(Layer):
    """Inverted dropout: in training, zero each unit with probability
    ``rate`` and scale survivors by ``1 / (1 - rate)``. Identity in eval."""

    kind = "dropout"

    def __init__(self, rate: float = 0.5):
        super().__init__()
        if not 0 <= rate < 1:
            raise SpecInvalid(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = float(rate)

    def config(self):
        return {"rate": self.rate}

    def forward(self, x, training=False, rng=None):
        if not training or self.rate == 0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("dropout in training mode needs a random generator")
        keep = rng.random(x.shape) >= self.rate
        self._mask = (keep / (1.0 - self.rate)).astype(x.dtype)
        return x * self._mask

    def backward(self, grad):
        if self._mask is None:
            return grad
        return grad * self._mask


class Softmax(Layer):
    """Row-wise softmax, stabilized by subtracting the row maximum."""

    kind = "softmax"

    def forward(self, x, training=False, rng=None):
        y = softmax(x)
        self._y = y
        return y

    def backward(self, grad):
        y = self._y
        return y * (grad - (grad * y).sum(axis=1, keepdims=True))


def softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


LAYER_TYPES = {cls.kind: cls for cls in
               (Dense, Conv1d, ReLU, Flatten, BatchNorm1d, Dropout, Softmax)}


def layer_from_config(kind: str, **kwargs) -> Layer:
    try:
        cls = LAYER_TYPES[kind]
    except KeyError:
        raise SpecInvalid(f"unknown layer kind {kind!r}") from None
    return cls(**kwargs)
