"""Dense/convolutional layers with hand-written backward passes and Adam.

Tensors are plain float64 ``numpy`` arrays; images use NCHW layout.  Every
layer caches what its backward pass needs during ``forward`` and accumulates
parameter gradients into ``layer.grads`` during ``backward``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when an array does not have the shape a layer expects."""

    def __init__(self, where: str, expected, actual):
        self.expected = tuple(expected) if expected is not None else None
        self.actual = tuple(actual)
        super().__init__(f"{where}: expected shape {self.expected}, got {self.actual}")


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"non-finite gradient for parameter {name!r}")


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


# --- convolution kernels ----------------------------------------------------


def _windows(x: np.ndarray, kernel: int, stride: int, padding: int):
    """Strided view (B, C, Ho, Wo, k, k) over the zero-padded input."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = conv_output_size(x.shape[2] - 2 * padding, kernel, stride, padding)
    wo = conv_output_size(x.shape[3] - 2 * padding, kernel, stride, padding)
    win = sliding_window_view(x, (kernel, kernel), axis=(2, 3))
    return win[:, :, ::stride, ::stride][:, :, :ho, :wo]


def _conv(x, weight, stride, padding):
    # weight: (O, C, k, k)
    win = _windows(x, weight.shape[2], stride, padding)
    out = np.tensordot(win, weight, axes=([1, 4, 5], [1, 2, 3]))  # (B, Ho, Wo, O)
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _conv_weight_grad(x, dy, kernel, stride, padding):
    win = _windows(x, kernel, stride, padding)
    return np.tensordot(dy, win, axes=([0, 2, 3], [0, 2, 3]))  # (O, C, k, k)


def _conv_input_grad(dy, weight, stride, padding, in_hw):
    """Adjoint of ``_conv`` with respect to its input (scatter-add)."""
    b = dy.shape[0]
    _, c, k, _ = weight.shape
    ho, wo = dy.shape[2], dy.shape[3]
    h, w = in_hw
    cols = np.tensordot(dy, weight, axes=([1], [0]))  # (B, Ho, Wo, C, k, k)
    cols = cols.transpose(0, 3, 4, 5, 1, 2)  # (B, C, k, k, Ho, Wo)
    buf_h = max(h + 2 * padding, stride * (ho - 1) + k)
    buf_w = max(w + 2 * padding, stride * (wo - 1) + k)
    dxp = np.zeros((b, c, buf_h, buf_w))
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += cols[
                :, :, i, j
            ]
    return dxp[:, :, padding : padding + h, padding : padding + w]


# --- layers -----------------------------------------------------------------


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def zero_grad(self) -> None:
        for k, p in self.params.items():
            self.grads[k] = np.zeros_like(p)

    def _cached(self):
        if self._cache is None:
            raise RuntimeError(f"{self.kind}.backward called before forward")
        return self._cache

    def _check_upstream(self, dy, expected_shape):
        if dy.shape != tuple(expected_shape):
            raise ShapeError(f"{self.kind} backward", expected_shape, dy.shape)

    def hyperparams(self) -> dict:
        return {}

    def __repr__(self):
        hp = ", ".join(f"{k}={v}" for k, v in self.hyperparams().items())
        return f"{type(self).__name__}({hp})"


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        self._cache = x
        return np.where(x > 0, x, 0.0)

    def backward(self, dy):
        x = self._cached()
        self._check_upstream(dy, x.shape)
        return np.where(x > 0, dy, 0.0)


class Dense(Layer):
    """Affine map ``y = x W^T + b``.

    Inputs of any trailing shape are flattened per sample; ``out_shape``
    reshapes the output (used where a decoder goes back to feature maps).
    """

    kind = "dense"

    def __init__(self, in_features: int, out_features: int, rng=None, out_shape=None):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.out_shape = tuple(out_shape) if out_shape is not None else None
        if self.out_shape is not None and int(np.prod(self.out_shape)) != out_features:
            raise ValueError("out_shape does not match out_features")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["weight"] = glorot_uniform(rng, (out_features, in_features), in_features, out_features)
        self.params["bias"] = np.zeros(out_features)
        self.zero_grad()

    def hyperparams(self):
        return {"in_features": self.in_features, "out_features": self.out_features, "out_shape": self.out_shape}

    def forward(self, x):
        flat = x.reshape(x.shape[0], -1)
        if flat.shape[1] != self.in_features:
            raise ShapeError("dense forward", (x.shape[0], self.in_features), flat.shape)
        self._cache = (x.shape, flat)
        y = flat @ self.params["weight"].T + self.params["bias"]
        if self.out_shape is not None:
            y = y.reshape((x.shape[0],) + self.out_shape)
        return y

    def backward(self, dy):
        in_shape, flat = self._cached()
        expected = (in_shape[0],) + (self.out_shape or (self.out_features,))
        self._check_upstream(dy, expected)
        dy = dy.reshape(in_shape[0], self.out_features)
        self.grads["weight"] += dy.T @ flat
        self.grads["bias"] += dy.sum(axis=0)
        return (dy @ self.params["weight"]).reshape(in_shape)


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(self, in_channels, out_channels, kernel_size=5, stride=2, padding=2, rng=None):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        rng = rng if rng is not None else np.random.default_rng(0)
        k2 = kernel_size * kernel_size
        self.params["weight"] = glorot_uniform(
            rng, (out_channels, in_channels, kernel_size, kernel_size), in_channels * k2, out_channels * k2
        )
        self.params["bias"] = np.zeros(out_channels)
        self.zero_grad()

    def hyperparams(self):
        return {
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel_size": self.kernel_size,
            "stride": self.stride,
            "padding": self.padding,
        }

    def output_shape(self, in_shape):
        b, _, h, w = in_shape
        k, s, p = self.kernel_size, self.stride, self.padding
        return (b, self.out_channels, conv_output_size(h, k, s, p), conv_output_size(w, k, s, p))

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError("conv2d forward", (x.shape[0], self.in_channels, "H", "W"), x.shape)
        if x.shape[2] + 2 * self.padding < self.kernel_size or x.shape[3] + 2 * self.padding < self.kernel_size:
            raise ShapeError("conv2d forward: input smaller than kernel", None, x.shape)
        self._cache = x
        y = _conv(x, self.params["weight"], self.stride, self.padding)
        return y + self.params["bias"][None, :, None, None]

    def backward(self, dy):
        x = self._cached()
        self._check_upstream(dy, self.output_shape(x.shape))
        self.grads["weight"] += _conv_weight_grad(x, dy, self.kernel_size, self.stride, self.padding)
        self.grads["bias"] += dy.sum(axis=(0, 2, 3))
        return _conv_input_grad(dy, self.params["weight"], self.stride, self.padding, x.shape[2:])


class ConvTranspose2d(Layer):
    """Adjoint of :class:`Conv2d`; weight layout is (in, out, k, k).

    ``output_padding`` extends the output by that many rows/cols so that
    kernel 5 / stride 2 / padding 2 / output_padding 1 exactly doubles the
    spatial size.
    """

    kind = "conv_transpose2d"

    def __init__(self, in_channels, out_channels, kernel_size=5, stride=2, padding=2, output_padding=1, rng=None):
        super().__init__()
        if output_padding >= stride:
            raise ValueError("output_padding must be smaller than stride")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        self.output_padding = output_padding
        rng = rng if rng is not None else np.random.default_rng(0)
        k2 = kernel_size * kernel_size
        self.params["weight"] = glorot_uniform(
            rng, (in_channels, out_channels, kernel_size, kernel_size), out_channels * k2, in_channels * k2
        )
        self.params["bias"] = np.zeros(out_channels)
        self.zero_grad()

    def hyperparams(self):
        return {
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel_size": self.kernel_size,
            "stride": self.stride,
            "padding": self.padding,
            "output_padding": self.output_padding,
        }

    def output_shape(self, in_shape):
        b, _, h, w = in_shape
        k, s, p, op = self.kernel_size, self.stride, self.padding, self.output_padding
        return (b, self.out_channels, (h - 1) * s - 2 * p + k + op, (w - 1) * s - 2 * p + k + op)

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError("conv_transpose2d forward", (x.shape[0], self.in_channels, "H", "W"), x.shape)
        out_shape = self.output_shape(x.shape)
        if out_shape[2] <= 0 or out_shape[3] <= 0:
            raise ShapeError("conv_transpose2d forward: empty output", None, x.shape)
        self._cache = x
        y = _conv_input_grad(x, self.params["weight"], self.stride, self.padding, out_shape[2:])
        return y + self.params["bias"][None, :, None, None]

    def backward(self, dy):
        x = self._cached()
        self._check_upstream(dy, self.output_shape(x.shape))
        self.grads["weight"] += _conv_weight_grad(dy, x, self.kernel_size, self.stride, self.padding)
        self.grads["bias"] += dy.sum(axis=(0, 2, 3))
        return _conv(dy, self.params["weight"], self.stride, self.padding)


class ResidualBlock(Layer):
    """``relu(x + conv_b(relu(conv_a(x))))`` with two 3x3 same-size convs."""

    kind = "residual_block"

    def __init__(self, channels, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = channels
        self.conv_a = Conv2d(channels, channels, 3, 1, 1, rng=rng)
        self.conv_b = Conv2d(channels, channels, 3, 1, 1, rng=rng)
        self.relu_a = ReLU()
        self.relu_out = ReLU()
        for prefix, conv in (("a", self.conv_a), ("b", self.conv_b)):
            for k, p in conv.params.items():
                self.params[f"{prefix}_{k}"] = p
        self.zero_grad()

    def hyperparams(self):
        return {"channels": self.channels}

    def zero_grad(self):
        self.conv_a.zero_grad()
        self.conv_b.zero_grad()
        for prefix, conv in (("a", self.conv_a), ("b", self.conv_b)):
            for k in conv.params:
                self.grads[f"{prefix}_{k}"] = conv.grads[k]

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError("residual_block forward", (x.shape[0], self.channels, "H", "W"), x.shape)
        self._cache = x.shape
        h = self.relu_a.forward(self.conv_a.forward(x))
        return self.relu_out.forward(x + self.conv_b.forward(h))

    def backward(self, dy):
        shape = self._cached()
        self._check_upstream(dy, shape)
        d = self.relu_out.backward(dy)
        dx = d + self.conv_a.backward(self.relu_a.backward(self.conv_b.backward(d)))
        return dx


LAYER_KINDS = {cls.kind: cls for cls in (ReLU, Dense, Conv2d, ConvTranspose2d, ResidualBlock)}


def build_layer(kind: str, hyperparams: dict, rng=None) -> Layer:
    """Instantiate a layer from its kind name and hyperparameters."""
    cls = LAYER_KINDS[kind]
    hp = dict(hyperparams)
    if kind == "relu":
        return ReLU()
    return cls(**hp, rng=rng)


def forward_all(layers: Iterable[Layer], x: np.ndarray) -> np.ndarray:
    for layer in layers:
        x = layer.forward(x)
    return x


def backward_all(layers, dy: np.ndarray) -> np.ndarray:
    for layer in reversed(list(layers)):
        dy = layer.backward(dy)
    return dy


# --- optimizer --------------------------------------------------------------


@dataclass
class Adam:
    """Bias-corrected adaptive-moment optimizer over named parameter arrays.

    Parameters are updated in place, so the arrays owned by layers stay
    shared with the optimizer.
    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(name)
            if g.shape != params[name].shape:
                raise ShapeError(f"adam step {name}", params[name].shape, g.shape)
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for name, p in params.items():
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# --- gradient checking ------------------------------------------------------


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def grad_check(layer: Layer, x: np.ndarray, eps: float = 1e-5, seed: int = 0) -> float:
    """Max relative error between backward-pass and central-difference gradients.

    The scalar probed is ``sum(forward(x) * r)`` for a fixed random ``r``;
    all parameter entries and all input entries are perturbed.
    """
    if not 0 < eps <= 1e-2:
        raise ValueError("eps must lie in (0, 1e-2]")
    x = np.array(x, dtype=np.float64)
    y = layer.forward(x)
    r = np.random.default_rng(seed).standard_normal(y.shape)

    def f(inp):
        return float(np.sum(layer.forward(inp) * r))

    layer.zero_grad()
    layer.forward(x)
    dx = layer.backward(r)
    analytic = {k: g.copy() for k, g in layer.grads.items()}

    worst = 0.0
    for name, p in layer.params.items():
        num = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + eps
            fp = f(x)
            p[idx] = old - eps
            fm = f(x)
            p[idx] = old
            num[idx] = (fp - fm) / (2 * eps)
        worst = max(worst, _relative_error(analytic[name], num))

    num = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + eps
        fp = f(x)
        x[idx] = old - eps
        fm = f(x)
        x[idx] = old
        num[idx] = (fp - fm) / (2 * eps)
    worst = max(worst, _relative_error(dx, num))
    return worst
