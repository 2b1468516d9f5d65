"""Layers with hand-written backward passes.

Batch-first float64 arrays throughout. Convolution maps are laid out
``(batch, channels, height, width)`` with height = time and width = sensors.
Each layer caches what its backward pass needs during ``forward``, so a
backward call must follow the forward call it differentiates.
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import InvalidParameter, ShapeMismatch
from ..rng import SplitMix64


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return in_shape

    def config(self) -> dict:
        return {"kind": self.kind}

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, "Layer", str]]:
        """Yield ``(qualified_name, owning_layer, key)`` in a fixed order."""
        for key in self.params:
            yield prefix + key, self, key

    def init_params(self, rng: SplitMix64) -> None:
        pass


def _uniform(rng: SplitMix64, shape, limit: float) -> np.ndarray:
    return rng.uniform(shape, -limit, limit)


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_in: int, n_out: int, init: str = "he"):
        super().__init__()
        if n_in < 1 or n_out < 1:
            raise InvalidParameter(f"dense layer needs positive sizes, got {n_in}->{n_out}")
        self.n_in, self.n_out, self.init = n_in, n_out, init
        self.params = {"W": np.zeros((n_in, n_out)), "b": np.zeros(n_out)}

    def init_params(self, rng):
        fan_in, fan_out = self.n_in, self.n_out
        limit = math.sqrt(6.0 / fan_in) if self.init == "he" else math.sqrt(6.0 / (fan_in + fan_out))
        self.params["W"] = _uniform(rng, (fan_in, fan_out), limit)
        self.params["b"] = np.zeros(fan_out)

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeMismatch(f"dense expects (batch, {self.n_in}), got {x.shape}")
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dy):
        self.grads["W"] = self._x.T @ dy
        self.grads["b"] = dy.sum(axis=0)
        return dy @ self.params["W"].T

    def output_shape(self, in_shape):
        if in_shape != (self.n_in,):
            raise ShapeMismatch(f"dense expects input ({self.n_in},), got {in_shape}")
        return (self.n_out,)

    def config(self):
        return {"kind": self.kind, "in": self.n_in, "out": self.n_out, "init": self.init}


class Conv2D(Layer):
    """Stride-1 2-D convolution; ``padding`` is ``"valid"`` or ``"same"`` (odd kernels)."""

    kind = "conv2d"

    def __init__(self, in_channels: int, out_channels: int, kernel_h: int = 3, kernel_w: int = 3,
                 padding: str = "valid", init: str = "he"):
        super().__init__()
        if padding not in ("valid", "same"):
            raise InvalidParameter(f"padding must be 'valid' or 'same', got {padding!r}")
        if padding == "same" and (kernel_h % 2 == 0 or kernel_w % 2 == 0):
            raise InvalidParameter("'same' padding needs odd kernel sizes")
        self.cin, self.cout, self.kh, self.kw = in_channels, out_channels, kernel_h, kernel_w
        self.padding, self.init = padding, init
        self.ph = (kernel_h - 1) // 2 if padding == "same" else 0
        self.pw = (kernel_w - 1) // 2 if padding == "same" else 0
        self.params = {"W": np.zeros((out_channels, in_channels, kernel_h, kernel_w)),
                       "b": np.zeros(out_channels)}

    def init_params(self, rng):
        fan_in = self.cin * self.kh * self.kw
        fan_out = self.cout * self.kh * self.kw
        limit = math.sqrt(6.0 / fan_in) if self.init == "he" else math.sqrt(6.0 / (fan_in + fan_out))
        self.params["W"] = _uniform(rng, self.params["W"].shape, limit)
        self.params["b"] = np.zeros(self.cout)

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.cin:
            raise ShapeMismatch(f"conv2d expects ({self.cin}, H, W), got {in_shape}")
        _, h, w = in_shape
        return (self.cout, h + 2 * self.ph - self.kh + 1, w + 2 * self.pw - self.kw + 1)

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.cin:
            raise ShapeMismatch(f"conv2d expects (batch, {self.cin}, H, W), got {x.shape}")
        if self.ph or self.pw:
            x = np.pad(x, ((0, 0), (0, 0), (self.ph, self.ph), (self.pw, self.pw)))
        self._xp_shape = x.shape
        # (B, Cin, OH, OW, kh, kw) view, no copy
        self._cols = sliding_window_view(x, (self.kh, self.kw), axis=(2, 3))
        out = np.tensordot(self._cols, self.params["W"], axes=([1, 4, 5], [1, 2, 3]))
        return out.transpose(0, 3, 1, 2) + self.params["b"][None, :, None, None]

    def backward(self, dy):
        W = self.params["W"]
        self.grads["W"] = np.tensordot(dy, self._cols, axes=([0, 2, 3], [0, 2, 3]))
        self.grads["b"] = dy.sum(axis=(0, 2, 3))
        dxp = np.zeros(self._xp_shape)
        oh, ow = dy.shape[2], dy.shape[3]
        for u in range(self.kh):
            for v in range(self.kw):
                dxp[:, :, u:u + oh, v:v + ow] += np.tensordot(dy, W[:, :, u, v], axes=([1], [0])).transpose(0, 3, 1, 2)
        h, w = self._xp_shape[2] - 2 * self.ph, self._xp_shape[3] - 2 * self.pw
        return dxp[:, :, self.ph:self.ph + h, self.pw:self.pw + w]

    def config(self):
        return {"kind": self.kind, "in_channels": self.cin, "out_channels": self.cout,
                "kernel_h": self.kh, "kernel_w": self.kw, "padding": self.padding, "init": self.init}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        self._mask = x > 0
        # np.maximum keeps NaN visible so divergence is caught upstream
        return np.maximum(x, 0.0)

    def backward(self, dy):
        return np.where(self._mask, dy, 0.0)


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x):
        self._p = softmax(x)
        return self._p

    def backward(self, dy):
        # Jacobian-vector product; training uses the fused (p - y) path instead
        p = self._p
        return p * (dy - (dy * p).sum(axis=1, keepdims=True))


class Sequential(Layer):
    kind = "sequential"

    def __init__(self, layers: list[Layer]):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def output_shape(self, in_shape):
        for layer in self.layers:
            in_shape = layer.output_shape(in_shape)
        return in_shape

    def named_parameters(self, prefix=""):
        for i, layer in enumerate(self.layers):
            yield from layer.named_parameters(f"{prefix}{i}.")

    def init_params(self, rng):
        for layer in self.layers:
            layer.init_params(rng)

    def config(self):
        return {"kind": self.kind, "layers": [layer.config() for layer in self.layers]}


class ResidualBlock(Layer):
    """``skip(x) + relu(conv2(relu(conv1(x))))`` with "same" padding.

    ``skip`` is the identity when channel counts match and a 1x1 convolution
    otherwise. With both convs zeroed the block reduces to ``skip``.
    """

    kind = "residual"

    def __init__(self, in_channels: int, out_channels: int, kernel: int = 3):
        super().__init__()
        self.cin, self.cout, self.k = in_channels, out_channels, kernel
        self.conv1 = Conv2D(in_channels, out_channels, kernel, kernel, "same")
        self.relu1 = ReLU()
        self.conv2 = Conv2D(out_channels, out_channels, kernel, kernel, "same")
        self.relu2 = ReLU()
        self.proj = Conv2D(in_channels, out_channels, 1, 1, "valid", init="glorot") \
            if in_channels != out_channels else None

    def forward(self, x):
        h = self.relu2.forward(self.conv2.forward(self.relu1.forward(self.conv1.forward(x))))
        skip = self.proj.forward(x) if self.proj is not None else x
        return h + skip

    def backward(self, dy):
        dx = self.conv1.backward(self.relu1.backward(self.conv2.backward(self.relu2.backward(dy))))
        dx = dx + (self.proj.backward(dy) if self.proj is not None else dy)
        return dx

    def output_shape(self, in_shape):
        return self.conv2.output_shape(self.conv1.output_shape(in_shape))

    def named_parameters(self, prefix=""):
        yield from self.conv1.named_parameters(prefix + "conv1.")
        yield from self.conv2.named_parameters(prefix + "conv2.")
        if self.proj is not None:
            yield from self.proj.named_parameters(prefix + "proj.")

    def init_params(self, rng):
        self.conv1.init_params(rng)
        self.conv2.init_params(rng)
        if self.proj is not None:
            self.proj.init_params(rng)

    def config(self):
        return {"kind": self.kind, "in_channels": self.cin, "out_channels": self.cout, "kernel": self.k}


class ColumnSplitFusion(Layer):
    """One sub-network per input column, outputs concatenated into a head network.

    Input ``(batch, rows, columns)``; column ``j`` feeds ``columns[j]`` with a
    ``(batch, rows)`` slice.
    """

    kind = "column_fusion"

    def __init__(self, columns: list[Sequential], head: Sequential):
        super().__init__()
        self.columns = list(columns)
        self.head = head

    def forward(self, x):
        if x.ndim != 3 or x.shape[2] != len(self.columns):
            raise ShapeMismatch(f"column fusion expects (batch, rows, {len(self.columns)}), got {x.shape}")
        outs = [net.forward(x[:, :, j]) for j, net in enumerate(self.columns)]
        self._widths = [o.shape[1] for o in outs]
        self._in_shape = x.shape
        return self.head.forward(np.concatenate(outs, axis=1))

    def backward(self, dy):
        dh = self.head.backward(dy)
        dx = np.zeros(self._in_shape)
        start = 0
        for j, (net, width) in enumerate(zip(self.columns, self._widths)):
            dx[:, :, j] = net.backward(dh[:, start:start + width])
            start += width
        return dx

    def output_shape(self, in_shape):
        rows, cols = in_shape
        if cols != len(self.columns):
            raise ShapeMismatch(f"column fusion expects {len(self.columns)} columns, got {cols}")
        width = sum(net.output_shape((rows,))[0] for net in self.columns)
        return self.head.output_shape((width,))

    def named_parameters(self, prefix=""):
        for j, net in enumerate(self.columns):
            yield from net.named_parameters(f"{prefix}col{j}.")
        yield from self.head.named_parameters(prefix + "head.")

    def init_params(self, rng):
        for net in self.columns:
            net.init_params(rng)
        self.head.init_params(rng)

    def config(self):
        return {"kind": self.kind, "columns": [net.config() for net in self.columns], "head": self.head.config()}


def layer_from_config(config: dict) -> Layer:
    kind = config["kind"]
    if kind == "dense":
        return Dense(config["in"], config["out"], config.get("init", "he"))
    if kind == "conv2d":
        return Conv2D(config["in_channels"], config["out_channels"], config["kernel_h"], config["kernel_w"],
                      config["padding"], config.get("init", "he"))
    if kind == "relu":
        return ReLU()
    if kind == "flatten":
        return Flatten()
    if kind == "softmax":
        return Softmax()
    if kind == "sequential":
        return Sequential([layer_from_config(s) for s in config["layers"]])
    if kind == "residual":
        return ResidualBlock(config["in_channels"], config["out_channels"], config.get("kernel", 3))
    if kind == "column_fusion":
        return ColumnSplitFusion([layer_from_config(s) for s in config["columns"]], layer_from_config(config["head"]))
    raise InvalidParameter(f"unknown layer kind {kind!r}")
