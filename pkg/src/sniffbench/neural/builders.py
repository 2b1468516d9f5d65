"""Builders for the four benchmarked architectures.

Filter counts, kernel sizes and fully-connected widths that the source
architectures leave open are fixed here as keyword defaults.
"""

from __future__ import annotations

from ..errors import InputTooSmall, InvalidParameter
from .layers import ColumnSplitFusion, Conv2D, Dense, Flatten, ReLU, ResidualBlock, Sequential, Softmax
from .network import Network

MLP_WIDTHS = (100, 30, 30, 30, 30, 30, 30)


def build_deep_mlp(input_len: int, classes: int, seed: int = 0, widths=MLP_WIDTHS) -> Network:
    """Eight weight layers: 100 units, six of 30, then the softmax output."""
    if input_len < 1 or classes < 2:
        raise InvalidParameter(f"deep MLP needs input_len >= 1 and classes >= 2, got {input_len}, {classes}")
    layers = []
    n_in = input_len
    for width in widths:
        layers += [Dense(n_in, width), ReLU()]
        n_in = width
    layers += [Dense(n_in, classes, init="glorot"), Softmax()]
    return Network(layers, (input_len,), classes, "deep_mlp", seed).initialize()


def _fc_head(n_in: int, classes: int, hidden: int) -> list:
    return [Dense(n_in, hidden), ReLU(), Dense(hidden, classes, init="glorot")]


def build_sniff_convnet(rows: int, cols: int, classes: int, seed: int = 0,
                        filters=(16, 32), kernel: int = 3, hidden: int = 64) -> Network:
    if classes < 2:
        raise InvalidParameter("classes must be >= 2")
    shrink = len(filters) * (kernel - 1)
    out_h, out_w = rows - shrink, cols - shrink
    if out_h <= 0 or out_w <= 0:
        raise InputTooSmall(
            f"{rows}x{cols} input leaves a {out_h}x{out_w} map after {len(filters)} valid {kernel}x{kernel} convolutions")
    layers, cin = [], 1
    for f in filters:
        layers += [Conv2D(cin, f, kernel, kernel, "valid"), ReLU()]
        cin = f
    layers += [Flatten()] + _fc_head(cin * out_h * out_w, classes, hidden) + [Softmax()]
    return Network(layers, (1, rows, cols), classes, "sniff_convnet", seed).initialize()


def build_sniff_resnet(rows: int, cols: int, classes: int, seed: int = 0,
                       channels=(16, 32), kernel: int = 3, hidden: int = 64) -> Network:
    if classes < 2:
        raise InvalidParameter("classes must be >= 2")
    if rows < 5 or cols < 2:
        raise InputTooSmall(f"residual network needs at least 5x2 inputs, got {rows}x{cols}")
    layers, cin = [], 1
    for c in channels:
        layers.append(ResidualBlock(cin, c, kernel))
        cin = c
    layers += [Flatten()] + _fc_head(cin * rows * cols, classes, hidden) + [Softmax()]
    return Network(layers, (1, rows, cols), classes, "sniff_resnet", seed).initialize()


def build_sniff_multinose(rows: int, cols: int, classes: int, seed: int = 0,
                          column_width: int = 32, hidden: int = 64) -> Network:
    if rows < 1 or cols < 1 or classes < 2:
        raise InvalidParameter(f"multinose needs rows, cols >= 1 and classes >= 2, got {rows}, {cols}, {classes}")
    columns = [Sequential([Dense(rows, column_width), ReLU()]) for _ in range(cols)]
    head = Sequential(_fc_head(column_width * cols, classes, hidden))
    layers = [ColumnSplitFusion(columns, head), Softmax()]
    return Network(layers, (rows, cols), classes, "sniff_multinose", seed).initialize()


BUILDERS = {
    "sniff_convnet": build_sniff_convnet,
    "sniff_resnet": build_sniff_resnet,
    "sniff_multinose": build_sniff_multinose,
}


def build_network(method: str, rows: int, cols: int, classes: int, seed: int = 0) -> Network:
    """Builder dispatch by method name; ``deep_mlp`` consumes flattened windows."""
    if method == "deep_mlp":
        return build_deep_mlp(rows * cols, classes, seed)
    try:
        return BUILDERS[method](rows, cols, classes, seed)
    except KeyError:
        raise InvalidParameter(f"unknown network method {method!r}") from None
