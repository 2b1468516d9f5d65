"""Network container, cross-entropy loss, and SGD-with-momentum training."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidParameter, NonFiniteLoss, SchemaVersionError, ShapeMismatch
from ..rng import SplitMix64
from .layers import Layer, Sequential, Softmax, layer_from_config

PROB_FLOOR = 1e-12
SCHEMA = "sniffbench.network"
SCHEMA_VERSION = 1


class Network:
    """A :class:`Sequential` stack whose last layer is :class:`Softmax`.

    ``input_shape`` is the per-sample shape the first layer consumes; batches
    whose samples have the same number of entries are reshaped to it.
    """

    def __init__(self, layers: list[Layer], input_shape: tuple[int, ...], classes: int,
                 name: str = "network", seed: int = 0):
        if not layers or not isinstance(layers[-1], Softmax):
            raise InvalidParameter("the output layer must be Softmax")
        self.body = Sequential(layers[:-1])
        self.output = layers[-1]
        self.input_shape = tuple(int(d) for d in input_shape)
        self.classes = int(classes)
        self.name = name
        self.seed = int(seed)
        out = self.body.output_shape(self.input_shape)
        if out != (self.classes,):
            raise ShapeMismatch(f"network produces {out}, expected ({self.classes},)")

    @property
    def layers(self) -> list[Layer]:
        return self.body.layers + [self.output]

    def initialize(self, seed: int | None = None) -> "Network":
        if seed is not None:
            self.seed = int(seed)
        self.body.init_params(SplitMix64(self.seed))
        return self

    def named_parameters(self):
        return list(self.body.named_parameters())

    def parameters(self) -> list[np.ndarray]:
        return [owner.params[key] for _, owner, key in self.body.named_parameters()]

    def gradients(self) -> list[np.ndarray]:
        return [owner.grads[key] for _, owner, key in self.body.named_parameters()]

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def layer_shapes(self) -> list[tuple[int, ...]]:
        """Per-sample output shape after each top-level layer."""
        shapes, shape = [], self.input_shape
        for layer in self.body.layers:
            shape = layer.output_shape(shape)
            shapes.append(shape)
        return shapes + [(self.classes,)]

    def _as_batch(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1:] == self.input_shape:
            return X
        per_sample = int(np.prod(self.input_shape))
        if X.ndim >= 2 and int(np.prod(X.shape[1:])) == per_sample:
            return X.reshape((X.shape[0],) + self.input_shape)
        raise ShapeMismatch(f"batch of shape {X.shape} does not match input shape {self.input_shape}")

    def logits(self, X) -> np.ndarray:
        return self.body.forward(self._as_batch(X))

    def to_dict(self) -> dict:
        return {
            "format": SCHEMA,
            "version": SCHEMA_VERSION,
            "name": self.name,
            "seed": self.seed,
            "input_shape": list(self.input_shape),
            "classes": self.classes,
            "layers": [layer.config() for layer in self.layers],
            "parameters": {name: owner.params[key].reshape(-1).tolist()
                           for name, owner, key in self.body.named_parameters()},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Network":
        if doc.get("format") != SCHEMA or doc.get("version") != SCHEMA_VERSION:
            raise SchemaVersionError(
                f"expected {SCHEMA} v{SCHEMA_VERSION}, got {doc.get('format')!r} v{doc.get('version')!r}")
        layers = [layer_from_config(s) for s in doc["layers"]]
        net = cls(layers, tuple(doc["input_shape"]), doc["classes"], doc.get("name", "network"), doc.get("seed", 0))
        values = doc["parameters"]
        for name, owner, key in net.body.named_parameters():
            shape = owner.params[key].shape
            owner.params[key] = np.asarray(values[name], dtype=np.float64).reshape(shape)
        return net

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def forward(net: Network, batch) -> np.ndarray:
    """Class probabilities, one row per sample."""
    return net.output.forward(net.logits(batch))


def loss_and_gradients(net: Network, batch, one_hot) -> tuple[float, list[np.ndarray]]:
    """Mean categorical cross-entropy and its gradient for every parameter.

    Softmax and cross-entropy are differentiated together: the gradient with
    respect to the logits is ``(p - y) / B``.
    """
    Y = np.asarray(one_hot, dtype=np.float64)
    z = net.logits(batch)
    if Y.shape != z.shape:
        raise ShapeMismatch(f"labels {Y.shape} do not match outputs {z.shape}")
    p = net.output.forward(z)
    B = z.shape[0]
    loss = float(-np.sum(Y * np.log(np.maximum(p, PROB_FLOOR))) / B)
    net.body.backward((p - Y) / B)
    return loss, [g.copy() for g in net.gradients()]


def one_hot(labels, classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ShapeMismatch(f"labels must lie in 0..{classes - 1}")
    out = np.zeros((len(labels), classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    learning_rate: float = 0.001
    momentum: float = 0.9
    batch_size: int = 32
    seed: int = 0
    loss: str = "categorical_crossentropy"

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidParameter("epochs must be >= 1")
        if not self.learning_rate >= 0:
            raise InvalidParameter("learning_rate must be >= 0")
        if not 0 <= self.momentum < 1:
            raise InvalidParameter("momentum must lie in [0, 1)")
        if self.batch_size < 1:
            raise InvalidParameter("batch_size must be >= 1")
        if self.loss != "categorical_crossentropy":
            raise InvalidParameter(f"unsupported loss {self.loss!r}")


class SGDMomentum:
    """Classical momentum: ``v <- m*v - lr*g``; ``w <- w + v`` (in place)."""

    def __init__(self, params: list[np.ndarray], learning_rate: float, momentum: float):
        self.params = params
        self.lr = learning_rate
        self.m = momentum
        self.velocity = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray]) -> None:
        for p, v, g in zip(self.params, self.velocity, grads):
            v *= self.m
            v -= self.lr * g
            p += v


@dataclass
class TrainResult:
    network: Network
    losses: list[float]
    initial_loss: float
    velocity: list[np.ndarray] = field(default_factory=list)


def train_network(net: Network, X, labels, cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """Mini-batch SGD for exactly ``cfg.epochs`` epochs on a copy of ``net``.

    ``losses[e]`` is the sample-weighted mean batch loss seen during epoch
    ``e``; ``initial_loss`` is the full-data loss before the first update.
    """
    net = copy.deepcopy(net)
    X = net._as_batch(X)
    labels = np.asarray(labels, dtype=np.int64)
    n = len(X)
    if n < 1 or len(labels) != n:
        raise ShapeMismatch(f"{n} samples but {len(labels)} labels")
    Y = one_hot(labels, net.classes)
    initial_loss, _ = loss_and_gradients(net, X, Y)
    opt = SGDMomentum(net.parameters(), cfg.learning_rate, cfg.momentum)
    rng = SplitMix64(cfg.seed)
    losses = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = loss_and_gradients(net, X[idx], Y[idx])
            if not np.isfinite(loss):
                raise NonFiniteLoss(epoch, loss)
            total += loss * len(idx)
            opt.step(grads)
        losses.append(total / n)
    return TrainResult(net, losses, initial_loss, opt.velocity)


def predict_network(net: Network, X) -> np.ndarray:
    # argmax picks the first maximum, so exact ties go to the smallest class
    return np.argmax(forward(net, X), axis=1)
