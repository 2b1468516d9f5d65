"""Minimal deterministic neural-network engine and the benchmarked architectures."""

from .builders import build_deep_mlp, build_network, build_sniff_convnet, build_sniff_multinose, build_sniff_resnet
from .layers import ColumnSplitFusion, Conv2D, Dense, Flatten, Layer, ReLU, ResidualBlock, Sequential, Softmax
from .network import (
    Network,
    SGDMomentum,
    TrainConfig,
    TrainResult,
    forward,
    loss_and_gradients,
    one_hot,
    predict_network,
    train_network,
)

__all__ = [
    "ColumnSplitFusion", "Conv2D", "Dense", "Flatten", "Layer", "Network", "ReLU", "ResidualBlock",
    "SGDMomentum", "Sequential", "Softmax", "TrainConfig", "TrainResult", "build_deep_mlp",
    "build_network", "build_sniff_convnet", "build_sniff_multinose", "build_sniff_resnet",
    "forward", "loss_and_gradients", "one_hot", "predict_network", "train_network",
]
