"""Reference architectures (random weights) and small random networks for testing."""

from __future__ import annotations

import numpy as np

from .layers import AvgPool, Conv, Dense, Network, Softmax, Square


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    lim = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-lim, lim, size=shape)


def mnist_network(rng: np.random.Generator | None = None) -> Network:
    """5x5 stride-2 conv (5 maps), square, dense 100, square, dense 10 on 28x28."""
    rng = rng or np.random.default_rng(0)
    return Network((1, 28, 28), (
        Conv(5, (5, 5), (2, 2), ((0, 1), (0, 1)), _uniform(rng, (5, 1, 5, 5), 25), _uniform(rng, 5, 25)),
        Square(),
        Dense(100, _uniform(rng, (100, 845), 845), _uniform(rng, 100, 845)),
        Square(),
        Dense(10, _uniform(rng, (10, 100), 100), _uniform(rng, 10, 100)),
        Softmax(),
    ))


def cifar_network(rng: np.random.Generator | None = None) -> Network:
    """Uncollapsed CIFAR-10 stack: three conv/pool groups with squares, then two dense layers."""
    rng = rng or np.random.default_rng(0)
    return Network((3, 32, 32), (
        Conv(128, 3, 1, 1, _uniform(rng, (128, 3, 3, 3), 27), _uniform(rng, 128, 27)),
        AvgPool(2),
        Conv(83, 3, 1, 0, _uniform(rng, (83, 128, 3, 3), 1152), _uniform(rng, 83, 1152)),
        Square(),
        AvgPool(2),
        Conv(163, 3, 1, 0, _uniform(rng, (163, 83, 3, 3), 747), _uniform(rng, 163, 747)),
        Square(),
        AvgPool(2, 2, ((0, 1), (0, 1))),
        Dense(1024, _uniform(rng, (1024, 163 * 9), 163 * 9), _uniform(rng, 1024, 163 * 9)),
        Dense(10, _uniform(rng, (10, 1024), 1024), _uniform(rng, 10, 1024)),
        Softmax(),
    ))


def caltech_network(rng: np.random.Generator | None = None, features: int = 4096, classes: int = 101) -> Network:
    """Linear classifier over precomputed deep features."""
    rng = rng or np.random.default_rng(0)
    return Network((features,), (
        Dense(classes, _uniform(rng, (classes, features), features), _uniform(rng, classes, features)),
    ))


ARCHITECTURES = {"mnist": mnist_network, "cifar": cifar_network, "caltech": caltech_network}


def toy_network(rng: np.random.Generator, size: int | None = None, weight_range: int = 3,
                hidden: int | None = None) -> Network:
    """Random integer conv + square + dense + square + dense network on a size x size image."""
    size = size if size is not None else int(rng.integers(8, 17))
    window = int(rng.integers(2, 4))
    stride = int(rng.integers(1, 3))
    pad_total = (-(size - window)) % stride
    padding = ((0, pad_total), (0, pad_total))
    maps = int(rng.integers(1, 4))
    channels = int(rng.integers(1, 3))
    out_hw = (size + pad_total - window) // stride + 1
    flat = maps * out_hw * out_hw
    hidden = hidden if hidden is not None else int(rng.integers(2, 13))
    classes = int(rng.integers(2, 11))

    def ints(*shape):
        return rng.integers(-weight_range, weight_range + 1, size=shape).astype(np.float64)

    return Network((channels, size, size), (
        Conv(maps, window, stride, padding, ints(maps, channels, window, window), ints(maps)),
        Square(),
        Dense(hidden, ints(hidden, flat), ints(hidden)),
        Square(),
        Dense(classes, ints(classes, hidden), ints(classes)),
    ))
