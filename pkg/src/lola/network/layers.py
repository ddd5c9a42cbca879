"""Layer descriptions, float evaluation, and collapsing of adjacent linear layers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from ..representations import ConvGeometry, RepresentationError

Pair = tuple[int, int]
Padding = tuple[Pair, Pair]


class NetworkError(ValueError):
    pass


class ShapeError(NetworkError):
    pass


def _pair(v) -> Pair:
    if isinstance(v, int):
        return (v, v)
    a, b = v
    return (int(a), int(b))


def _padding(v) -> Padding:
    if v is None or v == 0:
        return ((0, 0), (0, 0))
    if isinstance(v, int):
        return ((v, v), (v, v))
    (a, b), (c, d) = v
    return ((int(a), int(b)), (int(c), int(d)))


# ---------------------------------------------------------------------------
# layer specs


@dataclass(frozen=True, eq=False)
class Conv:
    maps: int
    window: Pair
    stride: Pair = (1, 1)
    padding: Padding = ((0, 0), (0, 0))
    weights: np.ndarray | None = None  # (maps, channels, kh, kw)
    bias: np.ndarray | None = None
    scale: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "window", _pair(self.window))
        object.__setattr__(self, "stride", _pair(self.stride))
        object.__setattr__(self, "padding", _padding(self.padding))

    def geometry(self, in_shape) -> ConvGeometry:
        if len(in_shape) != 3:
            raise ShapeError(f"convolution needs a (channels, height, width) input, got {in_shape}")
        try:
            return ConvGeometry(tuple(in_shape), self.window, self.stride, self.padding)
        except RepresentationError as e:
            raise ShapeError(str(e)) from None

    def out_shape(self, in_shape):
        oh, ow = self.geometry(in_shape).out_hw
        return (self.maps, oh, ow)

    def check(self, in_shape):
        c = in_shape[0]
        if self.weights is not None and self.weights.shape != (self.maps, c, *self.window):
            raise ShapeError(f"conv weights {self.weights.shape} != {(self.maps, c, *self.window)}")
        if self.bias is not None and self.bias.shape != (self.maps,):
            raise ShapeError(f"conv bias {self.bias.shape} != {(self.maps,)}")


@dataclass(frozen=True, eq=False)
class AvgPool:
    window: Pair
    stride: Pair | None = None
    padding: Padding = ((0, 0), (0, 0))

    def __post_init__(self):
        object.__setattr__(self, "window", _pair(self.window))
        object.__setattr__(self, "stride", _pair(self.stride if self.stride is not None else self.window))
        object.__setattr__(self, "padding", _padding(self.padding))

    def as_conv(self, channels: int) -> Conv:
        """Per-channel averaging expressed as a convolution (zero padding counts in the mean)."""
        kh, kw = self.window
        w = np.zeros((channels, channels, kh, kw))
        for c in range(channels):
            w[c, c] = 1.0 / (kh * kw)
        return Conv(channels, self.window, self.stride, self.padding, w, np.zeros(channels))

    def out_shape(self, in_shape):
        return self.as_conv(in_shape[0]).out_shape(in_shape)

    def check(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"pooling needs a (channels, height, width) input, got {in_shape}")


@dataclass(frozen=True, eq=False)
class Dense:
    outputs: int
    weights: np.ndarray | None = None  # (outputs, inputs)
    bias: np.ndarray | None = None
    scale: float | None = None

    def out_shape(self, in_shape):
        return (self.outputs,)

    def check(self, in_shape):
        k = int(np.prod(in_shape))
        if self.weights is not None and self.weights.shape != (self.outputs, k):
            raise ShapeError(f"dense weights {self.weights.shape} != {(self.outputs, k)}")
        if self.bias is not None and self.bias.shape != (self.outputs,):
            raise ShapeError(f"dense bias {self.bias.shape} != {(self.outputs,)}")


@dataclass(frozen=True)
class Square:
    def out_shape(self, in_shape):
        return tuple(in_shape)

    def check(self, in_shape):
        pass


@dataclass(frozen=True)
class Softmax:
    """Monotone, so a no-op for argmax inference."""

    def out_shape(self, in_shape):
        return tuple(in_shape)

    def check(self, in_shape):
        pass


Layer = Union[Conv, AvgPool, Dense, Square, Softmax]
LINEAR = (Conv, AvgPool, Dense)


def _conv_forward(conv: Conv, x: np.ndarray, in_shape) -> np.ndarray:
    """Batched convolution: x is (batch, c*h*w)."""
    geom = conv.geometry(in_shape)
    idx = geom.gather_index()
    padded = np.concatenate([x, np.zeros((x.shape[0], 1), dtype=x.dtype)], axis=1)
    cols = padded[:, idx]  # (batch, volume, positions)
    w = conv.weights.reshape(conv.maps, -1)
    out = np.einsum("mv,bvp->bmp", w, cols) + conv.bias[None, :, None]
    return out.reshape(x.shape[0], -1)


@dataclass(frozen=True, eq=False)
class Network:
    input_shape: tuple[int, ...]
    layers: tuple[Layer, ...]

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        self.shapes()

    def shapes(self) -> list[tuple[int, ...]]:
        """Input shape of every layer followed by the output shape."""
        out = [self.input_shape]
        for i, layer in enumerate(self.layers):
            try:
                layer.check(out[-1])
                out.append(tuple(layer.out_shape(out[-1])))
            except ShapeError as e:
                raise ShapeError(f"layer {i} ({type(layer).__name__}): {e}") from None
        return out

    def forward_batch(self, x: np.ndarray) -> np.ndarray:
        """Float evaluation of a (batch, prod(input_shape)) array."""
        x = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
        shapes = self.shapes()
        for layer, shape in zip(self.layers, shapes):
            if isinstance(layer, Conv):
                x = _conv_forward(layer, x, shape)
            elif isinstance(layer, AvgPool):
                x = _conv_forward(layer.as_conv(shape[0]), x, shape)
            elif isinstance(layer, Dense):
                x = x @ layer.weights.T + layer.bias[None, :]
            elif isinstance(layer, Square):
                x = x * x
        return x

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.forward_batch(np.asarray(x).reshape(1, -1))[0]


# ---------------------------------------------------------------------------
# collapsed networks


@dataclass(frozen=True, eq=False)
class LinearStage:
    """One affine map. ``kind="conv"`` keeps window structure for kernel selection."""

    kind: str
    in_shape: tuple[int, ...]
    out_shape: tuple[int, ...]
    weights: np.ndarray  # conv: (maps, volume); dense: (outputs, inputs)
    bias: np.ndarray
    geometry: ConvGeometry | None = None
    scale: float = 1.0

    @property
    def in_size(self) -> int:
        return int(np.prod(self.in_shape))

    @property
    def out_size(self) -> int:
        return int(np.prod(self.out_shape))

    @property
    def maps(self) -> int:
        return self.weights.shape[0]

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Works on float arrays and on object arrays of Python ints."""
        x = np.asarray(x).reshape(-1)
        if self.kind == "conv":
            cols = self.geometry.window_matrix(x)
            return (self.weights.dot(cols) + self.bias[:, None]).reshape(-1)
        return self.weights.dot(x) + self.bias

    def dense_matrix(self) -> np.ndarray:
        """Explicit (out_size, in_size) matrix of the stage."""
        if self.kind == "dense":
            return self.weights
        idx = self.geometry.gather_index()
        maps, positions = self.maps, idx.shape[1]
        out = np.zeros((maps * positions, self.in_size), dtype=self.weights.dtype)
        for m in range(maps):
            for j in range(idx.shape[0]):
                src = idx[j]
                ok = src >= 0
                out[m * positions + np.flatnonzero(ok), src[ok]] = self.weights[m, j]
        return out

    def row_abs_sums(self) -> np.ndarray:
        """Largest absolute row sum per output map (conv) or row (dense)."""
        return np.abs(self.weights).sum(axis=1)


@dataclass(frozen=True)
class SquareStage:
    shape: tuple[int, ...]

    @property
    def kind(self) -> str:
        return "square"

    def apply(self, x):
        x = np.asarray(x).reshape(-1)
        return x * x


Stage = Union[LinearStage, SquareStage]


@dataclass(frozen=True, eq=False)
class CollapsedNetwork:
    input_shape: tuple[int, ...]
    stages: tuple[Stage, ...]

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        for a, b in zip(self.stages, self.stages[1:]):
            if isinstance(a, LinearStage) and isinstance(b, LinearStage):
                raise NetworkError("two adjacent linear stages; collapse them first")

    @property
    def linear_stages(self) -> list[LinearStage]:
        return [s for s in self.stages if isinstance(s, LinearStage)]

    @property
    def squares(self) -> int:
        return sum(isinstance(s, SquareStage) for s in self.stages)

    @property
    def output_size(self) -> int:
        last = self.stages[-1]
        return last.out_size if isinstance(last, LinearStage) else int(np.prod(last.shape))

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x).reshape(-1)
        for s in self.stages:
            x = s.apply(x)
        return x


def _compose_convs(a: Conv, b: Conv) -> Conv:
    """``b`` after ``a`` as a single convolution (``b`` must be unpadded)."""
    sa_h, sa_w = a.stride
    kh = a.window[0] + (b.window[0] - 1) * sa_h
    kw = a.window[1] + (b.window[1] - 1) * sa_w
    w = np.zeros((b.maps, a.weights.shape[1], kh, kw))
    for i in range(b.window[0]):
        for j in range(b.window[1]):
            # tap (i, j) of b reads a's output shifted by (i*sa_h, j*sa_w) input pixels
            part = np.einsum("om,mcyx->ocyx", b.weights[:, :, i, j], a.weights)
            w[:, :, i * sa_h:i * sa_h + a.window[0], j * sa_w:j * sa_w + a.window[1]] += part
    bias = b.bias + np.einsum("omij,m->o", b.weights, a.bias)
    return Conv(b.maps, (kh, kw), (sa_h * b.stride[0], sa_w * b.stride[1]), a.padding, w, bias)


def _as_conv(layer, shape) -> Conv | None:
    if isinstance(layer, AvgPool):
        return layer.as_conv(shape[0])
    if isinstance(layer, Conv):
        return layer
    return None


def _run_scale(run) -> float:
    s = 1.0
    for layer in run:
        if getattr(layer, "scale", None):
            s *= float(layer.scale)
    return s


def _collapse_run(run: list, shapes: list) -> LinearStage:
    in_shape, out_shape = shapes[0], shapes[-1]
    scale = _run_scale(run)
    convs = [_as_conv(layer, s) for layer, s in zip(run, shapes)]
    analytic = all(c is not None for c in convs) and all(
        c.padding == ((0, 0), (0, 0)) for c in convs[1:]
    )
    if analytic:
        conv = convs[0]
        for c in convs[1:]:
            conv = _compose_convs(conv, c)
        geom = conv.geometry(in_shape)
        if tuple(conv.out_shape(in_shape)) != tuple(out_shape):
            raise NetworkError("composed convolution does not reproduce the run's output shape")
        return LinearStage("conv", tuple(in_shape), tuple(out_shape),
                           conv.weights.reshape(conv.maps, -1), conv.bias, geom, scale)
    # generic affine run: image of zero and of every basis vector
    sub = Network(in_shape, tuple(run))
    k = int(np.prod(in_shape))
    bias = sub.forward_batch(np.zeros((1, k)))[0]
    mat = (sub.forward_batch(np.eye(k)) - bias[None, :]).T
    return LinearStage("dense", tuple(in_shape), (mat.shape[0],), mat, bias, None, scale)


def collapse_adjacent_linear(net: Network) -> CollapsedNetwork:
    """Merge every maximal run of conv/pool/dense layers into one affine stage.

    Runs made only of convolutions and pools (inner ones unpadded) compose
    analytically into one wider strided convolution; any other run becomes
    an explicit matrix.  Softmax is dropped (argmax is unchanged).
    """
    shapes = net.shapes()
    for i, layer in enumerate(net.layers):
        if isinstance(layer, (Conv, Dense)) and layer.weights is None:
            raise NetworkError(f"layer {i} has no weights")
        if isinstance(layer, Softmax) and i != len(net.layers) - 1:
            raise NetworkError("softmax is only supported as the last layer")
    stages: list[Stage] = []
    run: list = []
    run_shapes: list = []

    def flush(end_shape):
        if run:
            stages.append(_collapse_run(run, run_shapes + [end_shape]))
            run.clear()
            run_shapes.clear()

    for layer, shape in zip(net.layers, shapes):
        if isinstance(layer, LINEAR):
            run.append(layer)
            run_shapes.append(shape)
        elif isinstance(layer, Square):
            flush(shape)
            stages.append(SquareStage(tuple(shape)))
        elif isinstance(layer, Softmax):
            flush(shape)
        else:
            raise NetworkError(f"unsupported layer {type(layer).__name__}")
    flush(shapes[-1])
    if not stages:
        raise NetworkError("network has no layers")
    return CollapsedNetwork(net.input_shape, tuple(stages))
