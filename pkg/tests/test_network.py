import itertools
import math

import numpy as np
import pytest

from lola import oracles
from lola.network import (
    AvgPool,
    Conv,
    Dense,
    LinearStage,
    Network,
    NetworkError,
    QuantizationOverflowError,
    QuantizationPolicy,
    ShapeError,
    Softmax,
    Square,
    collapse_adjacent_linear,
    integer_network,
    minimal_primes,
    propagate_bounds,
    quantize,
)
from lola.network.presets import mnist_network, toy_network
from lola.ring import CrtModulus, ntt_friendly_primes


def _ints(rng, *shape, lim=3):
    return rng.integers(-lim, lim + 1, shape).astype(float)


def test_shapes_of_mnist_network():
    shapes = mnist_network().shapes()
    assert shapes[:3] == [(1, 28, 28), (5, 13, 13), (5, 13, 13)]
    assert shapes[-1] == (10,)


def test_shape_errors_name_the_layer(rng):
    with pytest.raises(ShapeError, match="layer 1"):
        Network((1, 6, 6), (Square(), Dense(3, np.zeros((3, 35)), np.zeros(3))))
    with pytest.raises(ShapeError):
        Network((1, 6, 6), (Conv(2, 3, 2, 0, np.zeros((2, 1, 3, 3)), np.zeros(2)),))


def test_conv_forward_matches_oracle(rng):
    w = _ints(rng, 3, 2, 3, 2)
    b = _ints(rng, 3)
    net = Network((2, 7, 6), (Conv(3, (3, 2), (2, 2), ((0, 0), (0, 0)), w, b),))
    x = rng.integers(-5, 6, (2, 7, 6))
    assert net.forward(x.reshape(-1)).tolist() == oracles.int_conv(x, w.astype(int), (2, 2), bias=b.astype(int))


def test_average_pool_counts_padding_in_mean():
    net = Network((1, 3, 3), (AvgPool(2, 2, ((0, 1), (0, 1))),))
    out = net.forward(np.ones(9))
    assert out.tolist() == [1.0, 0.5, 0.5, 0.25]


def test_collapse_composes_conv_and_pool(rng):
    net = Network((2, 10, 10), (
        Conv(4, 3, 1, 1, rng.normal(size=(4, 2, 3, 3)), rng.normal(size=4)),
        AvgPool(2),
        Conv(3, 3, 1, 0, rng.normal(size=(3, 4, 3, 3)), rng.normal(size=3)),
        Square(),
        Dense(2, rng.normal(size=(2, 27)), rng.normal(size=2)),
        Softmax(),
    ))
    c = collapse_adjacent_linear(net)
    first = c.stages[0]
    assert first.kind == "conv" and first.geometry.window == (8, 8) and first.geometry.stride == (2, 2)
    assert [s.kind for s in c.stages] == ["conv", "square", "dense"]
    for _ in range(5):
        x = rng.normal(size=200)
        assert np.allclose(c.forward(x), net.forward(x), rtol=1e-10, atol=1e-10)


def test_collapse_falls_back_to_dense(rng):
    net = Network((1, 4, 4), (
        Conv(2, 2, 1, 0, rng.normal(size=(2, 1, 2, 2)), rng.normal(size=2)),
        Dense(3, rng.normal(size=(3, 18)), rng.normal(size=3)),
    ))
    c = collapse_adjacent_linear(net)
    assert len(c.stages) == 1 and c.stages[0].kind == "dense"
    x = rng.normal(size=16)
    assert np.allclose(c.forward(x), net.forward(x))


def test_collapse_rejects_missing_weights():
    with pytest.raises(NetworkError):
        collapse_adjacent_linear(Network((4,), (Dense(2),)))


def test_conv_stage_dense_matrix_agrees(rng):
    c = collapse_adjacent_linear(Network((1, 5, 5), (Conv(2, 3, 2, 1, rng.normal(size=(2, 1, 3, 3)), rng.normal(size=2)),)))
    st = c.stages[0]
    x = rng.normal(size=25)
    assert np.allclose(st.dense_matrix() @ x + np.repeat(st.bias, 9), st.apply(x))


def test_quantize_rounds_at_powers_of_two():
    net = Network((2,), (Dense(1, np.array([[0.53, -0.47]]), np.array([0.1])),))
    q = quantize(collapse_adjacent_linear(net), QuantizationPolicy(input_scale=4, weight_scale=16, input_bound=1))
    st = q.stages[0]
    assert st.weights.tolist() == [[8, -8]]  # 8.48 -> 8, -7.52 -> -8
    assert st.bias.tolist() == [6]  # 0.1 * 64 = 6.4
    assert q.output_scales == (64.0,)
    assert q.quantize_input([0.375, 0.625]).tolist() == [2, 2]  # 1.5 and 2.5 round to even
    with pytest.raises(ValueError):
        QuantizationPolicy(weight_scale=10)


def test_square_squares_the_scale(rng):
    net = Network((3,), (Dense(2, rng.normal(size=(2, 3)), np.zeros(2)), Square(), Dense(1, rng.normal(size=(1, 2)), np.zeros(1))))
    q = quantize(collapse_adjacent_linear(net), QuantizationPolicy(2, 8))
    assert q.output_scales == (16.0, 256.0, 2048.0)


def test_propagated_bounds_hold_on_corners(rng):
    for _ in range(10):
        d = int(rng.integers(1, 6))
        net = Network((d,), (
            Dense(3, _ints(rng, 3, d), _ints(rng, 3)), Square(), Dense(2, _ints(rng, 2, 3), _ints(rng, 2)),
        ))
        q = integer_network(collapse_adjacent_linear(net), 4)
        bounds = q.bounds()
        for corner in itertools.product((-4, 4), repeat=d):
            x = np.array(corner, dtype=object)
            for stage, bound in zip(q.stages, bounds):
                x = stage.apply(x)
                assert max(abs(int(v)) for v in x) <= bound


def test_minimal_primes_and_overflow_message():
    n = 64
    bound = 2**70
    primes = minimal_primes(n, bound)
    assert math.prod(primes) // 2 >= bound and math.prod(primes[:-1]) // 2 < bound
    net = Network((2,), (Dense(1, np.array([[100.0, 100.0]]), np.zeros(1)), Square(), Dense(1, np.array([[100.0]]), np.zeros(1))))
    q = integer_network(collapse_adjacent_linear(net), 2**20)
    small = CrtModulus.of(ntt_friendly_primes(n, 1), n)
    with pytest.raises(QuantizationOverflowError) as info:
        quantize(q.net, QuantizationPolicy(1, 1, (1, 1), 2**20), small)
    assert info.value.stage == 1 and info.value.kind == "square"
    assert info.value.suggestion == minimal_primes(n, max(q.bounds()))


def test_toy_network_is_integer_and_shaped(rng):
    net = toy_network(rng)
    assert 8 <= net.input_shape[1] <= 16
    c = collapse_adjacent_linear(net)
    assert [s.kind for s in c.stages] == ["conv", "square", "dense", "square", "dense"]
    assert all(isinstance(s, LinearStage) for s in c.linear_stages)
