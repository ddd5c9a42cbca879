"""Fixed-point quantization with worst-case magnitude propagation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ..backend import MagnitudeOverflowError
from ..ring import CrtModulus, ntt_friendly_primes
from .layers import CollapsedNetwork, LinearStage, NetworkError, SquareStage


class QuantizationOverflowError(MagnitudeOverflowError):
    def __init__(self, stage: int, kind: str, bound: int, capacity: int, suggestion: list[int] | None):
        self.stage, self.kind, self.bound, self.capacity, self.suggestion = stage, kind, bound, capacity, suggestion
        hint = f"; {len(suggestion)} primes would suffice: {suggestion}" if suggestion else ""
        super().__init__(
            f"stage {stage} ({kind}) can reach magnitude {bound}, above the plaintext capacity {capacity}{hint}"
        )


@dataclass(frozen=True)
class QuantizationPolicy:
    """Power-of-two scales; rounding is to nearest, ties to even."""

    input_scale: float = 1.0
    weight_scale: float = 16.0
    # one entry per linear stage; overrides the stage's own scale and weight_scale
    stage_scales: tuple[float, ...] | None = None
    input_bound: float = 255.0

    def __post_init__(self):
        scales = [self.input_scale, self.weight_scale, *(self.stage_scales or ())]
        if any(s <= 0 for s in scales):
            raise ValueError("quantization scales must be positive")
        for s in scales:
            if 2.0 ** round(math.log2(s)) != s:
                raise ValueError(f"scale {s} is not a power of two")


@dataclass(frozen=True, eq=False)
class QuantizedNetwork:
    """Integer-valued collapsed network plus the scale of every stage output."""

    net: CollapsedNetwork
    input_scale: float
    input_bound: int
    output_scales: tuple[float, ...]

    @property
    def stages(self):
        return self.net.stages

    @property
    def input_shape(self):
        return self.net.input_shape

    def quantize_input(self, x) -> np.ndarray:
        q = np.round(np.asarray(x, dtype=np.float64).reshape(-1) * self.input_scale)
        return np.array([int(v) for v in q], dtype=object)

    def forward(self, x_int) -> np.ndarray:
        """Exact integer forward pass (Python ints)."""
        x = np.array([int(v) for v in np.asarray(x_int).reshape(-1)], dtype=object)
        return self.net.forward(x)

    def bounds(self) -> list[int]:
        return propagate_bounds(self.net, self.input_bound)

    def max_bound(self) -> int:
        return max([self.input_bound, *self.bounds()])


def _to_int(a: np.ndarray) -> np.ndarray:
    a = np.round(np.asarray(a, dtype=np.float64))
    return np.vectorize(int, otypes=[object])(a) if a.size else a.astype(object)


def propagate_bounds(net: CollapsedNetwork, input_bound: int) -> list[int]:
    """Worst-case |value| after every stage: linear B*max_row sum|w| + max|b|, square B^2."""
    b = int(input_bound)
    out = []
    for s in net.stages:
        if isinstance(s, LinearStage):
            rows = [sum(abs(int(v)) for v in row) for row in s.weights]
            b = b * max(rows, default=0) + max((abs(int(v)) for v in s.bias), default=0)
        else:
            b = b * b
        out.append(b)
    return out


def minimal_primes(n: int, bound: int, limit: int = 64) -> list[int]:
    """Fewest NTT-friendly primes (largest first) whose product exceeds ``2 * bound``."""
    for count in range(1, limit + 1):
        primes = ntt_friendly_primes(n, count)
        if math.prod(primes) // 2 >= bound:
            return primes
    raise NetworkError(f"no set of {limit} primes holds magnitude {bound}")


def check_capacity(q: QuantizedNetwork, modulus: CrtModulus) -> list[int]:
    """Raise :class:`QuantizationOverflowError` naming the first stage that overflows."""
    cap = modulus.capacity
    if q.input_bound > cap:
        raise QuantizationOverflowError(-1, "input", q.input_bound, cap,
                                        minimal_primes(modulus.n, q.input_bound))
    bounds = q.bounds()
    for i, (s, b) in enumerate(zip(q.stages, bounds)):
        if b > cap:
            raise QuantizationOverflowError(i, s.kind, b, cap, minimal_primes(modulus.n, max(bounds)))
    return bounds


def quantize(net: CollapsedNetwork, policy: QuantizationPolicy = QuantizationPolicy(),
             modulus: CrtModulus | None = None) -> QuantizedNetwork:
    """Round weights to integers at power-of-two scales.

    A linear stage with weight scale ``s`` fed at scale ``t`` produces scale
    ``s*t``, so its bias is rounded at ``s*t``.  Squares square the scale.
    """
    linear = net.linear_stages
    if policy.stage_scales is not None and len(policy.stage_scales) != len(linear):
        raise NetworkError(f"{len(policy.stage_scales)} stage scales for {len(linear)} linear stages")
    scale = policy.input_scale
    stages, scales, li = [], [], 0
    for s in net.stages:
        if isinstance(s, LinearStage):
            if policy.stage_scales is not None:
                ws = policy.stage_scales[li]
            else:
                ws = policy.weight_scale * (s.scale if s.scale else 1.0)
            li += 1
            scale = scale * ws
            stages.append(replace(s, weights=_to_int(s.weights * ws), bias=_to_int(s.bias * scale), scale=ws))
        else:
            scale = scale * scale
            stages.append(s)
        scales.append(scale)
    qnet = CollapsedNetwork(net.input_shape, tuple(stages))
    bound = int(np.round(policy.input_bound * policy.input_scale))
    q = QuantizedNetwork(qnet, policy.input_scale, bound, tuple(scales))
    if modulus is not None:
        check_capacity(q, modulus)
    return q


def integer_network(net: CollapsedNetwork, input_bound: int) -> QuantizedNetwork:
    """Wrap a network whose weights are already integers (scale 1 everywhere)."""
    for s in net.linear_stages:
        if not np.all(np.asarray(s.weights, dtype=np.float64) == np.round(np.asarray(s.weights, dtype=np.float64))):
            raise NetworkError("weights are not integers")
    ones = tuple(1.0 for _ in net.linear_stages)
    return quantize(net, QuantizationPolicy(1.0, 1.0, ones, float(input_bound)))
