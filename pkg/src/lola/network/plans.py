"""Inference plans: explicit kernel and layout-transform steps with exact predicted costs.

A plan is built from the network's structure only (shapes, window
geometry); weights are bound at execution time.  Every step declares its
input and output :class:`Representation`, and consecutive steps must chain.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ..backend import OpCounters
from ..kernels import KernelCostModel, span_for, valid_extent
from ..representations import (
    PackingError,
    Representation,
    RepresentationError,
    combined_representation,
    conv_tau,
    dense_to_convolution_steps,
    next_pow2,
    plan_packing,
    stack_schedule,
    vector_rep,
)
from ..ring import RingError
from .layers import CollapsedNetwork, LinearStage, NetworkError, SquareStage

CIFAR_PRIMES = (2148728833, 2148794369, 2149810177)


class PlanError(NetworkError):
    """The chosen strategy cannot be applied to the network at this ring degree."""


@dataclass(frozen=True)
class PlanStrategy:
    name: str
    # how the client encodes the input: "convolution", "dense" or "simd"
    input: str
    stacking: bool = True
    # before a square, sparse outputs are either packed ("to-dense") or squared one by one ("per-part")
    sparse_square: str = "to-dense"
    # a convolution whose window volume x maps exceeds this is evaluated as a dense layer
    conv_dense_threshold: int = 20000
    n: int = 8192
    primes: tuple[int, ...] | None = None
    # sparse outputs render as "k×1" ("count") or "1×k" ("dim")
    sparse_label: str = "count"

    def __post_init__(self):
        if self.input not in ("convolution", "dense", "simd"):
            raise PlanError(f"unknown input encoding {self.input!r}")
        if self.sparse_square not in ("to-dense", "per-part"):
            raise PlanError(f"unknown sparse handling {self.sparse_square!r}")


PRESETS: dict[str, PlanStrategy] = {
    "lola-mnist": PlanStrategy("lola-mnist", "convolution", n=8192, sparse_label="dim"),
    "lola-dense-mnist": PlanStrategy("lola-dense-mnist", "dense", n=16384),
    "lola-cifar": PlanStrategy("lola-cifar", "convolution", stacking=False, n=16384, primes=CIFAR_PRIMES),
    "cryptonets-simd": PlanStrategy("cryptonets-simd", "simd", stacking=False, n=8192),
    "linear-features": PlanStrategy("linear-features", "dense", stacking=False, n=8192),
}


def resolve_strategy(strategy: str | PlanStrategy) -> PlanStrategy:
    if isinstance(strategy, PlanStrategy):
        return strategy
    try:
        return PRESETS[strategy]
    except KeyError:
        raise PlanError(f"unknown plan {strategy!r}; choose from {sorted(PRESETS)}") from None


@dataclass(frozen=True, eq=False)
class PlanStep:
    layer: str
    op: str
    description: str
    in_rep: Representation
    out_rep: Representation
    predicted: OpCounters
    stage: int | None = None
    params: dict = field(default_factory=dict)

    @property
    def live_messages(self) -> int:
        return self.in_rep.count + self.out_rep.count


@dataclass(frozen=True, eq=False)
class InferencePlan:
    strategy: PlanStrategy
    n: int
    input_shape: tuple[int, ...]
    steps: tuple[PlanStep, ...]
    input_rep: Representation
    output_rep: Representation
    squares: int

    @property
    def predicted(self) -> OpCounters:
        total = OpCounters()
        for s in self.steps:
            total.merge(s.predicted)
        return total

    @property
    def input_messages(self) -> int:
        return self.input_rep.count

    def message_counts(self) -> list[int]:
        return [s.in_rep.count for s in self.steps] + [self.output_rep.count]

    def label(self, rep: Representation) -> str:
        if rep.kind == "sparse" and self.strategy.sparse_label == "dim":
            return f"1×{rep.count}"
        return rep.size_label


_LAYER_NAMES = {"conv": "convolution layer", "dense": "dense layer", "square": "square layer"}


def _with_live(c: OpCounters, live: int) -> OpCounters:
    c = c.copy()
    c.live_messages_peak = live
    return c


def _rotations_phrase(c: OpCounters) -> str:
    rot, add = c.rotations, c.add
    text = f"{rot} rotations and additions" if rot == add else f"{rot} rotations and {add} additions"
    if c.mask_mul:
        text += f" ({c.mask_mul} masks)"
    return text


class _Builder:
    def __init__(self, net: CollapsedNetwork, strategy: PlanStrategy, n: int):
        if n < 4 or n & (n - 1):
            raise PlanError(f"ring degree {n} must be a power of two >= 4")
        self.net, self.s, self.n = net, strategy, n
        self.steps: list[PlanStep] = []

    def emit(self, layer, op, desc, in_rep, out_rep, cost, stage=None, **params):
        cost = _with_live(cost, in_rep.count + out_rep.count)
        self.steps.append(PlanStep(layer, op, desc, in_rep, out_rep, cost, stage, params))
        return out_rep

    # -- input -----------------------------------------------------------
    def input_rep(self) -> Representation:
        first = self.net.stages[0]
        shape = self.net.input_shape
        size = int(np.prod(shape))
        if self.s.input == "simd":
            return Representation("simd", size, size, tuple((j, 0) for j in range(size)))
        if self.s.input == "convolution":
            if not isinstance(first, LinearStage) or first.kind != "conv":
                raise PlanError("convolution input needs a convolution as the first stage")
            g = first.geometry
            if g.positions > self.n:
                raise PlanError(f"{g.positions} window positions exceed n={self.n}")
            return Representation("convolution", g.positions, g.volume,
                                  positions=tuple(range(g.positions)), windows=g.volume)
        if size > self.n:
            raise PlanError(f"input of {size} values exceeds n={self.n}")
        return vector_rep("dense", [(0, i) for i in range(size)], 1)

    # -- linear stages ---------------------------------------------------
    def linear(self, i: int, st: LinearStage, rep: Representation) -> Representation:
        layer = _LAYER_NAMES[st.kind]
        final = i == len(self.net.stages) - 1
        n = self.n
        if rep.kind == "simd":
            return self.simd_linear(i, st, rep, layer)
        if rep.kind == "convolution":
            return self.conv(i, st, rep, layer)
        if rep.kind == "sparse":
            return self.colmajor(i, st, rep, layer)
        if rep.count != 1:
            raise PlanError(f"stage {i} receives {rep.count} messages; expected one packed vector")
        if (st.kind == "conv" and st.geometry.volume * st.maps <= self.s.conv_dense_threshold
                and rep.is_contiguous):
            try:
                steps = dense_to_convolution_steps(st.geometry, n)
            except RepresentationError:
                steps = None
            if steps is not None:
                g = st.geometry
                conv_rep = Representation("convolution", g.positions, g.volume,
                                          positions=tuple(conv_tau(g)), windows=g.volume)
                self.emit(layer, "mask-to-conv", f"mask input to create {g.volume} messages", rep, conv_rep,
                          KernelCostModel.dense_to_convolution(steps), i)
                return self.conv(i, st, conv_rep, layer)
        if st.kind == "dense" and self.s.stacking and not final:
            stacked = self.try_stack(i, st, rep, layer)
            if stacked is not None:
                return stacked
        return self.rowmajor(i, st, rep, layer, final)

    def conv(self, i, st, rep, layer):
        if st.kind != "conv" or st.geometry.volume != rep.windows:
            raise PlanError(f"stage {i} does not match the convolution layout")
        out = vector_rep("interleaved", [(m, s) for m in range(st.maps) for s in rep.positions],
                         st.maps, clean=rep.clean)
        return self.emit(layer, "conv-rowmajor", "convolution vector -- row major multiplication", rep, out,
                         KernelCostModel.conv(st.maps, rep.windows, bias=True), i)

    def try_stack(self, i, st, rep, layer):
        n = self.n
        k = rep.length
        pad = next_pow2(k)
        copies = n // pad
        slots = [s for _, s in rep.locations]
        if copies < 2 or pad > n // 2 or not rep.clean:
            return None
        if len({s % pad for s in slots}) != len(slots):
            return None
        stacked = Representation("stacked", k, 1, tuple((0, s % pad) for s in slots), pad=pad, copies=copies)
        stack_cost = KernelCostModel.stack(n, pad, copies)
        self.emit(layer, "stack", f"stack {copies} copies using {_rotations_phrase(stack_cost)}", rep, stacked,
                  stack_cost, i, pad=pad, copies=copies, sizes=tuple(stack_schedule(n, pad, copies)))
        r = st.out_size
        calls = KernelCostModel.stacked_calls(r, pad, n)
        locs = [(j // copies, (j % copies) * pad + pad - 1) for j in range(r)]
        out = vector_rep("interleaved", locs, calls, clean=False)
        return self.emit(layer, "stacked-rowmajor",
                         f"stacked vector -- row major multiplication ({calls} calls of {copies} rows)",
                         stacked, out, KernelCostModel.stacked(n, r, pad, bias=True), i)

    def rowmajor(self, i, st, rep, layer, final):
        n = self.n
        slots = [s for _, s in rep.locations]
        r = st.out_size
        span = span_for(slots, n)
        if not final:
            # the sparse output will be read at slots 0..r-1
            for cand in (span, n // 2, n):
                if cand >= span and valid_extent(n, cand) >= r:
                    span = cand
                    break
        if rep.is_contiguous:
            name = "dense vector -- row major multiplication"
        else:
            name = "interleaved vector -- row major multiplication"
        out = Representation("sparse", r, r, tuple((j, 0) for j in range(r)), valid_extent=valid_extent(n, span))
        return self.emit(layer, "rowmajor", name, rep, out, KernelCostModel.rowmajor(n, r, span, bias=True), i,
                         span=span, sigma=tuple(slots))

    def colmajor(self, i, st, rep, layer):
        r = st.out_size
        if r > self.n or rep.valid_extent < r:
            raise PlanError(f"stage {i}: sparse parts are valid on {rep.valid_extent} slots, {r} needed")
        if rep.count != st.in_size:
            raise PlanError(f"stage {i}: {rep.count} sparse parts for {st.in_size} inputs")
        out = vector_rep("dense", [(0, j) for j in range(r)], 1)
        return self.emit(layer, "sparse-colmajor", "sparse vector -- column major multiplication", rep, out,
                         KernelCostModel.sparse_colmajor(rep.count, bias=True), i)

    def simd_linear(self, i, st, rep, layer):
        terms = simd_term_count(st)
        r = st.out_size
        out = Representation("simd", r, r, tuple((j, 0) for j in range(r)))
        cost = OpCounters(scalar_mul=terms, add=terms - r, plain_add=r)
        return self.emit(layer, "simd-linear", f"per-node weighted sums ({terms} scalar products)", rep, out, cost, i)

    # -- squares ---------------------------------------------------------
    def square(self, i, st: SquareStage, rep: Representation) -> Representation:
        layer = _LAYER_NAMES["square"]
        n = self.n
        if rep.kind in ("dense", "interleaved") and rep.count > 1:
            rep = self.combine(i, rep)
        elif rep.kind == "sparse" and rep.count > 1 and self.s.sparse_square == "to-dense":
            k = rep.count
            if rep.valid_extent < k:
                raise PlanError(f"stage {i}: sparse parts are valid on {rep.valid_extent} slots, {k} needed")
            out = vector_rep("dense", [(0, j) for j in range(k)], 1)
            prev = self.steps[-1].layer if self.steps else layer
            rep = self.emit(prev, "sparse-to-dense",
                            f"convert to dense using {k} masks and {k - 1} additions", rep, out,
                            KernelCostModel.sparse_to_dense(k), i, targets=tuple(range(k)))
        return self.emit(layer, "square", "square", rep, rep, KernelCostModel.square(rep.count), i)

    def combine(self, i, rep):
        n = self.n
        parts = [rep.slots_of(m) for m in range(rep.count)]
        dirty = [not rep.clean] * rep.count
        period = n
        nxt = self.net.stages[i + 1] if i + 1 < len(self.net.stages) else None
        last = i + 1 == len(self.net.stages) - 1
        if (self.s.stacking and isinstance(nxt, LinearStage) and nxt.kind == "dense" and not last):
            pad = next_pow2(rep.length)
            if 2 * pad <= n:
                period = pad
        try:
            placements = plan_packing(parts, n, period, dirty)
        except PackingError:
            if period == n:
                raise PlanError(f"{rep.length} values do not fit one message of n={n}") from None
            period = n
            placements = plan_packing(parts, n, period, dirty)
        out = combined_representation(rep, placements, n, period)
        cost = KernelCostModel.combine(placements)
        prev = self.steps[-1].layer
        return self.emit(prev, "combine", f"combine {rep.count} messages into one using {_rotations_phrase(cost)}",
                         rep, out, cost, i, placements=tuple(placements), period=period)

    def build(self) -> InferencePlan:
        rep0 = rep = self.input_rep()
        for i, st in enumerate(self.net.stages):
            if isinstance(st, LinearStage):
                rep = self.linear(i, st, rep)
            else:
                rep = self.square(i, st, rep)
        for a, b in zip(self.steps, self.steps[1:]):
            if a.out_rep != b.in_rep:
                raise PlanError(f"representation chain broken between {a.op} and {b.op}")
        return InferencePlan(self.s, self.n, tuple(self.net.input_shape), tuple(self.steps), rep0, rep,
                             self.net.squares)


def simd_taps(st: LinearStage) -> list[list[tuple[int, int]]]:
    """(input index, weight column) pairs feeding every output node."""
    if st.kind == "dense":
        cols = list(range(st.in_size))
        return [[(c, c) for c in cols] for _ in range(st.out_size)]
    idx = st.geometry.gather_index()
    per_pos = [[(int(idx[j, p]), j) for j in range(idx.shape[0]) if idx[j, p] >= 0]
               for p in range(idx.shape[1])]
    return [per_pos[p] for m in range(st.maps) for p in range(idx.shape[1])]


def simd_term_count(st: LinearStage) -> int:
    if st.kind == "dense":
        return st.in_size * st.out_size
    return int((st.geometry.gather_index() >= 0).sum()) * st.maps


def build_plan(net, strategy: str | PlanStrategy, n: int | None = None) -> InferencePlan:
    """Lay out every stage of ``net`` according to ``strategy`` at ring degree ``n``."""
    net = getattr(net, "net", net)
    if not isinstance(net, CollapsedNetwork):
        raise PlanError("plans are built from collapsed networks")
    s = resolve_strategy(strategy)
    try:
        return _Builder(net, s, n or s.n).build()
    except (RepresentationError, RingError) as e:
        raise PlanError(str(e)) from None


def fit_ring_degree(net, strategy: str | PlanStrategy, smallest: int = 16, largest: int = 32768) -> InferencePlan:
    """Plan at the smallest power-of-two ring degree that the strategy accepts."""
    n = smallest
    last: Exception | None = None
    while n <= largest:
        try:
            return build_plan(net, strategy, n)
        except PlanError as e:
            last = e
        n *= 2
    raise PlanError(f"no ring degree up to {largest} fits: {last}")
