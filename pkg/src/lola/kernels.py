"""Matrix-vector kernels that change representation, plus the square activation.

Each kernel has a closed-form cost in :class:`KernelCostModel`; executions
are expected to reproduce those counts exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .backend import Evaluator, Message, OpCounters
from .representations import (
    EncodedTensor,
    Representation,
    RepresentationError,
    next_pow2,
    vector_rep,
)


class KernelError(RepresentationError):
    pass


class PermutationMismatchError(KernelError):
    pass


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    """Plaintext weights of an ``r x k`` matrix.

    ``sigma`` (row-major layout only) records the slot each column was
    shuffled to, so an interleaved input can be consumed directly.
    """

    entries: np.ndarray
    layout: str = "row-major"
    sigma: tuple[int, ...] | None = None

    def __post_init__(self):
        e = np.asarray(self.entries)
        if e.ndim != 2:
            raise KernelError("weights must be a matrix")
        object.__setattr__(self, "entries", e)
        if self.sigma is not None:
            if len(self.sigma) != e.shape[1] or len(set(self.sigma)) != len(self.sigma):
                raise KernelError("sigma must be a bijection onto distinct slots")

    @property
    def rows(self) -> int:
        return self.entries.shape[0]

    @property
    def cols(self) -> int:
        return self.entries.shape[1]

    def shuffled(self, sigma: Sequence[int]) -> "WeightMatrix":
        return WeightMatrix(self.entries, "row-major", tuple(int(s) for s in sigma))

    def row_in_slots(self, j: int, n: int) -> np.ndarray:
        sigma = range(self.cols) if self.sigma is None else self.sigma
        out = np.zeros(n, dtype=object)
        out[list(sigma)] = list(self.entries[j])
        return out


def log2(x: int) -> int:
    return int(x).bit_length() - 1


# ---------------------------------------------------------------------------
# cost model


class KernelCostModel:
    """Predicted operation counts as closed-form functions of the shapes."""

    @staticmethod
    def linear_rotations(n: int, sizes: Sequence[int]) -> OpCounters:
        c = OpCounters()
        for s in sizes:
            if s == n // 2:
                c.rot_rows += 1
            else:
                c.rot_cols += bin(abs(s)).count("1")
            c.rotations += 1
        return c

    @staticmethod
    def dot_product(n: int, span: int) -> OpCounters:
        c = KernelCostModel.linear_rotations(n, [1 << i for i in range(log2(span))])
        c.ct_plain_mul = 1
        c.add = log2(span)
        return c

    @staticmethod
    def rowmajor(n: int, rows: int, span: int, bias: bool = False) -> OpCounters:
        one = KernelCostModel.dot_product(n, span)
        out = OpCounters()
        for _ in range(rows):
            out.merge(one)
        out.plain_add = rows if bias else 0
        return out

    @staticmethod
    def sparse_colmajor(k: int, bias: bool = False) -> OpCounters:
        return OpCounters(ct_plain_mul=k, add=k - 1, plain_add=int(bias))

    @staticmethod
    def stacked_calls(rows: int, pad: int, n: int) -> int:
        return math.ceil(rows * pad / n)

    @staticmethod
    def stacked(n: int, rows: int, pad: int, bias: bool = False) -> OpCounters:
        calls = KernelCostModel.stacked_calls(rows, pad, n)
        d = log2(pad)
        one = KernelCostModel.linear_rotations(n, [1 << i for i in range(d)])
        out = OpCounters(ct_plain_mul=calls, add=calls * d, plain_add=calls if bias else 0)
        out.rot_cols = calls * one.rot_cols
        out.rot_rows = calls * one.rot_rows
        out.rotations = calls * one.rotations
        return out

    @staticmethod
    def conv(maps: int, windows: int, bias: bool = False) -> OpCounters:
        return OpCounters(scalar_mul=maps * windows, add=maps * (windows - 1),
                          plain_add=maps if bias else 0)

    @staticmethod
    def square(messages: int = 1) -> OpCounters:
        return OpCounters(ct_ct_mul=messages)

    @staticmethod
    def stack(n: int, pad: int, copies: int) -> OpCounters:
        sizes = [pad << i for i in range(log2(copies))]
        c = KernelCostModel.linear_rotations(n, sizes)
        c.add = len(sizes)
        return c

    @staticmethod
    def combine(placements) -> OpCounters:
        c = OpCounters(add=len(placements) - 1)
        for pl in placements:
            if pl.masked:
                c.ct_plain_mul += 1
                c.mask_mul += 1
            if pl.shift:
                c.rot_cols += bin(abs(pl.shift)).count("1")
                c.rotations += 1
            if pl.swap:
                c.rot_rows += 1
                c.rotations += 1
        return c

    @staticmethod
    def dense_to_convolution(steps) -> OpCounters:
        c = OpCounters(ct_plain_mul=len(steps), mask_mul=len(steps))
        for _, shift in steps:
            if shift:
                c.rot_cols += bin(abs(shift)).count("1")
                c.rotations += 1
        return c

    @staticmethod
    def sparse_to_dense(k: int) -> OpCounters:
        return OpCounters(ct_plain_mul=k, mask_mul=k, add=k - 1)


# ---------------------------------------------------------------------------
# kernels


def dot_product(ev: Evaluator, v: Message, row, span: int | None = None) -> Message:
    """One plaintext product, then left rotate-adds of sizes 1, 2, ..., span/2.

    The full sum lands in slot 0; in every row-0 slot when ``span == n/2``
    and in every slot when ``span == n``.
    """
    span = ev.n if span is None else span
    if span & (span - 1) or span > ev.n:
        raise KernelError(f"span {span} must be a power of two <= n")
    row = np.asarray(row, dtype=object)
    if np.any(row[span:] != 0):
        raise KernelError("weights outside the summed span would be dropped")
    m = ev.mul_plain(v, row)
    size = 1
    while size < span:
        rot = ev.rotate_rows(m) if size == ev.n // 2 else ev.rotate_columns(m, -size)
        m = ev.add(m, rot)
        size *= 2
    return m


def valid_extent(n: int, span: int) -> int:
    if span == n:
        return n
    if span == n // 2:
        return n // 2
    return 1


def _single_vector(t: EncodedTensor) -> list[int]:
    if t.rep.count != 1 or t.rep.kind not in ("dense", "interleaved", "stacked"):
        raise KernelError(f"expected a single dense/interleaved message, got {t.rep.kind} x{t.rep.count}")
    return [s for _, s in t.rep.locations]


def span_for(slots: Sequence[int], n: int) -> int:
    top = max(slots, default=0) + 1
    return n if top > n // 2 else next_pow2(top)


def _rowmajor(ev: Evaluator, W: WeightMatrix, v: EncodedTensor, span: int | None,
              bias: Sequence[int] | None) -> EncodedTensor:
    slots = list(W.sigma) if W.sigma is not None else list(range(W.cols))
    span = span_for(slots, ev.n) if span is None else span
    if max(slots) >= span:
        raise KernelError(f"value in slot {max(slots)} outside span {span}")
    x = v.messages[0]

    def one(e: Evaluator, j: int) -> Message:
        out = dot_product(e, x, W.row_in_slots(j, ev.n), span)
        if bias is not None:
            out = e.add_plain(out, int(bias[j]))
        return out

    msgs = ev.map(one, range(W.rows))
    rep = Representation("sparse", W.rows, W.rows, tuple((j, 0) for j in range(W.rows)),
                         valid_extent=valid_extent(ev.n, span))
    return EncodedTensor(tuple(msgs), rep)


def matvec_dense_rowmajor(ev: Evaluator, W, v: EncodedTensor, span: int | None = None,
                          bias: Sequence[int] | None = None) -> EncodedTensor:
    """``r`` dot products against a dense vector; output is sparse."""
    slots = _single_vector(v)
    if slots != list(range(len(slots))):
        raise KernelError("dense row-major needs a contiguous dense vector")
    W = W if isinstance(W, WeightMatrix) else WeightMatrix(W)
    if W.cols != len(slots):
        raise KernelError(f"matrix has {W.cols} columns, vector has {len(slots)} values")
    return _rowmajor(ev, WeightMatrix(W.entries), v, span, bias)


def matvec_interleaved_rowmajor(ev: Evaluator, W: WeightMatrix, v: EncodedTensor,
                                span: int | None = None, bias: Sequence[int] | None = None) -> EncodedTensor:
    """Row-major product whose columns were shuffled to the vector's slot permutation."""
    slots = _single_vector(v)
    sigma = list(W.sigma) if W.sigma is not None else list(range(W.cols))
    if sigma != slots:
        raise PermutationMismatchError("matrix columns are not shuffled to the vector's layout")
    return _rowmajor(ev, W, v, span, bias)


def matvec_sparse_colmajor(ev: Evaluator, W, v: EncodedTensor, out_slots: Sequence[int] | None = None,
                           bias: Sequence[int] | None = None) -> EncodedTensor:
    """``sum_i v_i * c^i`` over sparse parts; output is one dense message."""
    if v.rep.kind != "sparse":
        raise KernelError("column-major product needs a sparse vector")
    W = np.asarray(W.entries if isinstance(W, WeightMatrix) else W)
    r, k = W.shape
    if k != v.rep.count:
        raise KernelError(f"matrix has {k} columns, vector has {v.rep.count} parts")
    out_slots = list(range(r)) if out_slots is None else [int(s) for s in out_slots]
    if r > ev.n or max(out_slots) >= ev.n:
        raise KernelError(f"{r} outputs do not fit n={ev.n}")
    if max(out_slots) >= v.rep.valid_extent:
        raise KernelError("sparse parts are not valid at every output slot")

    def column(e: Evaluator, i: int) -> Message:
        col = np.zeros(ev.n, dtype=object)
        col[out_slots] = list(W[:, i])
        return e.mul_plain(v.messages[i], col)

    terms = ev.map(column, range(k))
    acc = terms[0]
    for t in terms[1:]:
        acc = ev.add(acc, t)
    if bias is not None:
        b = np.zeros(ev.n, dtype=object)
        b[out_slots] = [int(x) for x in bias]
        acc = ev.add_plain(acc, b)
    return EncodedTensor((acc,), vector_rep("dense", [(0, s) for s in out_slots], 1))


def matvec_stacked_rowmajor(ev: Evaluator, W, v: EncodedTensor,
                            bias: Sequence[int] | None = None) -> EncodedTensor:
    """Each call multiplies ``n/pad`` concatenated rows against the stacked copies.

    Right rotate-adds of sizes 1..pad/2 leave row ``q*copies + b`` in slot
    ``b*pad + pad - 1`` of call ``q``'s output (interleaved, other slots dirty).
    """
    rep = v.rep
    if rep.kind != "stacked":
        raise KernelError("stacked row-major needs a stacked vector")
    W = np.asarray(W.entries if isinstance(W, WeightMatrix) else W)
    r, k = W.shape
    if k != rep.length:
        raise KernelError(f"matrix has {k} columns, vector has {rep.length} values")
    pad, copies = rep.pad, rep.copies
    if pad * copies != ev.n:
        raise KernelError("stacked copies must fill the message")
    if pad > ev.n // 2:
        raise KernelError("stride must fit one slot row")
    residues = [s for _, s in rep.locations]
    calls = KernelCostModel.stacked_calls(r, pad, ev.n)
    d = log2(pad)
    x = v.messages[0]

    def one(e: Evaluator, q: int) -> Message:
        w = np.zeros(ev.n, dtype=object)
        bvec = np.zeros(ev.n, dtype=object)
        for b in range(copies):
            j = q * copies + b
            if j < r:
                w[[b * pad + s for s in residues]] = list(W[j])
                if bias is not None:
                    bvec[b * pad + pad - 1] = int(bias[j])
        m = e.mul_plain(x, w)
        for i in range(d):
            m = e.add(m, e.rotate_columns(m, 1 << i))
        if bias is not None:
            m = e.add_plain(m, bvec)
        return m

    msgs = ev.map(one, range(calls))
    locs = [(j // copies, (j % copies) * pad + pad - 1) for j in range(r)]
    return EncodedTensor(tuple(msgs), vector_rep("interleaved", locs, calls, clean=False))


def conv_rowmajor(ev: Evaluator, weights, x: EncodedTensor,
                  bias: Sequence[int] | None = None) -> EncodedTensor:
    """Per map, ``sum_j w_j m^j`` over the convolution messages (scalar products)."""
    rep = x.rep
    if rep.kind != "convolution":
        raise KernelError("convolution row-major needs a convolution tensor")
    weights = np.asarray(weights)
    if weights.ndim == 1:
        weights = weights[None, :]
    maps, r = weights.shape
    if r != rep.windows:
        raise KernelError(f"{r} weights per map but {rep.windows} window messages")
    positions = list(rep.positions)

    def one(e: Evaluator, m: int) -> Message:
        acc = None
        for j in range(r):
            term = e.mul_plain(x.messages[j], int(weights[m, j]))
            acc = term if acc is None else e.add(acc, term)
        if bias is not None:
            b = np.zeros(ev.n, dtype=object)
            b[positions] = int(bias[m])
            acc = e.add_plain(acc, b)
        return acc

    msgs = ev.map(one, range(maps))
    locs = [(m, s) for m in range(maps) for s in positions]
    return EncodedTensor(tuple(msgs), vector_rep("interleaved", locs, maps, clean=rep.clean))


def square_activation(ev: Evaluator, m: Message) -> Message:
    return ev.square(m)


def square_tensor(ev: Evaluator, t: EncodedTensor) -> EncodedTensor:
    """Square every message (one product for a packed vector)."""
    return EncodedTensor(tuple(ev.map(lambda e, m: e.square(m), t.messages)), t.rep)


def matvec_simd(ev: Evaluator, rows: Sequence[Sequence[tuple[int, int]]], t: EncodedTensor,
                bias: Sequence[int] | None = None) -> EncodedTensor:
    """One output message per node: scalar products of the input messages it reads.

    ``rows[j]`` lists ``(input index, weight)`` pairs of node ``j``.
    """
    rep = t.rep
    if rep.kind != "simd":
        raise KernelError("per-node weighted sums need a SIMD tensor")

    def node(e: Evaluator, j: int) -> Message:
        acc = None
        for i, w in rows[j]:
            term = e.mul_plain(t.messages[i], int(w))
            acc = term if acc is None else e.add(acc, term)
        if acc is None:
            raise KernelError(f"node {j} reads no inputs")
        if bias is not None:
            acc = e.add_plain(acc, int(bias[j]))
        return acc

    msgs = ev.map(node, range(len(rows)))
    out = Representation("simd", len(rows), len(rows), tuple((j, 0) for j in range(len(rows))),
                         records=rep.records)
    return EncodedTensor(tuple(msgs), out)
