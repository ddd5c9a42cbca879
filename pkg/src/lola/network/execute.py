"""Running a plan on an evaluator and checking it against the integer oracle."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .. import kernels as K
from ..backend import Evaluator, OpCounters
from ..representations import (
    EncodedTensor,
    combine_interleaved,
    decode,
    dense_to_convolution,
    encode_convolution,
    encode_dense,
    encode_simd,
    sparse_to_dense,
    stack_copies,
)
from .layers import LinearStage, ShapeError
from .plans import InferencePlan, PlanError, PlanStep
from .quantize import QuantizedNetwork


class ExecutionError(PlanError):
    pass


def _int_array(a) -> np.ndarray:
    a = np.asarray(a)
    if a.dtype != object:
        return a.astype(np.int64)
    if a.size and max(abs(int(v)) for v in a.reshape(-1)) < 2**62:
        return a.astype(np.int64)
    return a


class StageRows:
    """Rows of a linear stage laid out on the input's slots, produced on demand.

    Convolution stages evaluated as dense layers never materialize the full
    matrix; each row is the map's kernel scattered over one window.
    """

    def __init__(self, stage: LinearStage, sigma: Sequence[int]):
        self.stage = stage
        self.sigma = tuple(int(s) for s in sigma)
        self.weights = _int_array(stage.weights)
        self.rows = stage.out_size
        self.cols = stage.in_size
        if len(self.sigma) != self.cols:
            raise ExecutionError(f"{len(self.sigma)} slots for {self.cols} inputs")
        self._sig = np.array(self.sigma, dtype=np.int64)
        if stage.kind == "conv":
            self._idx = stage.geometry.gather_index()
            self._positions = self._idx.shape[1]

    def row_in_slots(self, j: int, n: int) -> np.ndarray:
        out = np.zeros(n, dtype=self.weights.dtype)
        if self.stage.kind == "dense":
            out[self._sig] = self.weights[j]
        else:
            m, p = divmod(j, self._positions)
            src = self._idx[:, p]
            ok = src >= 0
            out[self._sig[src[ok]]] = self.weights[m][ok]
        return out


def output_bias(st: LinearStage) -> np.ndarray:
    """Bias of every output value (conv biases repeat over window positions)."""
    if st.kind == "conv":
        return np.repeat(np.asarray(st.bias, dtype=object), st.geometry.positions)
    return np.asarray(st.bias, dtype=object)


def encode_input(ev: Evaluator, plan: InferencePlan, x_int, first_stage: LinearStage | None = None) -> EncodedTensor:
    """Client-side encoding matching the plan's first representation."""
    x = np.asarray(x_int).reshape(-1)
    size = int(np.prod(plan.input_shape))
    if x.shape[0] != size:
        raise ShapeError(f"input has {x.shape[0]} values, the network expects {size} {plan.input_shape}")
    kind = plan.input_rep.kind
    if kind == "simd":
        return encode_simd(ev, x.reshape(1, -1).astype(object))
    if kind == "convolution":
        if first_stage is None:
            raise ExecutionError("convolution input needs the first stage geometry")
        return encode_convolution(ev, x.reshape(plan.input_shape), first_stage.geometry)
    return encode_dense(ev, x)


@dataclass
class StepRecord:
    step: PlanStep
    measured: OpCounters
    seconds: float


@dataclass
class ExecutionResult:
    scores: np.ndarray
    counters: OpCounters
    depth: int
    records: list[StepRecord] = field(default_factory=list)
    output: EncodedTensor | None = None

    @property
    def matches_prediction(self) -> bool:
        return all(r.measured.as_dict() == r.step.predicted.as_dict() for r in self.records)


def _run_step(ev: Evaluator, step: PlanStep, t: EncodedTensor, q: QuantizedNetwork) -> EncodedTensor:
    st = q.stages[step.stage] if step.stage is not None else None
    op = step.op
    if op == "mask-to-conv":
        return dense_to_convolution(ev, t, st.geometry)
    if op == "conv-rowmajor":
        return K.conv_rowmajor(ev, _int_array(st.weights), t, bias=st.bias)
    if op == "combine":
        return combine_interleaved(ev, t, list(step.params["placements"]), step.params["period"])
    if op == "square":
        return K.square_tensor(ev, t)
    if op == "sparse-to-dense":
        return sparse_to_dense(ev, t, step.params["targets"])
    if op == "stack":
        return stack_copies(ev, t, step.params["copies"], step.params["pad"])
    if op == "stacked-rowmajor":
        return K.matvec_stacked_rowmajor(ev, _int_array(st.dense_matrix()), t, bias=output_bias(st))
    if op == "rowmajor":
        rows = StageRows(st, step.params["sigma"])
        return K.matvec_interleaved_rowmajor(ev, rows, t, span=step.params["span"], bias=output_bias(st))
    if op == "sparse-colmajor":
        return K.matvec_sparse_colmajor(ev, _int_array(st.dense_matrix()), t, bias=output_bias(st))
    if op == "simd-linear":
        return K.matvec_simd(ev, simd_rows(st), t, bias=output_bias(st))
    raise ExecutionError(f"unknown plan step {op!r}")


def simd_rows(st: LinearStage) -> list[list[tuple[int, int]]]:
    w = st.weights
    if st.kind == "dense":
        return [list(zip(range(st.in_size), w[j])) for j in range(st.out_size)]
    idx = st.geometry.gather_index()
    rows = []
    for m in range(st.maps):
        for p in range(idx.shape[1]):
            rows.append([(int(idx[j, p]), w[m, j]) for j in range(idx.shape[0]) if idx[j, p] >= 0])
    return rows


def execute(plan: InferencePlan, q: QuantizedNetwork, x, ev: Evaluator) -> ExecutionResult:
    """Encode ``x`` (integers, or an already encoded tensor) and run every step.

    Each step's output representation is checked against the plan and its
    counter delta recorded next to the prediction.
    """
    if ev.n != plan.n:
        raise ExecutionError(f"plan built for n={plan.n}, evaluator has n={ev.n}")
    if isinstance(x, EncodedTensor):
        t = x
    else:
        first = q.stages[0] if isinstance(q.stages[0], LinearStage) else None
        t = encode_input(ev, plan, x, first)
    if t.rep != plan.input_rep:
        raise ExecutionError("input representation does not match the plan")
    records = []
    for step in plan.steps:
        before = ev.counters.copy()
        saved_peak = ev.counters.live_messages_peak
        ev.counters.live_messages_peak = 0
        start = time.perf_counter()
        t = _run_step(ev, step, t, q)
        ev.note_live(step.in_rep.count + len(t.messages))
        elapsed = time.perf_counter() - start
        delta = ev.counters - before
        delta.live_messages_peak = ev.counters.live_messages_peak
        ev.counters.live_messages_peak = max(saved_peak, ev.counters.live_messages_peak)
        if t.rep != step.out_rep:
            raise ExecutionError(f"step {step.op} produced {t.rep.kind} layout different from the plan")
        records.append(StepRecord(step, delta, elapsed))
    scores = decode(ev, t)
    if scores.ndim == 2:  # SIMD: one record
        scores = scores[0]
    depth = max(m.depth for m in t.messages)
    return ExecutionResult(scores, ev.counters.copy(), depth, records, t)


def predict(scores: Sequence[int]) -> int:
    """Index of the largest score; ties go to the lowest index."""
    scores = list(scores)
    if not scores:
        raise ValueError("no scores")
    best = 0
    for i, s in enumerate(scores):
        if s > scores[best]:
            best = i
    return best
