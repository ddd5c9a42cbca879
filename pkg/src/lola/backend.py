"""Evaluator contract standing in for the HE scheme.

A :class:`Message` is what a ciphertext would be: an immutable payload plus
bookkeeping (multiplicative depth, plain-multiplication depth, per-slot
magnitude bounds).  Two evaluators implement the same contract:

* :class:`SlotEvaluator` keeps payloads in slot form and permutes directly.
* :class:`RingEvaluator` keeps payloads as ring elements (per prime) and goes
  through the NTT for products and through automorphisms for rotations.

Both must decode to identical values and count identical operations.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Callable, Iterable, Sequence

import numpy as np

from .ring import (
    CrtModulus,
    RingError,
    automorphism,
    centered,
    crt_join_array,
    galois_exponent,
    ntt_tables,
    rotate_slots,
)


class BudgetError(ArithmeticError):
    """The computation does not fit the parameters."""


class DepthBudgetError(BudgetError):
    """Network too deep for the parameters."""


class MagnitudeOverflowError(BudgetError):
    """Plaintext modulus too small for the values produced."""


class BackendMismatchError(ValueError):
    pass


@dataclass
class OpCounters:
    ct_ct_mul: int = 0
    ct_plain_mul: int = 0
    scalar_mul: int = 0
    add: int = 0
    plain_add: int = 0
    rot_cols: int = 0
    rot_rows: int = 0
    rotations: int = 0
    mask_mul: int = 0
    live_messages_peak: int = 0

    def merge(self, other: "OpCounters") -> None:
        for f in fields(self):
            if f.name == "live_messages_peak":
                self.live_messages_peak = max(self.live_messages_peak, other.live_messages_peak)
            else:
                setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))

    def __add__(self, other: "OpCounters") -> "OpCounters":
        out = OpCounters(**self.as_dict())
        out.merge(other)
        return out

    def __sub__(self, other: "OpCounters") -> "OpCounters":
        d = {f.name: getattr(self, f.name) - getattr(other, f.name) for f in fields(self)}
        d["live_messages_peak"] = self.live_messages_peak
        return OpCounters(**d)

    def copy(self) -> "OpCounters":
        return OpCounters(**self.as_dict())

    def as_dict(self) -> dict[str, int]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def operations(self) -> dict[str, int]:
        """Counters without the live-message high-water mark."""
        d = self.as_dict()
        d.pop("live_messages_peak")
        return d


@dataclass(frozen=True)
class BudgetPolicy:
    modulus: CrtModulus
    max_depth: int | None = None

    def __post_init__(self):
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be non-negative")


@dataclass(frozen=True, eq=False)
class Message:
    payload: np.ndarray
    depth: int
    plain_depth: int
    bounds: np.ndarray = field(repr=False)
    backend: str

    @property
    def magnitude(self) -> int:
        return int(math.ceil(float(self.bounds.max()))) if self.bounds.size else 0


def _small_ints(values) -> np.ndarray:
    """int64 view of integer data when every entry is below 2**62, else an object array."""
    v = np.asarray(values)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.dtype.kind in "iu":
        v = v.astype(np.int64)
        if not v.size or np.abs(v).max() < 2**62:
            return v
        return v.astype(object)
    try:
        w = v.astype(np.int64)
    except (OverflowError, TypeError, ValueError):
        return v.astype(object)
    if not np.array_equal(w, v) or (w.size and np.abs(w).max() >= 2**62):
        return v.astype(object)
    return w


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


_EXACT = float(2**53)


def _round_up(x: np.ndarray) -> np.ndarray:
    # float bounds are only exact below 2**53; nudge larger ones upward
    return np.where(x >= _EXACT, np.nextafter(x, np.inf), x)


class Evaluator:
    """Shared bookkeeping; subclasses supply the payload arithmetic."""

    kind = "abstract"

    def __init__(self, modulus: CrtModulus, max_depth: int | None = None, threads: int = 1):
        self.policy = BudgetPolicy(modulus, max_depth)
        self.modulus = modulus
        self.n = modulus.n
        self.threads = max(1, int(threads))
        self.counters = OpCounters()
        self._p = np.array(modulus.values, dtype=np.int64)[:, None]

    # -- payload primitives (per backend) --------------------------------
    def _from_residues(self, res: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _to_residues(self, payload: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _mul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _mul_plain(self, a: np.ndarray, res: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _add_plain(self, a: np.ndarray, res: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _rotate(self, a: np.ndarray, kind: str, step: int) -> np.ndarray:
        raise NotImplementedError

    def _add(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return (a + b) % self._p

    def _mul_scalar(self, a: np.ndarray, s: np.ndarray) -> np.ndarray:
        return a * s[:, None] % self._p

    # -- context management ----------------------------------------------
    def fork(self) -> "Evaluator":
        child = self.__class__.__new__(self.__class__)
        child.__dict__.update(self.__dict__)
        child.counters = OpCounters()
        return child

    def merge(self, child: "Evaluator") -> None:
        self.counters.merge(child.counters)

    def map(self, fn: Callable, items: Sequence) -> list:
        """Apply ``fn(evaluator, item)`` to every item, possibly concurrently.

        Each call gets its own forked counters; they are merged back in item
        order so totals do not depend on scheduling.
        """
        items = list(items)
        if self.threads <= 1 or len(items) <= 1:
            return [fn(self, it) for it in items]
        children = [self.fork() for _ in items]
        with ThreadPoolExecutor(self.threads) as pool:
            out = list(pool.map(fn, children, items))
        for c in children:
            self.merge(c)
        return out

    def note_live(self, count: int) -> None:
        if count > self.counters.live_messages_peak:
            self.counters.live_messages_peak = count

    # -- encoding helpers ------------------------------------------------
    def _residues(self, values: Sequence[int] | np.ndarray) -> np.ndarray:
        """Signed integers (length <= n, zero padded) reduced per prime."""
        v = _small_ints(values)
        if v.shape[0] > self.n:
            raise ValueError(f"vector of length {v.shape[0]} does not fit {self.n} slots")
        if v.dtype == object:
            res = np.stack([np.array([int(x) % p for x in v], dtype=np.int64) for p in self.modulus.values])
        else:
            res = v[None, :] % self._p
        if res.shape[1] < self.n:
            res = np.pad(res, ((0, 0), (0, self.n - res.shape[1])))
        return res

    def _abs_bounds(self, values) -> np.ndarray:
        v = np.asarray(values)
        if v.ndim == 0:
            v = v.reshape(1)
        b = np.abs(v.astype(np.float64))
        if b.shape[0] < self.n:
            b = np.pad(b, (0, self.n - b.shape[0]))
        return _round_up(b)

    def _check(self, bounds: np.ndarray, what: str) -> None:
        top = int(math.ceil(float(bounds.max(initial=0.0))))
        if top > self.modulus.capacity:
            raise MagnitudeOverflowError(
                f"{what}: magnitude bound {top} exceeds plaintext capacity {self.modulus.capacity}"
            )

    def _make(self, payload, depth, plain_depth, bounds) -> Message:
        return Message(_frozen(payload), depth, plain_depth, _frozen(bounds), self.kind)

    def _same(self, *msgs: Message) -> None:
        for m in msgs:
            if m.backend != self.kind:
                raise BackendMismatchError(f"message from {m.backend} used with {self.kind}")

    # -- public contract -------------------------------------------------
    def lift(self, values: Sequence[int] | np.ndarray) -> Message:
        """Encrypt stand-in for signed integers (zero padded to n slots)."""
        bounds = self._abs_bounds(values)
        self._check(bounds, "lift")
        return self._make(self._from_residues(self._residues(values)), 0, 0, bounds)

    def lift_residues(self, residues: np.ndarray) -> Message:
        """Lift raw residues (one row per prime, or one row for a single prime)."""
        res = np.atleast_2d(np.asarray(residues, dtype=np.int64)) % self._p
        joined = crt_join_array(res, self.modulus.values)
        signed = centered(joined, self.modulus.composite)
        return self._make(self._from_residues(res), 0, 0, self._abs_bounds(signed))

    def lower(self, m: Message) -> np.ndarray:
        """Decrypt stand-in: signed integers per slot (object array of ints)."""
        self._same(m)
        res = self._to_residues(m.payload)
        joined = crt_join_array(res, self.modulus.values)
        return centered(joined, self.modulus.composite)

    def lower_residues(self, m: Message) -> np.ndarray:
        self._same(m)
        return self._to_residues(m.payload)

    def add(self, a: Message, b: Message) -> Message:
        self._same(a, b)
        bounds = _round_up(a.bounds + b.bounds)
        self._check(bounds, "add")
        self.counters.add += 1
        return self._make(self._add(a.payload, b.payload), max(a.depth, b.depth),
                          max(a.plain_depth, b.plain_depth), bounds)

    def add_plain(self, a: Message, values) -> Message:
        """Add a plaintext vector, or a scalar broadcast to every slot."""
        self._same(a)
        if np.ndim(values) == 0:
            s = int(values)
            bounds = _round_up(a.bounds + abs(float(s)))
            res = np.repeat(np.array([[s % p] for p in self.modulus.values], dtype=np.int64), self.n, axis=1)
        else:
            bounds = _round_up(a.bounds + self._abs_bounds(values))
            res = self._residues(values)
        self._check(bounds, "add_plain")
        self.counters.plain_add += 1
        return self._make(self._add_plain(a.payload, res), a.depth, a.plain_depth, bounds)

    def mul(self, a: Message, b: Message) -> Message:
        self._same(a, b)
        depth = max(a.depth, b.depth) + 1
        if self.policy.max_depth is not None and depth > self.policy.max_depth:
            raise DepthBudgetError(f"multiplicative depth {depth} exceeds budget {self.policy.max_depth}")
        bounds = _round_up(a.bounds * b.bounds)
        self._check(bounds, "mul")
        self.counters.ct_ct_mul += 1
        return self._make(self._mul(a.payload, b.payload), depth,
                          max(a.plain_depth, b.plain_depth), bounds)

    def square(self, a: Message) -> Message:
        return self.mul(a, a)

    def mul_plain(self, a: Message, w, mask: bool = False) -> Message:
        """Multiply by a plaintext vector (zero padded) or by a scalar."""
        self._same(a)
        if np.ndim(w) == 0:
            s = int(w)
            bounds = _round_up(a.bounds * abs(float(s)))
            self._check(bounds, "mul_scalar")
            self.counters.scalar_mul += 1
            scal = np.array([s % p for p in self.modulus.values], dtype=np.int64)
            payload = self._mul_scalar(a.payload, scal)
        else:
            bounds = _round_up(a.bounds * self._abs_bounds(w))
            self._check(bounds, "mul_plain")
            self.counters.ct_plain_mul += 1
            if mask:
                self.counters.mask_mul += 1
            payload = self._mul_plain(a.payload, self._residues(w))
        return self._make(payload, a.depth, a.plain_depth + 1, bounds)

    def mask(self, a: Message, slots: Iterable[int]) -> Message:
        """Keep only ``slots`` via a 0/1 plaintext multiplication."""
        m = np.zeros(self.n, dtype=np.int64)
        m[np.fromiter(slots, dtype=np.int64)] = 1
        return self.mul_plain(a, m, mask=True)

    def rotate_columns(self, a: Message, k: int) -> Message:
        """Shift each slot row right by ``k`` (left when negative).

        Realized as one primitive rotation per set bit of ``|k|``.
        """
        self._same(a)
        half = self.n // 2
        if not -half < k < half:
            raise RingError(f"column rotation {k} out of range for n={self.n}")
        if k == 0:
            return a
        sign = 1 if k > 0 else -1
        payload, mag, bit = a.payload, abs(k), 0
        bounds = a.bounds
        while mag:
            if mag & 1:
                step = sign * (1 << bit)
                payload = self._rotate(payload, "columns", step)
                bounds = rotate_slots(bounds, "columns", step)
                self.counters.rot_cols += 1
            mag >>= 1
            bit += 1
        self.counters.rotations += 1
        return self._make(payload, a.depth, a.plain_depth, bounds)

    def rotate_rows(self, a: Message) -> Message:
        self._same(a)
        self.counters.rot_rows += 1
        self.counters.rotations += 1
        return self._make(self._rotate(a.payload, "rows", 0), a.depth, a.plain_depth,
                          rotate_slots(a.bounds, "rows"))

    def rotate(self, a: Message, kind: str, k: int = 0) -> Message:
        if kind == "rows":
            return self.rotate_rows(a)
        if kind == "columns":
            return self.rotate_columns(a, k)
        raise RingError(f"unknown rotation kind {kind!r}")

    def rotate_linear(self, a: Message, size: int) -> Message:
        """Power-of-two rotation of the flat slot view: ``n/2`` is the row swap."""
        if size == self.n // 2:
            return self.rotate_rows(a)
        return self.rotate_columns(a, size)


class SlotEvaluator(Evaluator):
    kind = "slot"

    def _from_residues(self, res):
        return res.copy()

    def _to_residues(self, payload):
        return payload

    def _mul(self, a, b):
        return a * b % self._p

    def _mul_plain(self, a, res):
        return a * res % self._p

    def _add_plain(self, a, res):
        return (a + res) % self._p

    def _rotate(self, a, kind, step):
        return rotate_slots(a, kind, step)


class RingEvaluator(Evaluator):
    """Payload rows are coefficient vectors of Z_p[x]/(x^n+1), one per prime."""

    kind = "ring"

    def __init__(self, modulus: CrtModulus, max_depth: int | None = None, threads: int = 1,
                 corrupt_rotation: bool = False):
        super().__init__(modulus, max_depth, threads)
        self._tables = [ntt_tables(p, self.n) for p in modulus.values]
        # fault-injection hook for negative controls: flips the column direction
        self._corrupt = corrupt_rotation

    def _per_prime(self, fn, *arrays):
        return np.stack([fn(t, *(a[i] for a in arrays)) for i, t in enumerate(self._tables)])

    def _encode(self, res):
        def enc(t, r):
            evals = np.empty(self.n, dtype=np.int64)
            evals[t.slot_to_eval] = r
            return t.inverse(evals)
        return self._per_prime(enc, res)

    def _from_residues(self, res):
        return self._encode(res)

    def _to_residues(self, payload):
        return self._per_prime(lambda t, c: t.forward(c)[t.slot_to_eval], payload)

    def _mul(self, a, b):
        return self._per_prime(lambda t, x, y: t.inverse(t.forward(x) * t.forward(y) % t.p), a, b)

    def _mul_plain(self, a, res):
        return self._mul(a, self._encode(res))

    def _add_plain(self, a, res):
        return self._add(a, self._encode(res))

    def _rotate(self, a, kind, step):
        if self._corrupt and kind == "columns":
            step = -step
        t = galois_exponent(self.n, kind, step)
        return self._per_prime(lambda tb, c: automorphism(c, t, tb.p), a)


BACKENDS = {"slot": SlotEvaluator, "ring": RingEvaluator}


def make_evaluator(backend: str, modulus: CrtModulus, max_depth: int | None = None,
                   threads: int = 1, **kw) -> Evaluator:
    try:
        cls = BACKENDS[backend]
    except KeyError:
        raise ValueError(f"unknown backend {backend!r}; choose from {sorted(BACKENDS)}") from None
    return cls(modulus, max_depth=max_depth, threads=threads, **kw)
