"""Message representations and the transforms between them.

Every :class:`EncodedTensor` carries an explicit :class:`Representation` that
says where each logical value lives: a ``(message, slot)`` location per value
for the vector-like kinds, or the window-position slots ``positions`` for the
convolution kind.  Nothing about a layout is implicit.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .backend import Evaluator, Message

KINDS = ("dense", "sparse", "stacked", "interleaved", "convolution", "simd")


class RepresentationError(ValueError):
    pass


class CapacityError(RepresentationError):
    pass


class OverlapError(RepresentationError):
    pass


class PackingError(RepresentationError):
    pass


def next_pow2(k: int) -> int:
    return 1 if k <= 1 else 1 << (int(k) - 1).bit_length()


@dataclass(frozen=True)
class Representation:
    kind: str
    length: int
    count: int
    # (message, slot) of every logical value; stacked: the first copy
    locations: tuple[tuple[int, int], ...] = ()
    pad: int = 0
    copies: int = 1
    # convolution: slot of every window position (tau) in each of `windows` messages
    positions: tuple[int, ...] = ()
    windows: int = 0
    # non-active slots are known to be zero
    clean: bool = True
    # sparse: every slot in [0, valid_extent) holds the value
    valid_extent: int = 1
    records: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise RepresentationError(f"unknown representation {self.kind!r}")

    def slots_of(self, message: int) -> list[int]:
        return [s for m, s in self.locations if m == message]

    @property
    def is_contiguous(self) -> bool:
        return all(
            self.slots_of(m) == list(range(len(self.slots_of(m)))) for m in range(self.count)
        )

    @property
    def display_name(self) -> str:
        if self.kind == "convolution":
            return "convolution" if list(self.positions) == list(range(len(self.positions))) else "convolution-interleave"
        if self.kind == "stacked":
            res = [s for _, s in self.locations]
            return "stacked" if res == list(range(self.length)) else "stacked-interleave"
        if self.kind in ("dense", "interleaved"):
            return "dense" if self.is_contiguous else "interleave"
        return self.kind

    @property
    def size_label(self) -> str:
        if self.kind == "convolution":
            return f"{self.windows}×{self.length}"
        if self.kind == "stacked":
            return f"1×{self.copies * self.length}"
        if self.kind in ("sparse", "simd"):
            return f"{self.count}×1"
        per = max((len(self.slots_of(m)) for m in range(self.count)), default=0)
        return f"{self.count}×{per}"


@dataclass(frozen=True, eq=False)
class EncodedTensor:
    messages: tuple[Message, ...]
    rep: Representation

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        if len(self.messages) != self.rep.count:
            raise RepresentationError(
                f"{self.rep.kind} expects {self.rep.count} messages, got {len(self.messages)}"
            )

    def __len__(self):
        return len(self.messages)


def vector_rep(kind: str, locations: Sequence[tuple[int, int]], count: int | None = None,
               clean: bool = True) -> Representation:
    locations = tuple((int(m), int(s)) for m, s in locations)
    if len(set(locations)) != len(locations):
        raise OverlapError("two logical values share a slot")
    if count is None:
        count = 1 + max((m for m, _ in locations), default=0)
    if kind == "dense" and any(m for m, _ in locations):
        kind = "interleaved"
    return Representation(kind, len(locations), count, locations, clean=clean)


# ---------------------------------------------------------------------------
# encoders


def encode_dense(ev: Evaluator, v: Sequence[int]) -> EncodedTensor:
    v = np.asarray(v)
    if v.shape[0] > ev.n:
        raise CapacityError(f"dense vector of length {v.shape[0]} exceeds n={ev.n}")
    rep = vector_rep("dense", [(0, i) for i in range(v.shape[0])], 1)
    return EncodedTensor((ev.lift(v),), rep)


def encode_interleaved(ev: Evaluator, v: Sequence[int], slots: Sequence[int]) -> EncodedTensor:
    v = np.asarray(v)
    slots = [int(s) for s in slots]
    if len(slots) != v.shape[0]:
        raise RepresentationError("one slot per value is required")
    if max(slots, default=0) >= ev.n:
        raise CapacityError("slot outside the message")
    buf = np.zeros(ev.n, dtype=object)
    buf[slots] = list(v)
    rep = vector_rep("interleaved", [(0, s) for s in slots], 1)
    return EncodedTensor((ev.lift(buf),), rep)


def encode_sparse(ev: Evaluator, v: Sequence[int]) -> EncodedTensor:
    v = np.asarray(v)
    msgs = tuple(ev.lift(np.full(ev.n, x, dtype=object)) for x in v)
    rep = Representation("sparse", len(msgs), len(msgs), tuple((i, 0) for i in range(len(msgs))),
                         valid_extent=ev.n)
    return EncodedTensor(msgs, rep)


def encode_simd(ev: Evaluator, batch: Sequence[Sequence[int]]) -> EncodedTensor:
    """One message per feature; slot ``i`` of message ``j`` is feature ``j`` of record ``i``."""
    batch = np.asarray(batch)
    if batch.ndim == 1:
        batch = batch[None, :]
    records, features = batch.shape
    if records > ev.n:
        raise CapacityError(f"{records} records exceed n={ev.n}")
    msgs = tuple(ev.lift(batch[:, j]) for j in range(features))
    rep = Representation("simd", features, features, tuple((j, 0) for j in range(features)),
                         records=records)
    return EncodedTensor(msgs, rep)


@dataclass(frozen=True)
class ConvGeometry:
    """Window placement of a strided convolution over a (C, H, W) input."""

    in_shape: tuple[int, int, int]
    window: tuple[int, int]
    stride: tuple[int, int] = (1, 1)
    padding: tuple[tuple[int, int], tuple[int, int]] = ((0, 0), (0, 0))

    def __post_init__(self):
        c, h, w = self.in_shape
        (pt, pb), (pl, pr) = self.padding
        kh, kw = self.window
        sh, sw = self.stride
        if (h + pt + pb - kh) % sh or (w + pl + pr - kw) % sw:
            raise RepresentationError(
                f"window {self.window} with stride {self.stride} does not tile padded input "
                f"{(h + pt + pb, w + pl + pr)}"
            )

    @property
    def out_hw(self) -> tuple[int, int]:
        c, h, w = self.in_shape
        (pt, pb), (pl, pr) = self.padding
        return ((h + pt + pb - self.window[0]) // self.stride[0] + 1,
                (w + pl + pr - self.window[1]) // self.stride[1] + 1)

    @property
    def positions(self) -> int:
        oh, ow = self.out_hw
        return oh * ow

    @property
    def offsets(self) -> list[tuple[int, int, int]]:
        c = self.in_shape[0]
        return [(ch, a, b) for ch in range(c) for a in range(self.window[0]) for b in range(self.window[1])]

    @property
    def volume(self) -> int:
        return self.in_shape[0] * self.window[0] * self.window[1]

    def source(self, offset: tuple[int, int, int], u: int, v: int) -> tuple[int, int, int] | None:
        """Input pixel under window position (u, v) at ``offset``; None inside padding."""
        ch, a, b = offset
        (pt, _), (pl, _) = self.padding
        y = self.stride[0] * u + a - pt
        x = self.stride[1] * v + b - pl
        if 0 <= y < self.in_shape[1] and 0 <= x < self.in_shape[2]:
            return ch, y, x
        return None

    def gather_index(self) -> np.ndarray:
        """(volume, positions) indices into the flattened input; -1 marks padding."""
        c, h, w = self.in_shape
        (pt, _), (pl, _) = self.padding
        oh, ow = self.out_hw
        ch, a, b = (x.reshape(-1, 1) for x in np.array(self.offsets).T) if self.offsets else (None,) * 3
        u = np.repeat(np.arange(oh), ow)[None, :]
        v = np.tile(np.arange(ow), oh)[None, :]
        y = self.stride[0] * u + a - pt
        x = self.stride[1] * v + b - pl
        inside = (y >= 0) & (y < h) & (x >= 0) & (x < w)
        return np.where(inside, ch * h * w + y * w + x, -1)

    def window_matrix(self, image: np.ndarray) -> np.ndarray:
        """(volume, positions) matrix: entry [j, i] is the input under offset j at position i."""
        flat = np.asarray(image).reshape(-1)
        if flat.shape[0] != int(np.prod(self.in_shape)):
            raise RepresentationError(f"image of {flat.shape[0]} values does not match {self.in_shape}")
        idx = self.gather_index()
        padded = np.concatenate([flat, np.zeros(1, dtype=flat.dtype)])
        return padded[idx]


def encode_convolution(ev: Evaluator, image: np.ndarray, geom: ConvGeometry,
                       positions: Sequence[int] | None = None) -> EncodedTensor:
    count = geom.positions
    positions = tuple(range(count)) if positions is None else tuple(int(s) for s in positions)
    if len(positions) != count:
        raise RepresentationError("one slot per window position is required")
    if count > ev.n or max(positions) >= ev.n:
        raise CapacityError(f"{count} window positions do not fit one message (n={ev.n})")
    mat = geom.window_matrix(np.asarray(image, dtype=object))
    msgs = []
    for row in mat:
        buf = np.zeros(ev.n, dtype=object)
        buf[list(positions)] = list(row)
        msgs.append(ev.lift(buf))
    rep = Representation("convolution", count, geom.volume, positions=positions, windows=geom.volume)
    return EncodedTensor(tuple(msgs), rep)


# ---------------------------------------------------------------------------
# decoding


def decode(ev: Evaluator, t: EncodedTensor) -> np.ndarray:
    """Logical content of a tensor as signed integers.

    Convolution tensors decode to their (windows, positions) matrix; SIMD
    tensors to a (records, features) matrix; everything else to a vector.
    """
    rep = t.rep
    lowered = {}

    def slot(m, s):
        if m not in lowered:
            lowered[m] = ev.lower(t.messages[m])
        return lowered[m][s]

    if rep.kind == "convolution":
        return np.array([[slot(j, s) for s in rep.positions] for j in range(rep.windows)], dtype=object)
    if rep.kind == "simd":
        return np.array([[slot(j, r) for j in range(rep.count)] for r in range(rep.records)], dtype=object)
    return np.array([slot(m, s) for m, s in rep.locations], dtype=object)


def stacked_copies_agree(ev: Evaluator, t: EncodedTensor) -> bool:
    rep = t.rep
    vals = ev.lower(t.messages[0])
    first = [vals[s] for _, s in rep.locations]
    for c in range(1, rep.copies):
        if [vals[c * rep.pad + s] for _, s in rep.locations] != first:
            return False
    return True


# ---------------------------------------------------------------------------
# stacking


def stack_schedule(n: int, pad: int, copies: int) -> list[int]:
    """Doubling rotation sizes (flat slot view) used to make ``copies`` copies."""
    sizes, s = [], pad
    while s < pad * copies:
        sizes.append(s)
        s *= 2
    if pad * copies > n:
        raise CapacityError(f"{copies} copies of stride {pad} exceed n={n}")
    return sizes


def stack_copies(ev: Evaluator, d: EncodedTensor, copies: int | None = None,
                 pad: int | None = None) -> EncodedTensor:
    """Replicate a single-message vector at stride ``pad`` with doubling rotate-adds.

    Values may sit anywhere as long as their slots are distinct modulo
    ``pad``; in that case the copies must fill the whole message.
    """
    rep = d.rep
    if rep.count != 1 or rep.kind not in ("dense", "interleaved"):
        raise RepresentationError("stacking needs a single dense/interleaved message")
    if not rep.clean:
        raise RepresentationError("stacking needs zeroed inactive slots")
    pad = next_pow2(rep.length) if pad is None else pad
    copies = ev.n // pad if copies is None else copies
    if copies & (copies - 1) or pad & (pad - 1):
        raise CapacityError("pad and copies must be powers of two")
    slots = [s for _, s in rep.locations]
    residues = [s % pad for s in slots]
    if len(set(residues)) != len(residues):
        raise CapacityError(f"values collide modulo the stride {pad}")
    spread = max(slots, default=0) >= pad
    if spread and copies * pad != ev.n:
        raise CapacityError("values outside [0, pad) need copies filling the message")
    sizes = stack_schedule(ev.n, pad, copies)
    m = d.messages[0]
    for s in sizes:
        m = ev.add(m, ev.rotate_linear(m, s))
    out = Representation("stacked", rep.length, 1, tuple((0, r) for r in residues),
                         pad=pad, copies=copies, clean=True)
    return EncodedTensor((m,), out)


# ---------------------------------------------------------------------------
# packing several messages into one


@dataclass(frozen=True)
class Placement:
    """Move ``source_slots`` of message ``part`` by a column shift and optional row swap."""

    part: int
    source_slots: tuple[int, ...]
    shift: int = 0
    swap: bool = False
    masked: bool = False

    def dest(self, n: int) -> tuple[int, ...]:
        return tuple(move_slot(s, n, self.shift, self.swap) for s in self.source_slots)


def move_slot(s: int, n: int, shift: int, swap: bool) -> int:
    half = n // 2
    row, col = divmod(s, half)
    col = (col + shift) % half
    if swap:
        row = 1 - row
    return row * half + col


def _signed_shift(t: int, half: int) -> int:
    if t == 0:
        return 0
    alt = t - half
    return alt if bin(-alt).count("1") < bin(t).count("1") else t


def plan_packing(parts: Sequence[Sequence[int]], n: int, period: int | None = None,
                 dirty: Sequence[bool] | None = None) -> list[Placement]:
    """Greedy placement of each part's active slots into one message.

    Destinations must be pairwise distinct modulo ``period`` (``n`` when
    omitted).  Parts that fit nowhere are bisected and the halves masked out.
    """
    period = n if period is None else period
    half = n // 2
    dirty = [False] * len(parts) if dirty is None else list(dirty)
    occupied = np.zeros(period, dtype=bool)
    out: list[Placement] = []
    shifts = np.arange(half)

    def place(idx: int, slots: np.ndarray, masked: bool):
        rows, cols = np.divmod(slots, half)
        for swap in (False, True):
            r = (1 - rows) if swap else rows
            lin = r[None, :] * half + (cols[None, :] + shifts[:, None]) % half
            res = lin % period
            free = ~occupied[res].any(axis=1)
            for t in np.flatnonzero(free):
                cand = res[t]
                if len(np.unique(cand)) == len(cand):
                    occupied[cand] = True
                    out.append(Placement(idx, tuple(int(s) for s in slots),
                                         _signed_shift(int(t), half), swap, masked))
                    return
        if len(slots) == 1:
            raise PackingError(f"no free slot for part {idx} modulo {period}")
        mid = len(slots) // 2
        place(idx, slots[:mid], True)
        place(idx, slots[mid:], True)

    for i, slots in enumerate(parts):
        place(i, np.array(sorted(int(s) for s in slots), dtype=np.int64), dirty[i])
    return out


def combined_representation(rep: Representation, placements: Sequence[Placement], n: int,
                            period: int | None = None) -> Representation:
    """Layout after applying ``placements``; raises on any slot collision."""
    dest_of: dict[tuple[int, int], int] = {}
    taken: set[int] = set()
    for pl in placements:
        for s, d in zip(pl.source_slots, pl.dest(n)):
            key = d if period is None else d % period
            if key in taken:
                raise OverlapError(f"slot {d} receives two values")
            taken.add(key)
            dest_of[(pl.part, s)] = d
    if len(dest_of) != rep.length:
        raise RepresentationError("placements do not cover every value exactly once")
    try:
        locs = [(0, dest_of[(m, s)]) for m, s in rep.locations]
    except KeyError:
        raise RepresentationError("placements do not cover every value exactly once") from None
    return vector_rep("dense", locs, 1, clean=True)


def combine_interleaved(ev: Evaluator, t: EncodedTensor,
                        offsets: Sequence[int | Placement] | None = None,
                        period: int | None = None) -> EncodedTensor:
    """Merge the messages of a vector tensor into a single message.

    ``offsets`` may be plain column shifts (one per message) or explicit
    :class:`Placement` objects; when omitted a packing is planned.  Dirty
    parts are masked before they move; overlapping destinations raise.
    """
    rep = t.rep
    if rep.kind not in ("dense", "interleaved"):
        raise RepresentationError(f"cannot combine a {rep.kind} tensor")
    parts = [rep.slots_of(m) for m in range(rep.count)]
    if offsets is None:
        placements = plan_packing(parts, ev.n, period, [not rep.clean] * rep.count)
    else:
        if len(offsets) != rep.count and not all(isinstance(o, Placement) for o in offsets):
            raise RepresentationError("one offset per message is required")
        placements = [
            o if isinstance(o, Placement)
            else Placement(i, tuple(parts[i]), int(o), False, not rep.clean)
            for i, o in enumerate(offsets)
        ]
    out_rep = combined_representation(rep, placements, ev.n, period)

    def move(e: Evaluator, pl: Placement) -> Message:
        m = t.messages[pl.part]
        if pl.masked:
            m = e.mask(m, pl.source_slots)
        if pl.shift:
            m = e.rotate_columns(m, pl.shift)
        if pl.swap:
            m = e.rotate_rows(m)
        return m

    moved = ev.map(move, placements)
    acc = moved[0]
    for m in moved[1:]:
        acc = ev.add(acc, m)
    return EncodedTensor((acc,), out_rep)


def sparse_to_dense(ev: Evaluator, t: EncodedTensor, targets: Sequence[int] | None = None) -> EncodedTensor:
    """Mask each sparse part down to its target slot and sum."""
    rep = t.rep
    if rep.kind != "sparse":
        raise RepresentationError("sparse_to_dense needs a sparse tensor")
    targets = list(range(rep.count)) if targets is None else [int(x) for x in targets]
    if len(targets) != rep.count:
        raise RepresentationError("one target slot per part is required")
    if len(set(targets)) != len(targets):
        raise OverlapError("duplicate target slots")
    if max(targets) >= rep.valid_extent:
        raise RepresentationError(
            f"parts hold their value only in slots [0, {rep.valid_extent}); target {max(targets)}"
        )
    masked = ev.map(lambda e, it: e.mask(t.messages[it[0]], [it[1]]), list(enumerate(targets)))
    acc = masked[0]
    for m in masked[1:]:
        acc = ev.add(acc, m)
    return EncodedTensor((acc,), vector_rep("dense", [(0, s) for s in targets], 1))


def dense_to_convolution(ev: Evaluator, d: EncodedTensor, geom: ConvGeometry) -> EncodedTensor:
    """Masks carve window offsets out of a dense image; each is shifted onto a shared tau."""
    rep = d.rep
    c, h, w = geom.in_shape
    if rep.count != 1 or not rep.is_contiguous or rep.length != c * h * w:
        raise RepresentationError("dense_to_convolution needs the image as one contiguous dense message")
    steps = dense_to_convolution_steps(geom, ev.n)

    def one(e: Evaluator, step):
        src, shift = step
        m = e.mask(d.messages[0], src)
        return e.rotate_columns(m, -shift) if shift else m

    msgs = ev.map(one, steps)
    tau = conv_tau(geom)
    out = Representation("convolution", geom.positions, geom.volume, positions=tuple(tau),
                         windows=geom.volume)
    return EncodedTensor(tuple(msgs), out)


def conv_tau(geom: ConvGeometry) -> list[int]:
    """Slot of each window position when carved from a row-major dense image."""
    _, h, w = geom.in_shape
    oh, ow = geom.out_hw
    return [geom.stride[0] * u * w + geom.stride[1] * v for u in range(oh) for v in range(ow)]


def dense_to_convolution_steps(geom: ConvGeometry, n: int) -> list[tuple[list[int], int]]:
    """(mask slots, left shift) per window offset."""
    c, h, w = geom.in_shape
    (pt, _), (pl, _) = geom.padding
    tau = conv_tau(geom)
    if max(tau) >= n // 2 or c * h * w > n // 2:
        raise CapacityError("image and window layout must fit one slot row")
    oh, ow = geom.out_hw
    steps = []
    for off in geom.offsets:
        ch, a, b = off
        shift = ch * h * w + (a - pt) * w + (b - pl)
        src = []
        for u in range(oh):
            for v in range(ow):
                p = geom.source(off, u, v)
                if p is not None:
                    src.append(p[0] * h * w + p[1] * w + p[2])
        steps.append((src, shift))
    return steps
