"""Differential and oracle suites behind ``lola verify``."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from . import oracles
from .backend import Evaluator, make_evaluator
from .ring import (
    CrtModulus,
    PrimeModulus,
    RingElement,
    SlotVector,
    galois_exponent,
    galois_rotate,
    ntt_friendly_primes,
    ntt_tables,
    poly_mul_negacyclic,
    slot_decode,
    slot_encode,
)
from .representations import (
    ConvGeometry,
    decode,
    encode_convolution,
    encode_dense,
    encode_interleaved,
    encode_simd,
    encode_sparse,
    next_pow2,
    stack_copies,
)


@dataclass
class SuiteResult:
    name: str
    trials: int = 0
    failures: int = 0
    first_failure: str | None = None
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return self.failures == 0 and self.trials > 0

    def check(self, ok: bool, what: str) -> None:
        self.trials += 1
        if not ok:
            self.failures += 1
            if self.first_failure is None:
                self.first_failure = what

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        text = f"{status}  {self.name}: {self.trials - self.failures}/{self.trials} cases"
        if self.first_failure:
            text += f"  (first failure: {self.first_failure})"
        return text


def _timed(fn):
    def run(*args, **kw):
        start = time.perf_counter()
        res = fn(*args, **kw)
        res.seconds = time.perf_counter() - start
        return res
    run.__name__ = fn.__name__
    run.__doc__ = fn.__doc__
    return run


def _prime(n: int, prime: int | None) -> PrimeModulus:
    return PrimeModulus(prime if prime is not None else ntt_friendly_primes(n, 1)[0], n)


@_timed
def batching_suite(n: int, trials: int, rng: np.random.Generator, prime: int | None = None) -> SuiteResult:
    """decode(encode(u) op encode(v)) == u op v for ring addition and multiplication."""
    mod = _prime(n, prime)
    p = mod.p
    res = SuiteResult(f"batching homomorphism (n={n}, p={p})")
    for t in range(trials):
        u = rng.integers(0, p, n)
        v = rng.integers(0, p, n)
        eu, ev_ = slot_encode(SlotVector(mod, u)), slot_encode(SlotVector(mod, v))
        s = slot_decode(eu + ev_).slots
        m = slot_decode(eu * ev_).slots
        ok_add = np.array_equal(s, (u + v) % p)
        ok_mul = [int(x) for x in m] == [int(a) * int(b) % p for a, b in zip(u, v)]
        res.check(ok_add, f"addition, trial {t}")
        res.check(ok_mul, f"multiplication, trial {t}")
    if n <= 64:
        # slot order against direct evaluation at psi**e
        psi = ntt_tables(p, n).psi
        for t in range(min(trials, 20)):
            coeffs = rng.integers(0, p, n)
            got = slot_decode(RingElement(mod, coeffs)).slots.tolist()
            res.check(got == oracles.evaluate_slots(coeffs.tolist(), p, psi), f"slot evaluation, trial {t}")
    return res


def _rotation_case(mod: PrimeModulus, u: np.ndarray, kind: str, k: int) -> bool:
    n = mod.n
    got = slot_decode(galois_rotate(slot_encode(SlotVector(mod, u)), kind, k)).slots.tolist()
    want = oracles.rolled_slots(u.tolist(), kind, k)
    perm = oracles.automorphism_slot_permutation(n, galois_exponent(n, kind, k))
    return got == want and [int(u[i]) for i in perm] == want


@_timed
def rotation_suite(n: int, trials: int, rng: np.random.Generator, prime: int | None = None,
                   exhaustive: bool | None = None) -> SuiteResult:
    """Galois rotations against the 2 x n/2 slot picture and the exponent permutation."""
    mod = _prime(n, prime)
    exhaustive = n <= 64 if exhaustive is None else exhaustive
    res = SuiteResult(f"rotation oracle (n={n}{', exhaustive' if exhaustive else ''})")
    half = n // 2
    if exhaustive:
        u = rng.integers(0, mod.p, n)
        for k in range(-half + 1, half):
            res.check(_rotation_case(mod, u, "columns", k), f"columns k={k}")
        res.check(_rotation_case(mod, u, "rows", 0), "rows")
    for t in range(trials):
        u = rng.integers(0, mod.p, n)
        if rng.random() < 0.1:
            kind, k = "rows", 0
        else:
            kind, k = "columns", int(rng.integers(-half + 1, half)) if half > 1 else 0
        res.check(_rotation_case(mod, u, kind, k), f"{kind} k={k}, trial {t}")
    return res


@_timed
def ntt_suite(n: int, trials: int, rng: np.random.Generator, prime: int | None = None) -> SuiteResult:
    """NTT-based negacyclic product against the schoolbook convolution."""
    mod = _prime(n, prime)
    res = SuiteResult(f"NTT vs schoolbook (n={n})")
    for t in range(trials):
        a = rng.integers(0, mod.p, n)
        b = rng.integers(0, mod.p, n)
        got = poly_mul_negacyclic(RingElement(mod, a), RingElement(mod, b)).coeffs.tolist()
        res.check(got == oracles.schoolbook_negacyclic(a, b, mod.p), f"trial {t}")
    return res


def _small(rng, *shape, lim=7):
    return rng.integers(-lim, lim + 1, size=shape)


def _matches(got, want) -> bool:
    return [int(x) for x in np.asarray(got).reshape(-1)] == [int(x) for x in want]


def kernel_trial(ev: Evaluator, rng: np.random.Generator, max_dim: int = 64) -> list[tuple[str, bool]]:
    """One random instance of every matvec kernel and the convolution kernel."""
    n = ev.n
    limit = min(max_dim, n // 2)
    r = int(rng.integers(1, limit + 1))
    k = int(rng.integers(1, limit + 1))
    W = _small(rng, r, k)
    v = _small(rng, k)
    bias = _small(rng, r)
    want = oracles.int_matvec(W, v, bias)
    out = []

    got = K.matvec_dense_rowmajor(ev, W, encode_dense(ev, v), bias=bias)
    out.append(("dense row-major", _matches(decode(ev, got), want)))

    slots = sorted(rng.choice(n, size=k, replace=False).tolist())
    rng.shuffle(slots)
    t = encode_interleaved(ev, v, slots)
    got = K.matvec_interleaved_rowmajor(ev, K.WeightMatrix(W).shuffled(slots), t, bias=bias)
    out.append(("interleaved row-major", _matches(decode(ev, got), want)))

    got = K.matvec_sparse_colmajor(ev, W, encode_sparse(ev, v), bias=bias)
    out.append(("sparse column-major", _matches(decode(ev, got), want)))

    pad = next_pow2(k)
    if pad <= n // 2:
        st = stack_copies(ev, encode_dense(ev, v), n // pad, pad)
        got = K.matvec_stacked_rowmajor(ev, W, st, bias=bias)
        out.append(("stacked row-major", _matches(decode(ev, got), want)))

    records = int(rng.integers(1, min(n, 16) + 1))
    batch = _small(rng, records, k)
    rows = [[(i, int(W[j, i])) for i in range(k) if W[j, i]] or [(0, 0)] for j in range(r)]
    got = decode(ev, K.matvec_simd(ev, rows, encode_simd(ev, batch), bias=bias))
    want_simd = [oracles.int_matvec(W, batch[i], bias) for i in range(records)]
    out.append(("SIMD per-node", [[int(x) for x in row] for row in got] == want_simd))

    c = int(rng.integers(1, 3))
    kh, kw = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    sh, sw = int(rng.integers(1, 3)), int(rng.integers(1, 3))
    side = int(rng.integers(max(kh, kw), 9))
    pad_h, pad_w = (-(side - kh)) % sh, (-(side - kw)) % sw
    padding = ((0, pad_h), (0, pad_w))
    geom = ConvGeometry((c, side, side), (kh, kw), (sh, sw), padding)
    if geom.positions <= n:
        maps = int(rng.integers(1, 5))
        image = _small(rng, c, side, side)
        wts = _small(rng, maps, c, kh, kw, lim=3)
        cb = _small(rng, maps)
        got = K.conv_rowmajor(ev, wts.reshape(maps, -1), encode_convolution(ev, image, geom), bias=cb)
        want_conv = oracles.int_conv(image, wts, (sh, sw), padding, cb)
        out.append(("convolution row-major", _matches(decode(ev, got), want_conv)))
    return out


@_timed
def kernel_suite(backend: str, n: int, trials: int, rng: np.random.Generator, max_dim: int = 64,
                 threads: int = 1) -> SuiteResult:
    """Every kernel against integer schoolbook results on one backend."""
    if n < 4:
        raise ValueError("kernel suite needs n >= 4")
    mod = CrtModulus.of(ntt_friendly_primes(n, 2), n)
    ev = make_evaluator(backend, mod, threads=threads)
    res = SuiteResult(f"kernel oracle ({backend}, n={n})")
    for t in range(trials):
        for name, ok in kernel_trial(ev, rng, max_dim):
            res.check(ok, f"{name}, trial {t}")
    return res


# ---------------------------------------------------------------------------
# backend agreement

_OPS = ("add", "add_plain", "mul", "mul_plain", "scalar", "rotate_columns", "rotate_rows", "mask")


@dataclass
class _Track:
    ev: Evaluator
    regs: list = field(default_factory=list)


def random_program(n: int, length: int, rng: np.random.Generator) -> list[tuple]:
    """Straight-line program over registers; register i is defined by step i."""
    prog = [("lift", _small(rng, n, lim=8)), ("lift", _small(rng, n, lim=8))]
    depth = [0, 0]
    half = n // 2
    while len(prog) < length + 2:
        op = _OPS[int(rng.integers(len(_OPS)))]
        a = int(rng.integers(len(prog)))
        if op == "add":
            b = int(rng.integers(len(prog)))
            prog.append((op, a, b))
            depth.append(max(depth[a], depth[b]))
            continue
        if op == "mul":
            b = int(rng.integers(len(prog)))
            if max(depth[a], depth[b]) >= 2:
                continue
            prog.append((op, a, b))
            depth.append(max(depth[a], depth[b]) + 1)
            continue
        if op in ("add_plain", "mul_plain"):
            prog.append((op, a, _small(rng, n, lim=4)))
        elif op == "scalar":
            prog.append((op, a, int(rng.integers(-4, 5))))
        elif op == "rotate_columns":
            prog.append((op, a, int(rng.integers(-half + 1, half)) if half > 1 else 0))
        elif op == "mask":
            prog.append((op, a, sorted(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False).tolist())))
        else:
            prog.append((op, a))
        depth.append(depth[a])
    return prog


def run_program(ev: Evaluator, prog) -> list:
    regs = []
    for step in prog:
        op = step[0]
        if op == "lift":
            m = ev.lift(step[1])
        elif op == "add":
            m = ev.add(regs[step[1]], regs[step[2]])
        elif op == "mul":
            m = ev.mul(regs[step[1]], regs[step[2]])
        elif op == "add_plain":
            m = ev.add_plain(regs[step[1]], step[2])
        elif op in ("mul_plain", "scalar"):
            m = ev.mul_plain(regs[step[1]], step[2])
        elif op == "rotate_columns":
            m = ev.rotate_columns(regs[step[1]], step[2])
        elif op == "rotate_rows":
            m = ev.rotate_rows(regs[step[1]])
        elif op == "mask":
            m = ev.mask(regs[step[1]], step[2])
        else:
            raise ValueError(op)
        regs.append(m)
    return [ev.lower(m) for m in regs]


def oracle_program(n: int, prog) -> list[list[int]]:
    """Plain integer semantics of a program (rotations from the slot picture)."""
    regs: list[list[int]] = []
    for step in prog:
        op = step[0]
        if op == "lift":
            v = [int(x) for x in step[1]]
        elif op == "add":
            v = [x + y for x, y in zip(regs[step[1]], regs[step[2]])]
        elif op == "mul":
            v = [x * y for x, y in zip(regs[step[1]], regs[step[2]])]
        elif op == "add_plain":
            v = [x + int(y) for x, y in zip(regs[step[1]], step[2])]
        elif op == "mul_plain":
            v = [x * int(y) for x, y in zip(regs[step[1]], step[2])]
        elif op == "scalar":
            v = [x * step[2] for x in regs[step[1]]]
        elif op == "rotate_columns":
            v = oracles.rolled_slots(regs[step[1]], "columns", step[2])
        elif op == "rotate_rows":
            v = oracles.rolled_slots(regs[step[1]], "rows")
        elif op == "mask":
            keep = set(step[2])
            v = [x if i in keep else 0 for i, x in enumerate(regs[step[1]])]
        else:
            raise ValueError(op)
        regs.append(v)
    return regs


@_timed
def agreement_suite(n: int, trials: int, rng: np.random.Generator, length: int = 10,
                    corrupt_rotation: bool = False, threads: int = 1) -> SuiteResult:
    """Random programs on both backends must match each other and the pure-Python oracle.

    ``corrupt_rotation`` flips the ring backend's column direction; the suite
    must then fail (negative control).
    """
    mod = CrtModulus.of(ntt_friendly_primes(n, 2), n)
    label = ", corrupted rotation" if corrupt_rotation else ""
    res = SuiteResult(f"backend agreement (n={n}{label})")
    for t in range(trials):
        prog = random_program(n, length, rng)
        slot = make_evaluator("slot", mod, threads=threads)
        ring = make_evaluator("ring", mod, threads=threads, corrupt_rotation=corrupt_rotation)
        a = run_program(slot, prog)
        b = run_program(ring, prog)
        want = oracle_program(n, prog)
        same = all([int(x) for x in ra] == [int(x) for x in rb] == rw for ra, rb, rw in zip(a, b, want))
        res.check(same and slot.counters.as_dict() == ring.counters.as_dict(), f"program {t}")
    return res


def run_all(n: int = 1024, trials: int = 100, seed: int = 0, backends=("slot", "ring"),
            corrupt_rotation: bool = False, threads: int = 1) -> list[SuiteResult]:
    """Every suite at ring degree ``n`` with ``trials`` random cases each."""
    rng = np.random.default_rng(seed)
    out = [
        batching_suite(n, trials, rng),
        rotation_suite(n, trials, rng),
        ntt_suite(min(n, 1024), trials, rng),
    ]
    kn = min(n, 256)
    for be in backends:
        out.append(kernel_suite(be, kn, trials, rng, threads=threads))
    out.append(agreement_suite(min(n, 256), trials, rng, corrupt_rotation=corrupt_rotation, threads=threads))
    return out
