"""Exact arithmetic in Z_p and in the negacyclic ring Z_p[x]/(x^n + 1).

Slots follow the generator-3 convention: slot ``i`` of the length-``n`` slot
vector is cell ``(i // (n/2), i % (n/2))`` of a 2 x n/2 matrix, and cell
``(b, j)`` holds the evaluation of the polynomial at ``psi**e`` where
``e = 3**j mod 2n`` for ``b = 0`` and ``e = -3**j mod 2n`` for ``b = 1``.
With that ordering a column rotation is a single automorphism ``x -> x**t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

SLOT_GENERATOR = 3

# Largest modulus for which (p-1)**2 still fits a signed 64-bit product.
MAX_PRIME = 3_037_000_499


class RingError(ValueError):
    pass


class NoRootError(RingError):
    pass


class ModulusMismatchError(RingError):
    pass


_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def is_prime(m: int) -> bool:
    """Deterministic Miller-Rabin, exact for m < 3.3e24."""
    if m < 2:
        return False
    for q in _MR_BASES:
        if m % q == 0:
            return m == q
    d, s = m - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in _MR_BASES:
        x = pow(a, d, m)
        if x in (1, m - 1):
            continue
        for _ in range(s - 1):
            x = x * x % m
            if x == m - 1:
                break
        else:
            return False
    return True


def _is_power_of_two(v: int) -> bool:
    return v >= 1 and v & (v - 1) == 0


@dataclass(frozen=True)
class PrimeModulus:
    p: int
    n: int

    def __post_init__(self):
        if not _is_power_of_two(self.n) or self.n < 2:
            raise RingError(f"ring degree must be a power of two >= 2, got {self.n}")
        if not is_prime(self.p):
            raise RingError(f"{self.p} is not prime")
        if self.p > MAX_PRIME:
            raise RingError(f"{self.p} exceeds the 64-bit product limit {MAX_PRIME}")
        if (self.p - 1) % (2 * self.n):
            raise NoRootError(f"{self.p} != 1 mod {2 * self.n}: no order-{2 * self.n} root")


@dataclass(frozen=True)
class CrtModulus:
    primes: tuple[PrimeModulus, ...]
    composite: int = field(init=False)

    def __post_init__(self):
        if not self.primes:
            raise RingError("at least one prime is required")
        ns = {pm.n for pm in self.primes}
        if len(ns) != 1:
            raise RingError(f"primes disagree on ring degree: {sorted(ns)}")
        values = [pm.p for pm in self.primes]
        if len(set(values)) != len(values):
            raise RingError(f"primes must be distinct: {values}")
        object.__setattr__(self, "composite", math.prod(values))

    @classmethod
    def of(cls, primes: Sequence[int], n: int) -> "CrtModulus":
        return cls(tuple(PrimeModulus(int(p), n) for p in primes))

    @property
    def n(self) -> int:
        return self.primes[0].n

    @property
    def values(self) -> tuple[int, ...]:
        return tuple(pm.p for pm in self.primes)

    @property
    def capacity(self) -> int:
        """Largest magnitude that decodes unambiguously to a signed integer."""
        return self.composite // 2


def ntt_friendly_primes(n: int, count: int, below: int = MAX_PRIME) -> list[int]:
    """The ``count`` largest primes ``p < below`` with ``p = 1 mod 2n``."""
    step = 2 * n
    c = (below - 1) // step * step + 1
    out = []
    while c > step and len(out) < count:
        if c < below and is_prime(c):
            out.append(c)
        c -= step
    if len(out) < count:
        raise RingError(f"only {len(out)} NTT-friendly primes below {below} for n={n}")
    return out


# --------------------------------------------------------------------------
# roots of unity


def find_root_of_unity(p: int, order: int) -> int:
    """A primitive ``order``-th root of unity in Z_p (``order`` a power of two)."""
    if not _is_power_of_two(order):
        raise RingError(f"order must be a power of two, got {order}")
    if (p - 1) % order:
        raise NoRootError(f"no order-{order} root of unity mod {p}")
    if order == 1:
        return 1
    e = (p - 1) // order
    for g in range(2, p):
        w = pow(g, e, p)
        if pow(w, order // 2, p) == p - 1:
            return w
    raise NoRootError(f"no order-{order} root of unity mod {p}")


def _bit_reverse_permutation(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


class NttTables:
    """Precomputed twiddles and slot ordering for one (p, n)."""

    def __init__(self, modulus: PrimeModulus, generator: int = SLOT_GENERATOR):
        p, n = modulus.p, modulus.n
        self.p, self.n = p, n
        self.psi = find_root_of_unity(p, 2 * n)
        psi_inv = pow(self.psi, -1, p)
        omega = self.psi * self.psi % p
        omega_inv = pow(omega, -1, p)
        self.n_inv = pow(n, -1, p)

        self.bitrev = _bit_reverse_permutation(n)
        self.twist = np.array([pow(self.psi, i, p) for i in range(n)], dtype=np.int64)
        self.untwist = np.array(
            [pow(psi_inv, i, p) * self.n_inv % p for i in range(n)], dtype=np.int64
        )
        self.stages = []
        self.stages_inv = []
        h = 1
        while h < n:
            w = pow(omega, n // (2 * h), p)
            wi = pow(omega_inv, n // (2 * h), p)
            self.stages.append(np.array([pow(w, j, p) for j in range(h)], dtype=np.int64))
            self.stages_inv.append(np.array([pow(wi, j, p) for j in range(h)], dtype=np.int64))
            h *= 2

        # forward output k is a(psi**(2k+1)); slot i wants exponent e(i)
        self.generator = generator
        self.slot_exponents = slot_exponents(n, generator)
        self.slot_to_eval = (self.slot_exponents - 1) // 2

    def _cyclic(self, a: np.ndarray, stages) -> np.ndarray:
        p, n = self.p, self.n
        lead = a.shape[:-1]
        a = a[..., self.bitrev]
        h = 1
        for w in stages:
            a = a.reshape(*lead, n // (2 * h), 2, h)
            u = a[..., 0, :]
            v = a[..., 1, :] * w % p
            a = np.stack(((u + v) % p, (u - v) % p), axis=-2)
            h *= 2
        return a.reshape(*lead, n)

    def forward(self, coeffs: np.ndarray) -> np.ndarray:
        a = np.asarray(coeffs, dtype=np.int64) * self.twist % self.p
        return self._cyclic(a, self.stages)

    def inverse(self, evals: np.ndarray) -> np.ndarray:
        a = self._cyclic(np.asarray(evals, dtype=np.int64), self.stages_inv)
        return a * self.untwist % self.p


def slot_exponents(n: int, generator: int = SLOT_GENERATOR) -> np.ndarray:
    """Odd exponent of psi backing each slot, in slot order."""
    half = n // 2
    two_n = 2 * n
    row0 = [pow(generator, j, two_n) for j in range(half)]
    row1 = [(-e) % two_n for e in row0]
    exps = np.array(row0 + row1, dtype=np.int64)
    if len(set(exps.tolist())) != n:
        raise RingError(f"generator {generator} does not index all {n} slots")
    return exps


@lru_cache(maxsize=64)
def ntt_tables(p: int, n: int, generator: int = SLOT_GENERATOR) -> NttTables:
    return NttTables(PrimeModulus(p, n), generator)


# --------------------------------------------------------------------------
# ring elements


@dataclass(frozen=True, eq=False)
class RingElement:
    modulus: PrimeModulus
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.int64)
        if c.shape != (self.modulus.n,):
            raise RingError(f"expected {self.modulus.n} coefficients, got shape {c.shape}")
        c = c % self.modulus.p
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    def __eq__(self, other):
        return (
            isinstance(other, RingElement)
            and self.modulus == other.modulus
            and np.array_equal(self.coeffs, other.coeffs)
        )

    def __add__(self, other: "RingElement") -> "RingElement":
        _check_same(self, other)
        return RingElement(self.modulus, self.coeffs + other.coeffs)

    def __mul__(self, other: "RingElement") -> "RingElement":
        return poly_mul_negacyclic(self, other)


@dataclass(frozen=True, eq=False)
class SlotVector:
    modulus: PrimeModulus
    slots: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.slots, dtype=np.int64)
        if s.shape != (self.modulus.n,):
            raise RingError(f"expected {self.modulus.n} slots, got shape {s.shape}")
        s = s % self.modulus.p
        s.setflags(write=False)
        object.__setattr__(self, "slots", s)

    def __eq__(self, other):
        return (
            isinstance(other, SlotVector)
            and self.modulus == other.modulus
            and np.array_equal(self.slots, other.slots)
        )

    def as_matrix(self) -> np.ndarray:
        return self.slots.reshape(2, self.modulus.n // 2)


def _check_same(a, b):
    if a.modulus != b.modulus:
        raise ModulusMismatchError(f"{a.modulus} vs {b.modulus}")


def ntt_negacyclic(a: RingElement | np.ndarray, direction: str = "forward", modulus: PrimeModulus | None = None) -> np.ndarray:
    """Negacyclic NTT. Forward output ``k`` is ``a(psi**(2k+1))``."""
    if isinstance(a, RingElement):
        modulus, data = a.modulus, a.coeffs
    else:
        if modulus is None:
            raise RingError("a raw array needs an explicit modulus")
        data = np.asarray(a, dtype=np.int64) % modulus.p
    tables = ntt_tables(modulus.p, modulus.n)
    if direction == "forward":
        return tables.forward(data)
    if direction == "inverse":
        return tables.inverse(data)
    raise RingError(f"unknown direction {direction!r}")


def poly_mul_negacyclic(a: RingElement, b: RingElement) -> RingElement:
    _check_same(a, b)
    t = ntt_tables(a.modulus.p, a.modulus.n)
    prod = t.forward(a.coeffs) * t.forward(b.coeffs) % a.modulus.p
    return RingElement(a.modulus, t.inverse(prod))


def slot_encode(v: SlotVector) -> RingElement:
    t = ntt_tables(v.modulus.p, v.modulus.n)
    evals = np.empty(v.modulus.n, dtype=np.int64)
    evals[t.slot_to_eval] = v.slots
    return RingElement(v.modulus, t.inverse(evals))


def slot_decode(e: RingElement) -> SlotVector:
    t = ntt_tables(e.modulus.p, e.modulus.n)
    return SlotVector(e.modulus, t.forward(e.coeffs)[t.slot_to_eval])


# --------------------------------------------------------------------------
# Galois automorphisms


def galois_exponent(n: int, kind: str, k: int = 0, generator: int = SLOT_GENERATOR) -> int:
    """Odd ``t`` such that ``x -> x**t`` realizes the requested slot rotation.

    ``kind="columns"`` shifts each row right by ``k`` (negative ``k`` shifts
    left); ``kind="rows"`` swaps the two rows.
    """
    two_n = 2 * n
    if kind == "rows":
        return two_n - 1
    if kind != "columns":
        raise RingError(f"unknown rotation kind {kind!r}")
    half = n // 2
    if not -half < k < half:
        raise RingError(f"column rotation {k} out of range for n={n}")
    return pow(generator, (-k) % half, two_n) if half > 1 else 1


def automorphism(coeffs: np.ndarray, t: int, p: int) -> np.ndarray:
    """Coefficients of ``a(x**t)`` in Z_p[x]/(x^n+1); works on stacked rows."""
    n = coeffs.shape[-1]
    dest = (np.arange(n) * t) % (2 * n)
    wrap = dest >= n
    idx = np.where(wrap, dest - n, dest)
    out = np.empty_like(coeffs)
    out[..., idx] = np.where(wrap, (p - coeffs) % p, coeffs)
    return out


def galois_rotate(e: RingElement, kind: str, k: int = 0) -> RingElement:
    t = galois_exponent(e.modulus.n, kind, k)
    return RingElement(e.modulus, automorphism(e.coeffs, t, e.modulus.p))


def rotate_slots(slots: np.ndarray, kind: str, k: int = 0) -> np.ndarray:
    """Direct slot permutation matching :func:`galois_rotate`; works on stacked rows."""
    n = slots.shape[-1]
    m = slots.reshape(*slots.shape[:-1], 2, n // 2)
    if kind == "rows":
        m = m[..., ::-1, :]
    elif kind == "columns":
        m = np.roll(m, k, axis=-1)
    else:
        raise RingError(f"unknown rotation kind {kind!r}")
    return m.reshape(slots.shape)


# --------------------------------------------------------------------------
# CRT


def _check_coprime(primes: Sequence[int]):
    for i, a in enumerate(primes):
        for b in primes[i + 1:]:
            if math.gcd(a, b) != 1:
                raise RingError(f"moduli {a} and {b} are not coprime")


def crt_split(x: int, primes: Sequence[int]) -> tuple[int, ...]:
    _check_coprime(primes)
    return tuple(int(x) % p for p in primes)


def crt_join(residues: Sequence[int], primes: Sequence[int]) -> int:
    _check_coprime(primes)
    if len(residues) != len(primes):
        raise RingError("one residue per modulus is required")
    m = math.prod(primes)
    total = 0
    for r, p in zip(residues, primes):
        mi = m // p
        total += int(r) * mi * pow(mi, -1, p)
    return total % m


def crt_join_array(residues: np.ndarray, primes: Sequence[int]) -> np.ndarray:
    """Vectorized join of a (len(primes), ...) residue array into an object array."""
    _check_coprime(primes)
    m = math.prod(primes)
    acc = np.zeros(residues.shape[1:], dtype=object)
    for row, p in zip(residues, primes):
        mi = m // p
        coef = mi * pow(mi, -1, p)
        acc = acc + row.astype(object) * coef
    return acc % m


def centered(x, modulus: int):
    """Map residues in [0, m) to the signed range [-(m//2), m - m//2 - 1]."""
    half = modulus // 2
    if isinstance(x, np.ndarray):
        return np.where(x > half, x - modulus, x)
    return x - modulus if x > half else x
