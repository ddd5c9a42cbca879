"""Reference computations that share no code with the evaluators.

Each one follows the textbook definition with exact integers: slow, but
easy to check by eye.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np


def schoolbook_negacyclic(a: Sequence[int], b: Sequence[int], p: int) -> list[int]:
    """Product in Z_p[x]/(x^n + 1) by direct O(n^2) convolution.

    Operands are split into 16-bit limbs so every partial convolution stays
    exact in int64 (n * 2**32 < 2**63); limbs are recombined with Python ints.
    """
    n = len(a)
    if len(b) != n:
        raise ValueError("operands differ in length")
    if p >= 1 << 32 or n > 1 << 30:
        raise ValueError("modulus must fit 32 bits")
    a = np.array([int(x) % p for x in a], dtype=np.int64)
    b = np.array([int(x) % p for x in b], dtype=np.int64)
    limbs_a = (a & 0xFFFF, a >> 16)
    limbs_b = (b & 0xFFFF, b >> 16)
    full = [0] * (2 * n - 1)
    for i, la in enumerate(limbs_a):
        for j, lb in enumerate(limbs_b):
            part = np.convolve(la, lb).tolist()
            shift = 16 * (i + j)
            full = [f + (c << shift) for f, c in zip(full, part)]
    full.append(0)
    return [(full[k] - full[k + n]) % p for k in range(n)]


def primitive_root_2n(p: int, n: int) -> int:
    """Smallest psi with psi**n == -1 (mod p), found by trial."""
    if (p - 1) % (2 * n):
        raise ValueError(f"{p} is not 1 mod {2 * n}")
    for g in range(2, p):
        psi = pow(g, (p - 1) // (2 * n), p)
        if pow(psi, n, p) == p - 1:
            return psi
    raise ValueError("no root found")


def slot_points(n: int, generator: int = 3) -> list[int]:
    """Odd exponent e_i with slot i holding a(psi**e_i)."""
    half = n // 2
    row0 = [pow(generator, j, 2 * n) for j in range(half)]
    return row0 + [(2 * n - e) % (2 * n) for e in row0]


def evaluate_slots(coeffs: Sequence[int], p: int, psi: int, generator: int = 3) -> list[int]:
    """Slot values of a polynomial by Horner evaluation at every slot point.

    Any primitive 2n-th root ``psi`` gives the same multiset of values; the
    slot order is fixed by ``psi`` and the generator.
    """
    n = len(coeffs)
    out = []
    for e in slot_points(n, generator):
        x = pow(psi, e, p)
        acc = 0
        for c in reversed(coeffs):
            acc = (acc * x + int(c)) % p
        out.append(acc)
    return out


def automorphism_slot_permutation(n: int, t: int, generator: int = 3) -> list[int]:
    """``perm`` with slot i of a(x**t) equal to slot perm[i] of a(x)."""
    points = slot_points(n, generator)
    where = {e: i for i, e in enumerate(points)}
    return [where[(e * t) % (2 * n)] for e in points]


def rolled_slots(slots: Sequence[int], kind: str, k: int = 0) -> list[int]:
    """Expected slots after a rotation, from the 2 x n/2 picture."""
    n = len(slots)
    half = n // 2
    top, bottom = list(slots[:half]), list(slots[half:])
    if kind == "rows":
        return bottom + top
    k %= half
    return top[half - k:] + top[:half - k] + bottom[half - k:] + bottom[:half - k]


def int_matvec(W, v, bias=None) -> list[int]:
    W = [[int(x) for x in row] for row in np.asarray(W).tolist()]
    v = [int(x) for x in np.asarray(v).reshape(-1).tolist()]
    out = [sum(w * x for w, x in zip(row, v)) for row in W]
    if bias is not None:
        out = [o + int(b) for o, b in zip(out, np.asarray(bias).reshape(-1).tolist())]
    return out


def int_conv(image, weights, stride=(1, 1), padding=((0, 0), (0, 0)), bias=None) -> list[int]:
    """Valid convolution (after zero padding) with outputs ordered map, row, column."""
    image = np.asarray(image)
    weights = np.asarray(weights)
    c, h, w = image.shape
    maps, wc, kh, kw = weights.shape
    if wc != c:
        raise ValueError("channel mismatch")
    (pt, pb), (pl, pr) = padding
    H, Wd = h + pt + pb, w + pl + pr
    padded = [[[0] * Wd for _ in range(H)] for _ in range(c)]
    for ch in range(c):
        for i in range(h):
            for j in range(w):
                padded[ch][i + pt][j + pl] = int(image[ch, i, j])
    sh, sw = stride
    out = []
    for m in range(maps):
        for u in range(0, H - kh + 1, sh):
            for v in range(0, Wd - kw + 1, sw):
                acc = 0 if bias is None else int(np.asarray(bias).reshape(-1)[m])
                for ch in range(c):
                    for a in range(kh):
                        for b in range(kw):
                            acc += int(weights[m, ch, a, b]) * padded[ch][u + a][v + b]
                out.append(acc)
    return out
