"""Release criteria 1-10; each test records one PASS/FAIL line (shown in the terminal summary)."""

import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from lola import kernels as K
from lola import verify
from lola.backend import make_evaluator
from lola.cli import main
from lola.network import (
    CIFAR_PRIMES,
    PRESETS,
    Dense,
    Network,
    QuantizationOverflowError,
    QuantizationPolicy,
    Square,
    build_plan,
    collapse_adjacent_linear,
    execute,
    fit_ring_degree,
    integer_network,
    minimal_primes,
    quantize,
)
from lola.network.layers import Conv
from lola.network.presets import cifar_network, mnist_network, toy_network
from lola.representations import ConvGeometry, encode_convolution, encode_dense, encode_sparse, stack_copies
from lola.ring import CrtModulus, PrimeModulus, ntt_friendly_primes


def _record(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def _trial_division_prime(p: int) -> bool:
    if p < 2:
        return False
    for d in range(2, math.isqrt(p) + 1):
        if p % d == 0:
            return False
    return True


def test_1_batching_homomorphism():
    n = 8192
    prime = ntt_friendly_primes(n, 1)[0]
    assert prime % 16384 == 1
    start = time.perf_counter()
    res = verify.batching_suite(n, 1000, np.random.default_rng(1), prime)
    elapsed = time.perf_counter() - start
    ok = res.passed and res.trials == 2000 and elapsed < 60
    _record(1, ok, f"n={n}, p={prime}: {res.trials - res.failures}/{res.trials} add+mul checks exact in {elapsed:.1f} s (< 60 s)")


def test_2_rotation_oracle():
    rng = np.random.default_rng(2)
    small = [verify.rotation_suite(n, 0, rng, exhaustive=True) for n in (4, 8, 16, 32, 64)]
    big = verify.rotation_suite(8192, 1000, rng)
    exhaustive_cases = sum(r.trials for r in small)
    ok = all(r.passed for r in small) and big.passed and big.trials == 1000
    _record(2, ok, f"exhaustive n<=64: {exhaustive_cases} rotations exact; n=8192: "
                   f"{big.trials - big.failures}/{big.trials} random rotations exact")


def test_3_ntt_vs_schoolbook():
    rng = np.random.default_rng(3)
    results = {n: verify.ntt_suite(n, 500, rng) for n in (8, 64, 256, 1024)}
    ok = all(r.passed and r.trials == 500 for r in results.values())
    _record(3, ok, "500 products exact at each n: " + ", ".join(
        f"n={n} {r.trials - r.failures}/500" for n, r in results.items()))


def test_4_kernel_oracle_both_backends():
    rng = np.random.default_rng(4)
    results = [verify.kernel_suite(be, 256, 500, rng, max_dim=64) for be in ("slot", "ring")]
    # six kernels per trial: dense, interleaved, sparse, stacked, SIMD, convolution
    ok = all(r.passed and r.trials == 6 * 500 for r in results)
    _record(4, ok, "; ".join(f"{r.name}: {r.trials - r.failures}/{r.trials} exact" for r in results))


def test_5_operation_counts():
    n = 8192
    ev = make_evaluator("slot", CrtModulus.of(ntt_friendly_primes(n, 1), n))
    rng = np.random.default_rng(5)
    checks = []

    def delta(fn):
        c0 = ev.counters.copy()
        out = fn()
        return ev.counters - c0, out

    d, _ = delta(lambda: K.dot_product(ev, ev.lift(rng.integers(-3, 4, 4096)), rng.integers(-3, 4, 4096), 4096))
    checks.append(("dot product pad 4096", (d.ct_plain_mul, d.rotations, d.add) == (1, 12, 12)))

    W = rng.integers(-3, 4, (100, 845))
    stacked = stack_copies(ev, encode_dense(ev, rng.integers(-3, 4, 845)), 8, 1024)
    d, out = delta(lambda: K.matvec_stacked_rowmajor(ev, W, stacked))
    rows_per_call = n // stacked.rep.pad
    checks.append(("stacked 13x8", (out.rep.count, rows_per_call, d.ct_plain_mul) == (13, 8, 13)))

    k = 37
    sparse = encode_sparse(ev, rng.integers(-3, 4, k))
    d, _ = delta(lambda: K.matvec_sparse_colmajor(ev, rng.integers(-3, 4, (20, k)), sparse))
    checks.append(("sparse column-major k=37", (d.ct_plain_mul, d.add) == (k, k - 1)))

    geom = ConvGeometry((1, 28, 28), (5, 5), (2, 2), ((0, 1), (0, 1)))
    conv_in = encode_convolution(ev, rng.integers(0, 256, (1, 28, 28)), geom)
    d, _ = delta(lambda: K.conv_rowmajor(ev, rng.integers(-3, 4, (1, 25)), conv_in))
    checks.append(("conv per map r=25", (d.scalar_mul, d.add) == (25, 24)))

    _record(5, all(ok for _, ok in checks), ", ".join(f"{name} {'ok' if ok else 'MISMATCH'}" for name, ok in checks))


def _profile_rows(capsys, *argv):
    assert main(list(argv)) == 0
    out = capsys.readouterr().out.splitlines()
    rows = [line.split() for line in out[3:] if line.startswith(("convolution layer", "square layer", "dense layer", "output layer"))]
    total = next(line.split() for line in out if line.startswith("total"))
    return out, rows, total


def test_6_plan_trace_goldens(capsys):
    out, rows, total = _profile_rows(capsys, "profile", "--arch", "mnist", "--plan", "lola-mnist")
    sizes = [r[2] for r in rows]
    reps = [r[3] for r in rows]
    mnist_ok = (
        sizes == ["25×169", "5×169", "1×845", "1×845", "1×6760", "13×8", "1×100", "1×100", "1×10"]
        and reps == ["convolution", "dense", "dense", "dense", "stacked", "interleave", "interleave", "interleave", "sparse"]
        and int(total[1]) == 2
    )

    out, rows, total = _profile_rows(capsys, "profile", "--arch", "mnist", "--plan", "lola-dense-mnist")
    text = "\n".join(out)
    dense_ok = (
        [r[2] for r in rows] == ["1×784", "25×169", "5×169", "1×845", "1×845", "1×13520", "7×16", "1×100", "1×100", "10×1"]
        and [r[3] for r in rows] == ["dense", "convolution-interleave", "interleave", "interleave", "interleave",
                                     "stacked-interleave", "interleave", "interleave", "interleave", "sparse"]
        and "mask input to create 25 messages" in text
        and "(7 calls of 16 rows)" in text
        and build_plan(collapse_adjacent_linear(mnist_network()), "lola-dense-mnist").steps[0].predicted.mask_mul == 25
    )

    cifar = collapse_adjacent_linear(cifar_network())
    lola_cifar = build_plan(cifar, "lola-cifar")
    simd = build_plan(cifar, "cryptonets-simd")
    widest = max(simd.message_counts())
    ratio = widest / lola_cifar.input_messages
    cifar_ok = lola_cifar.input_messages == 192 and widest == 16268 and ratio >= 80
    _record(6, mnist_ok and dense_ok and cifar_ok,
            f"lola-mnist sequence {'ok' if mnist_ok else 'MISMATCH'} (2 ct*ct), lola-dense-mnist {'ok' if dense_ok else 'MISMATCH'} "
            f"(25 masks, 7 calls of 16 rows), lola-cifar input {lola_cifar.input_messages} msgs, "
            f"simd widest {widest} msgs, ratio {ratio:.1f}")


def test_7_cifar_moduli():
    n = 16384
    facts = [(p, _trial_division_prime(p), p % (2 * n)) for p in CIFAR_PRIMES]
    ok = all(prime and r == 1 for _, prime, r in facts) and CIFAR_PRIMES == (2148728833, 2148794369, 2149810177)
    CrtModulus.of(CIFAR_PRIMES, n)
    for p in CIFAR_PRIMES:
        PrimeModulus(p, n)
    _record(7, ok, ", ".join(f"{p}: prime={prime}, p mod 32768={r}" for p, prime, r in facts))


def test_8_end_to_end_equivalence():
    rng = np.random.default_rng(8)
    start = time.perf_counter()
    runs = failures = 0
    first_failure = None
    for i in range(200):
        net = toy_network(rng)
        q = integer_network(collapse_adjacent_linear(net), 15)
        x = rng.integers(-15, 16, int(np.prod(net.input_shape)))
        want = [int(v) for v in q.forward(x)]
        for preset in PRESETS:
            plan = fit_ring_degree(q, preset)
            mod = CrtModulus.of(minimal_primes(plan.n, q.max_bound()), plan.n)
            for backend in ("slot", "ring"):
                res = execute(plan, q, x, make_evaluator(backend, mod))
                runs += 1
                ok = [int(v) for v in res.scores] == want and res.matches_prediction
                if not ok:
                    failures += 1
                    first_failure = first_failure or f"net {i} {preset} {backend}"
    elapsed = time.perf_counter() - start
    ok = failures == 0 and elapsed < 600
    detail = f"200 nets x {len(PRESETS)} plans x 2 backends: {runs - failures}/{runs} equal to the integer oracle " \
             f"(counters as predicted) in {elapsed:.0f} s (< 600 s)"
    if first_failure:
        detail += f"; first failure {first_failure}"
    _record(8, ok, detail)


def test_9_collapse_correctness():
    full = cifar_network()
    net = Network(full.input_shape, full.layers[:3])  # conv 3x3 + pool 2x2 + conv 3x3
    collapsed = collapse_adjacent_linear(net)
    stage = collapsed.stages[0]
    shape_ok = len(collapsed.stages) == 1 and stage.geometry.window == (8, 8) and stage.geometry.stride == (2, 2)
    rng = np.random.default_rng(9)
    X = rng.normal(size=(100, 3 * 32 * 32))
    ref = net.forward_batch(X)
    worst = 0.0
    for x, r in zip(X, ref):
        got = stage.apply(x)
        worst = max(worst, float(np.max(np.abs(got - r)) / np.max(np.abs(r))))
    _record(9, shape_ok and worst <= 1e-9,
            f"collapsed to one {stage.geometry.window} stride {stage.geometry.stride} conv; "
            f"worst relative error {worst:.2e} over 100 inputs (<= 1e-9)")


def _bounds_by_hand(q, input_bound):
    b, out = input_bound, []
    for s in q.stages:
        if s.kind == "square":
            b = b * b
        else:
            b = b * max(sum(abs(int(w)) for w in row) for row in s.weights) + max(abs(int(v)) for v in s.bias)
        out.append(b)
    return out


def test_10_quantization_soundness():
    import itertools

    rng = np.random.default_rng(10)
    corners = violations = 0
    for trial in range(60):
        d = int(rng.integers(1, 7))
        B = int(rng.integers(1, 20))
        if trial % 3 == 0 and d >= 2:
            w = 2 if d % 2 == 0 else 1
            first = Conv(2, (1, w), (1, w), 0, rng.normal(size=(2, 1, 1, w)), rng.normal(size=2))
            shape = (1, d // w, w)
            flat = 2 * (d // w)
            layers = (first, Square(), Dense(2, rng.normal(size=(2, flat)), rng.normal(size=2)))
        else:
            shape = (d,)
            layers = (Dense(3, rng.normal(size=(3, d)), rng.normal(size=3)), Square(),
                      Dense(2, rng.normal(size=(2, 3)), rng.normal(size=2)))
        net = Network(shape, layers)
        q = quantize(collapse_adjacent_linear(net), QuantizationPolicy(1, 8, None, B))
        bounds = q.bounds()
        assert bounds == _bounds_by_hand(q, B)
        for corner in itertools.product((-B, B), repeat=int(np.prod(shape))):
            corners += 1
            x = np.array(corner, dtype=object)
            for stage, bound in zip(q.stages, bounds):
                x = stage.apply(x)
                if max(abs(int(v)) for v in x) > bound:
                    violations += 1

    # overflow attribution: capacity between stage bounds picks the first offending stage
    identified = attempts = 0
    n = 64
    one_prime = CrtModulus.of(ntt_friendly_primes(n, 1), n)
    for trial in range(40):
        scale = float(2 ** int(rng.integers(0, 12)))
        net = Network((4,), (Dense(3, rng.normal(size=(3, 4)) * scale, rng.normal(size=3)), Square(),
                             Dense(2, rng.normal(size=(2, 3)) * scale, rng.normal(size=2)), Square(),
                             Dense(2, rng.normal(size=(2, 2)), rng.normal(size=2))))
        policy = QuantizationPolicy(1, 16, None, 255)
        c = collapse_adjacent_linear(net)
        hand = _bounds_by_hand(quantize(c, policy), 255)
        expected = next((i for i, b in enumerate(hand) if b > one_prime.capacity), None)
        if expected is None:
            continue
        attempts += 1
        try:
            quantize(c, policy, one_prime)
        except QuantizationOverflowError as e:
            if e.stage == expected and f"stage {expected}" in str(e):
                identified += 1
    ok = violations == 0 and corners > 0 and attempts > 0 and identified == attempts
    _record(10, ok, f"{corners} corner inputs, {violations} bound violations; overflow stage named correctly "
                    f"in {identified}/{attempts} cases")
