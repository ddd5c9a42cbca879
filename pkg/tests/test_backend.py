import numpy as np
import pytest

from lola import oracles
from lola.backend import (
    BackendMismatchError,
    DepthBudgetError,
    MagnitudeOverflowError,
    OpCounters,
    make_evaluator,
)
from lola.ring import CrtModulus, RingError, ntt_friendly_primes

N = 32
BACKENDS = ("slot", "ring")


def _mod(n=N, count=2):
    return CrtModulus.of(ntt_friendly_primes(n, count), n)


@pytest.fixture(params=BACKENDS)
def ev(request):
    return make_evaluator(request.param, _mod())


def test_lift_lower_signed_roundtrip(ev, rng):
    v = rng.integers(-(2**40), 2**40, N)
    assert [int(x) for x in ev.lower(ev.lift(v))] == v.tolist()
    short = ev.lower(ev.lift([5, -6]))
    assert [int(x) for x in short] == [5, -6] + [0] * (N - 2)


def test_values_beyond_int64_roundtrip():
    for backend in BACKENDS:
        ev = make_evaluator(backend, _mod(count=3))
        big = 10**27 + 12345
        m = ev.lift([big, -big])
        assert [int(x) for x in ev.lower(ev.add(m, m))[:2]] == [2 * big, -2 * big]


def test_bounds_are_conservative_near_capacity():
    # float bounds round upward, so a value a few units below capacity is refused
    ev = make_evaluator("slot", _mod())
    with pytest.raises(MagnitudeOverflowError):
        ev.lift([ev.modulus.capacity - 3])


def test_arithmetic_matches_elementwise(ev, rng):
    a, b = rng.integers(-50, 51, N), rng.integers(-50, 51, N)
    ma, mb = ev.lift(a), ev.lift(b)
    assert ev.lower(ev.add(ma, mb)).tolist() == (a + b).tolist()
    assert ev.lower(ev.mul(ma, mb)).tolist() == (a * b).tolist()
    assert ev.lower(ev.mul_plain(ma, b)).tolist() == (a * b).tolist()
    assert ev.lower(ev.mul_plain(ma, -3)).tolist() == (-3 * a).tolist()
    assert ev.lower(ev.add_plain(ma, 7)).tolist() == (a + 7).tolist()
    assert ev.lower(ev.add_plain(ma, b)).tolist() == (a + b).tolist()
    kept = ev.lower(ev.mask(ma, [0, 5]))
    assert kept[0] == a[0] and kept[5] == a[5] and sum(abs(int(x)) for x in kept) == abs(a[0]) + abs(a[5])


def test_rotations_match_oracle(ev, rng):
    a = rng.integers(-50, 51, N)
    m = ev.lift(a)
    for k in (-15, -4, -1, 1, 3, 15):
        assert ev.lower(ev.rotate_columns(m, k)).tolist() == oracles.rolled_slots(a.tolist(), "columns", k)
    assert ev.lower(ev.rotate_rows(m)).tolist() == oracles.rolled_slots(a.tolist(), "rows")
    assert ev.lower(ev.rotate_linear(m, N // 2)).tolist() == oracles.rolled_slots(a.tolist(), "rows")
    with pytest.raises(RingError):
        ev.rotate_columns(m, N // 2)


def test_column_rotation_counts_one_primitive_per_set_bit(ev):
    m = ev.lift([1])
    ev.rotate_columns(m, 13)  # 0b1101
    ev.rotate_columns(m, -4)
    ev.rotate_columns(m, 0)
    c = ev.counters
    assert (c.rot_cols, c.rotations, c.rot_rows) == (4, 2, 0)
    ev.rotate_rows(m)
    assert (c.rot_rows, c.rotations) == (1, 3)


def test_counters_per_operation(ev):
    a = ev.lift([1, 2])
    ev.add(a, a)
    ev.add_plain(a, 1)
    ev.mul(a, a)
    ev.mul_plain(a, [1, 2])
    ev.mul_plain(a, 3)
    ev.mask(a, [1])
    assert ev.counters.operations() == {
        "ct_ct_mul": 1, "ct_plain_mul": 2, "scalar_mul": 1, "add": 1, "plain_add": 1,
        "rot_cols": 0, "rot_rows": 0, "rotations": 0, "mask_mul": 1,
    }


def test_depth_tracking_and_budget():
    ev = make_evaluator("slot", _mod(), max_depth=1)
    a = ev.lift([2])
    sq = ev.square(a)
    assert (sq.depth, ev.mul_plain(sq, 2).plain_depth) == (1, 1)
    with pytest.raises(DepthBudgetError):
        ev.square(sq)


def test_magnitude_overflow_detected():
    mod = _mod(count=1)
    ev = make_evaluator("slot", mod)
    big = ev.lift([mod.capacity // 2 + 1])
    with pytest.raises(MagnitudeOverflowError):
        ev.add(big, big)
    with pytest.raises(MagnitudeOverflowError):
        ev.lift([mod.capacity + 1])


def test_bounds_follow_rotations():
    ev = make_evaluator("slot", _mod(count=1))
    m = ev.rotate_columns(ev.lift([100, 1]), 3)
    assert m.bounds[3] == 100 and m.bounds[0] == 0 and m.magnitude == 100


def test_backend_mismatch():
    mod = _mod()
    a = make_evaluator("slot", mod).lift([1])
    with pytest.raises(BackendMismatchError):
        make_evaluator("ring", mod).add(a, a)
    with pytest.raises(ValueError):
        make_evaluator("gpu", mod)


def test_threaded_map_is_deterministic():
    mod = _mod()
    seq = make_evaluator("ring", mod)
    par = make_evaluator("ring", mod, threads=4)
    outs = []
    for ev in (seq, par):
        m = ev.lift(list(range(N)))
        res = ev.map(lambda e, k: e.rotate_columns(e.mul_plain(m, k + 1), k + 1), range(8))
        outs.append([ev.lower(r).tolist() for r in res])
    assert outs[0] == outs[1]
    assert seq.counters.as_dict() == par.counters.as_dict()


def test_corrupt_rotation_hook_changes_direction():
    mod = _mod()
    ev = make_evaluator("ring", mod, corrupt_rotation=True)
    got = ev.lower(ev.rotate_columns(ev.lift([1, 2, 3]), 1)).tolist()
    assert got != oracles.rolled_slots([1, 2, 3] + [0] * (N - 3), "columns", 1)


def test_counter_arithmetic():
    a = OpCounters(add=3, live_messages_peak=4)
    b = OpCounters(add=1, rot_cols=2, live_messages_peak=9)
    s = a + b
    assert (s.add, s.rot_cols, s.live_messages_peak) == (4, 2, 9)
    assert (s - a).add == 1
    assert "live_messages_peak" not in s.operations()
