import numpy as np

from lola import verify


def test_all_suites_pass_small():
    results = verify.run_all(n=64, trials=10, seed=3)
    assert [r.passed for r in results] == [True] * len(results)
    assert all(r.trials > 0 for r in results)


def test_corrupted_rotation_is_caught():
    rng = np.random.default_rng(0)
    res = verify.agreement_suite(64, 20, rng, corrupt_rotation=True)
    assert not res.passed and res.first_failure is not None


def test_program_oracle_matches_slot_backend():
    from lola.backend import make_evaluator
    from lola.ring import CrtModulus, ntt_friendly_primes

    rng = np.random.default_rng(5)
    mod = CrtModulus.of(ntt_friendly_primes(16, 2), 16)
    prog = verify.random_program(16, 12, rng)
    got = verify.run_program(make_evaluator("slot", mod), prog)
    assert [[int(x) for x in r] for r in got] == verify.oracle_program(16, prog)
