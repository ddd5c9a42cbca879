"""``lola`` command line: infer, profile, verify, make-model."""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .backend import BudgetError, make_evaluator
from .modelio import FormatError, load_input, load_model, save_model
from .network import (
    PRESETS,
    PlanError,
    QuantizationPolicy,
    ShapeError,
    build_plan,
    collapse_adjacent_linear,
    execute,
    fit_ring_degree,
    minimal_primes,
    predict,
    quantize,
)
from .network.presets import ARCHITECTURES, toy_network
from .network.quantize import check_capacity
from .report import trace_report
from .ring import CrtModulus, RingError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_SHAPE = 4
EXIT_BUDGET = 5
EXIT_VERIFY = 6
EXIT_PLAN = 7


class UsageError(ValueError):
    pass


def _ring_degree(text: str) -> int | str:
    if text == "auto":
        return text
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"ring degree must be a power of two or 'auto', got {text!r}") from None
    if n < 4 or n & (n - 1):
        raise argparse.ArgumentTypeError(f"ring degree must be a power of two >= 4, got {n}")
    return n


def _primes(text: str) -> tuple[int, ...]:
    try:
        primes = tuple(int(p) for p in text.split(",") if p.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"primes must be comma-separated integers, got {text!r}") from None
    if not primes:
        raise argparse.ArgumentTypeError("at least one prime is required")
    return primes


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _ring_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--plan", default="lola-mnist", choices=sorted(PRESETS), help="inference plan preset")
    p.add_argument("--n", type=_ring_degree, default=None,
                   help="ring degree (power of two) or 'auto' for the smallest that fits; default per plan")
    p.add_argument("--primes", type=_primes, default=None,
                   help="comma-separated plaintext primes; default per plan, else the fewest that fit")
    p.add_argument("--threads", type=_positive, default=1, help="worker threads for kernels")


def _parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="lola", description="Packed-message neural network inference over a plaintext ring.")
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("infer", help="classify one input")
    p.add_argument("model", help="model manifest (JSON)")
    p.add_argument("input", help="IDX image file or CSV feature file")
    p.add_argument("--index", type=int, default=0, help="sample index inside a multi-sample IDX file")
    p.add_argument("--backend", default="slot", choices=("slot", "ring"))
    p.add_argument("--trace", action="store_true", help="also print the measured per-step trace")
    _ring_flags(p)

    p = sub.add_parser("profile", help="print the per-step plan trace")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("model", nargs="?", help="model manifest (JSON)")
    src.add_argument("--arch", choices=sorted(ARCHITECTURES), help="built-in architecture with random weights")
    p.add_argument("--jsonl", metavar="PATH", help="also write one JSON record per step ('-' for stdout)")
    p.add_argument("--measure", action="store_true", help="execute on a zero input and report measured counters")
    p.add_argument("--backend", default="slot", choices=("slot", "ring"))
    _ring_flags(p)

    p = sub.add_parser("verify", help="run the oracle and differential suites")
    p.add_argument("--n", type=_ring_degree, default=1024)
    p.add_argument("--trials", type=_positive, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=_positive, default=1)
    p.add_argument("--backend", action="append", choices=("slot", "ring"),
                   help="backend for the kernel suite (repeatable; default both)")
    p.add_argument("--corrupt-rotation", action="store_true",
                   help="flip the ring backend's rotation direction (negative control)")

    p = sub.add_parser("make-model", help="write a random-weight model file")
    p.add_argument("arch", choices=sorted(ARCHITECTURES) + ["toy"])
    p.add_argument("output", help="manifest path; blobs are written next to it")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--weight-scale", type=float, default=16.0)
    p.add_argument("--input-bound", type=float, default=255.0)
    return top


# ---------------------------------------------------------------------------


def _prepare(args, net, policy):
    collapsed = collapse_adjacent_linear(net)
    q = quantize(collapsed, policy)
    strategy = PRESETS[args.plan]
    if args.n == "auto":
        plan = fit_ring_degree(q, strategy)
    else:
        plan = build_plan(q, strategy, args.n)
    if args.primes is not None:
        primes = args.primes
    elif strategy.primes is not None and plan.n == strategy.n:
        primes = strategy.primes
    else:
        primes = tuple(minimal_primes(plan.n, q.max_bound()))
    try:
        modulus = CrtModulus.of(primes, plan.n)
    except RingError as e:
        raise UsageError(f"--primes: {e}") from None
    check_capacity(q, modulus)
    return q, plan, modulus


def cmd_infer(args) -> int:
    net, policy = load_model(args.model)
    x = load_input(args.input, args.index)
    q, plan, modulus = _prepare(args, net, policy)
    x_int = q.quantize_input(x)
    ev = make_evaluator(args.backend, modulus, threads=args.threads)
    start = time.perf_counter()
    result = execute(plan, q, x_int, ev)
    elapsed = time.perf_counter() - start
    scores = [int(s) for s in result.scores]
    print(f"class {predict(scores)}")
    print("scores " + " ".join(str(s) for s in scores))
    if args.trace:
        print(trace_report(plan, modulus.values, [r.measured for r in result.records], result.depth).text(), end="")
    print(f"inference took {elapsed:.3f} s on the {args.backend} backend", file=sys.stderr)
    return EXIT_OK


def cmd_profile(args) -> int:
    start = time.perf_counter()
    if args.arch:
        net, policy = ARCHITECTURES[args.arch](), QuantizationPolicy()
    else:
        net, policy = load_model(args.model)
    q, plan, modulus = _prepare(args, net, policy)
    measured = depth = None
    if args.measure:
        ev = make_evaluator(args.backend, modulus, threads=args.threads)
        result = execute(plan, q, np.zeros(int(np.prod(plan.input_shape)), dtype=np.int64), ev)
        measured = [r.measured for r in result.records]
        depth = result.depth
    report = trace_report(plan, modulus.values, measured, depth)
    print(report.text(), end="")
    if args.jsonl == "-":
        print(report.jsonl(), end="")
    elif args.jsonl:
        Path(args.jsonl).write_text(report.jsonl())
    print(f"profile took {time.perf_counter() - start:.3f} s", file=sys.stderr)
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_all

    if args.n == "auto":
        raise UsageError("verify needs an explicit --n")
    backends = tuple(args.backend) if args.backend else ("slot", "ring")
    results = run_all(args.n, args.trials, args.seed, backends, args.corrupt_rotation, args.threads)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    total = sum(r.trials for r in results)
    bad = sum(r.failures for r in results)
    print(f"{len(results) - len(failed)}/{len(results)} suites passed, {total - bad}/{total} cases")
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_make_model(args) -> int:
    rng = np.random.default_rng(args.seed)
    if args.arch == "toy":
        net = toy_network(rng)
    else:
        net = ARCHITECTURES[args.arch](rng)
    policy = QuantizationPolicy(weight_scale=args.weight_scale, input_bound=args.input_bound)
    path = save_model(args.output, net, policy)
    print(path)
    return EXIT_OK


COMMANDS = {"infer": cmd_infer, "profile": cmd_profile, "verify": cmd_verify, "make-model": cmd_make_model}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"lola: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as e:
        print(f"lola: parse error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except ShapeError as e:
        print(f"lola: shape error: {e}", file=sys.stderr)
        return EXIT_SHAPE
    except BudgetError as e:
        print(f"lola: budget error: {e}", file=sys.stderr)
        return EXIT_BUDGET
    except PlanError as e:
        print(f"lola: plan error: {e}", file=sys.stderr)
        return EXIT_PLAN


if __name__ == "__main__":
    sys.exit(main())
