import numpy as np
import pytest

from lola.backend import make_evaluator
from lola.network import (
    PRESETS,
    PlanError,
    PlanStrategy,
    ShapeError,
    build_plan,
    collapse_adjacent_linear,
    execute,
    fit_ring_degree,
    integer_network,
    minimal_primes,
    predict,
)
from lola.network.execute import ExecutionError
from lola.network.presets import caltech_network, mnist_network, toy_network
from lola.report import trace_report
from lola.ring import CrtModulus


@pytest.fixture(scope="module")
def mnist():
    return collapse_adjacent_linear(mnist_network())


def test_lola_mnist_structure(mnist):
    plan = build_plan(mnist, "lola-mnist")
    assert plan.n == 8192
    assert [s.op for s in plan.steps] == [
        "conv-rowmajor", "combine", "square", "stack", "stacked-rowmajor", "combine", "square", "rowmajor",
    ]
    assert plan.message_counts() == [25, 5, 1, 1, 1, 13, 1, 1, 10]
    assert plan.predicted.ct_ct_mul == 2 and plan.squares == 2
    stack = plan.steps[3]
    assert (stack.params["copies"], stack.params["pad"]) == (8, 1024)


def test_lola_dense_structure(mnist):
    plan = build_plan(mnist, "lola-dense-mnist")
    first = plan.steps[0]
    assert first.op == "mask-to-conv" and first.predicted.mask_mul == 25
    stacked = next(s for s in plan.steps if s.op == "stacked-rowmajor")
    assert stacked.out_rep.count == 7 and stacked.in_rep.copies == 16


def test_linear_features_single_step():
    plan = build_plan(collapse_adjacent_linear(caltech_network()), "linear-features")
    assert [s.op for s in plan.steps] == ["rowmajor"]
    assert plan.label(plan.steps[0].in_rep) == "1×4096"
    assert plan.label(plan.output_rep) == "101×1"


def test_unknown_plan_and_bad_degree(mnist):
    with pytest.raises(PlanError):
        build_plan(mnist, "lola-fast")
    with pytest.raises(PlanError):
        build_plan(mnist, "lola-mnist", 64)  # 169 window positions do not fit
    with pytest.raises(PlanError):
        PlanStrategy("x", "braille")


def test_fit_ring_degree_finds_smallest(rng):
    q = integer_network(collapse_adjacent_linear(toy_network(rng, size=8)), 7)
    plan = fit_ring_degree(q, "lola-mnist")
    with pytest.raises(PlanError):
        build_plan(q, "lola-mnist", plan.n // 2)


@pytest.mark.parametrize("preset", sorted(PRESETS))
@pytest.mark.parametrize("backend", ["slot", "ring"])
def test_toy_network_exact_with_predicted_counts(preset, backend):
    rng = np.random.default_rng(7)
    net = toy_network(rng)
    q = integer_network(collapse_adjacent_linear(net), 15)
    x = rng.integers(0, 16, int(np.prod(net.input_shape)))
    plan = fit_ring_degree(q, preset)
    mod = CrtModulus.of(minimal_primes(plan.n, q.max_bound()), plan.n)
    res = execute(plan, q, x, make_evaluator(backend, mod))
    assert [int(s) for s in res.scores] == [int(s) for s in q.forward(x)]
    assert res.matches_prediction
    assert res.depth == 2
    assert res.counters.operations() == plan.predicted.operations()
    report = trace_report(plan, mod.values, [r.measured for r in res.records], res.depth)
    assert report.totals.operations() == plan.predicted.operations()


def test_execute_checks_input_and_ring(rng):
    net = toy_network(rng, size=8)
    q = integer_network(collapse_adjacent_linear(net), 7)
    plan = fit_ring_degree(q, "lola-mnist")
    mod = CrtModulus.of(minimal_primes(plan.n, q.max_bound()), plan.n)
    with pytest.raises(ShapeError):
        execute(plan, q, np.zeros(3), make_evaluator("slot", mod))
    other = CrtModulus.of(minimal_primes(plan.n * 2, q.max_bound()), plan.n * 2)
    with pytest.raises(ExecutionError):
        execute(plan, q, np.zeros(int(np.prod(net.input_shape))), make_evaluator("slot", other))


def test_predict_ties_go_low():
    assert predict([3, 7, 7, 1]) == 1
    assert predict([0] * 10) == 0
    with pytest.raises(ValueError):
        predict([])
