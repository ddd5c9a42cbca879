from .execute import ExecutionResult, StageRows, encode_input, execute, predict
from .layers import (
    AvgPool,
    CollapsedNetwork,
    Conv,
    Dense,
    LinearStage,
    Network,
    NetworkError,
    ShapeError,
    Softmax,
    Square,
    SquareStage,
    collapse_adjacent_linear,
)
from .plans import (
    CIFAR_PRIMES,
    PRESETS,
    InferencePlan,
    PlanError,
    PlanStep,
    PlanStrategy,
    build_plan,
    fit_ring_degree,
    resolve_strategy,
)
from .quantize import (
    QuantizationOverflowError,
    QuantizationPolicy,
    QuantizedNetwork,
    integer_network,
    minimal_primes,
    propagate_bounds,
    quantize,
)
