"""Packed-message neural network inference over an exact plaintext ring."""

from .backend import OpCounters, RingEvaluator, SlotEvaluator, make_evaluator
from .network import (
    PRESETS,
    InferencePlan,
    Network,
    QuantizationPolicy,
    build_plan,
    collapse_adjacent_linear,
    execute,
    predict,
    quantize,
)
from .ring import CrtModulus, PrimeModulus, RingElement, SlotVector

__all__ = [
    "CrtModulus", "InferencePlan", "Network", "OpCounters", "PRESETS", "PrimeModulus",
    "QuantizationPolicy", "RingElement", "RingEvaluator", "SlotEvaluator", "SlotVector",
    "build_plan", "collapse_adjacent_linear", "execute", "make_evaluator", "predict", "quantize",
]
