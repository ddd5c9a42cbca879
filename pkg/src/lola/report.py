"""Per-step trace of a plan: aligned text for people, JSON lines for machines.

Both renderings are deterministic (no timestamps) so they can serve as
golden files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

from .backend import OpCounters
from .network.plans import InferencePlan

COLUMNS = (
    ("ct_ct_mul", "ct*ct"),
    ("ct_plain_mul", "ct*pt"),
    ("scalar_mul", "scalar"),
    ("add", "add"),
    ("plain_add", "pt+"),
    ("rot_cols", "rot_c"),
    ("rot_rows", "rot_r"),
    ("rotations", "rots"),
    ("mask_mul", "masks"),
    ("live_messages_peak", "live"),
)


@dataclass(frozen=True)
class TraceRow:
    layer: str
    input_size: str
    representation: str
    operation: str
    counters: OpCounters


@dataclass(frozen=True)
class TraceReport:
    plan: str
    n: int
    primes: tuple[int, ...]
    rows: tuple[TraceRow, ...]
    output_size: str
    output_representation: str
    depth: int
    measured: bool

    @property
    def totals(self) -> OpCounters:
        total = OpCounters()
        for r in self.rows:
            total.merge(r.counters)
        return total

    @property
    def peak(self) -> int:
        return self.totals.live_messages_peak

    def text(self) -> str:
        head = ["layer", "input", "representation", "operation"] + [c[1] for c in COLUMNS]
        body = [[r.layer, r.input_size, r.representation, r.operation]
                + [str(getattr(r.counters, k)) for k, _ in COLUMNS] for r in self.rows]
        body.append(["output layer", self.output_size, self.output_representation, ""] + [""] * len(COLUMNS))
        tot = self.totals
        body.append(["total", "", "", ""] + [str(getattr(tot, k)) for k, _ in COLUMNS])
        widths = [max(len(row[i]) for row in [head] + body) for i in range(len(head))]
        numeric = set(range(4, len(head)))

        def fmt(row):
            cells = [c.rjust(w) if i in numeric else c.ljust(w) for i, (c, w) in enumerate(zip(row, widths))]
            return "  ".join(cells).rstrip()

        source = "measured" if self.measured else "predicted"
        lines = [f"plan {self.plan}  n={self.n}  primes={','.join(map(str, self.primes)) or '-'}  counters={source}",
                 fmt(head), fmt(["-" * w for w in widths])]
        lines += [fmt(r) for r in body]
        lines.append(f"depth {self.depth}  peak live messages {self.peak}")
        return "\n".join(lines) + "\n"

    def jsonl(self) -> str:
        out = []
        for i, r in enumerate(self.rows):
            out.append({"step": i, "layer": r.layer, "input": r.input_size,
                        "representation": r.representation, "operation": r.operation,
                        "counters": r.counters.as_dict()})
        out.append({"output": self.output_size, "representation": self.output_representation})
        out.append({"plan": self.plan, "n": self.n, "primes": list(self.primes),
                    "totals": self.totals.as_dict(), "depth": self.depth, "peak": self.peak,
                    "counters": "measured" if self.measured else "predicted"})
        return "".join(json.dumps(o, sort_keys=True, ensure_ascii=False) + "\n" for o in out)


def trace_report(plan: InferencePlan, primes: Sequence[int] = (), measured: Sequence[OpCounters] | None = None,
                 depth: int | None = None) -> TraceReport:
    """Trace of ``plan``; uses measured per-step counters when given."""
    if measured is not None and len(measured) != len(plan.steps):
        raise ValueError("one measured counter set per plan step is required")
    rows = []
    for i, s in enumerate(plan.steps):
        c = measured[i] if measured is not None else s.predicted
        rows.append(TraceRow(s.layer, plan.label(s.in_rep), s.in_rep.display_name, s.description, c))
    return TraceReport(plan.strategy.name, plan.n, tuple(int(p) for p in primes), tuple(rows),
                       plan.label(plan.output_rep), plan.output_rep.display_name,
                       plan.squares if depth is None else depth, measured is not None)
