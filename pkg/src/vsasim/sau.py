"""Per-lane systolic array unit: packed-operand MACs, tile streaming, queues.

The array is tile_r x tile_c output-stationary accumulators.  Each PE holds
sixteen 4-bit multipliers that fuse into 1 MAC at 16-bit, 4 MACs at 8-bit, or
16 MACs at 4-bit precision, so a packed element always carries ic_par operands.

Timing model (normative for the whole artifact):
  run_tile cycles = tile_r + tile_c - 1 + steps   (steps >= 1; 0 for steps == 0)
  flushing the accumulator grid into the output queue adds tile_c cycles.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import PrecisionMismatch, StreamUnderrun
from .isa import Precision

ACC_MASK = 0xFFFFFFFF


def wrap32(value: int) -> int:
    """Wrap to signed 32-bit two's complement."""
    value &= ACC_MASK
    return value - (1 << 32) if value & 0x80000000 else value


@dataclass(frozen=True)
class PackedElement:
    """ic_par signed operands bundled into one element."""

    precision: Precision
    operands: tuple

    def __post_init__(self):
        icp = self.precision.ic_par
        if len(self.operands) != icp:
            raise ValueError(
                f"{self.precision.name} element needs {icp} operands, "
                f"got {len(self.operands)}")
        lo, hi = self.precision.lo, self.precision.hi
        for op in self.operands:
            if not lo <= op <= hi:
                raise ValueError(f"operand {op} outside [{lo}, {hi}]")

    @classmethod
    def zero(cls, precision: Precision) -> "PackedElement":
        return cls(precision, (0,) * precision.ic_par)


def pe_dot(a: PackedElement, w: PackedElement, acc: int) -> int:
    """One PE cycle: acc + sum(a[i] * w[i]), wrapped to 32 bits."""
    if a.precision is not w.precision:
        raise PrecisionMismatch(f"{a.precision.name} vs {w.precision.name}")
    total = acc
    for x, y in zip(a.operands, w.operands):
        total += x * y
    return wrap32(total)


@dataclass
class Queue:
    """Bounded FIFO with conservation counters (pushed == popped + resident)."""

    depth: int = 8
    items: list = field(default_factory=list)
    pushed: int = 0
    popped: int = 0

    def push(self, item) -> bool:
        if len(self.items) >= self.depth:
            return False  # backpressure: caller must stall, never drop
        self.items.append(item)
        self.pushed += 1
        return True

    def pop(self):
        self.popped += 1
        return self.items.pop(0)

    def __len__(self):
        return len(self.items)


@dataclass
class SauState:
    """One lane's systolic array: accumulator grid, queues, requester cursors."""

    tile_r: int = 4
    tile_c: int = 4
    queue_depth: int = 8
    acc_grid: list = None
    input_q: Queue = None
    weight_q: Queue = None
    acc_q: Queue = None
    output_q: Queue = None
    input_cursor: int = 0
    weight_cursor: int = 0

    def __post_init__(self):
        if self.acc_grid is None:
            self.acc_grid = [[0] * self.tile_c for _ in range(self.tile_r)]
        for name in ("input_q", "weight_q", "acc_q", "output_q"):
            if getattr(self, name) is None:
                setattr(self, name, Queue(self.queue_depth))

    def reset_grid(self):
        for row in self.acc_grid:
            for c in range(self.tile_c):
                row[c] = 0

    def flush(self) -> tuple[list, int]:
        """Drain the grid into the output queue; returns (values, tile_c cycles)."""
        drained = [row[:] for row in self.acc_grid]
        for row in drained:
            for v in row:
                self.output_q.push(v)
                self.output_q.pop()  # consumed by the VRF writeback port
        self.reset_grid()
        return drained, self.tile_c


def fill_cycles(tile_r: int, tile_c: int) -> int:
    """Systolic skew: cycles before the first operand pair meets the last PE."""
    return tile_r + tile_c - 1


def run_tile(inputs: list, weights: list, steps: int,
             state: SauState) -> tuple[SauState, int]:
    """Stream `steps` element pairs through the array, accumulating in place.

    inputs:  tile_r feed lanes, each a sequence of PackedElement
    weights: tile_c feed lanes, each a sequence of PackedElement
    acc_grid[r][c] += sum over steps of dot(inputs[r][s], weights[c][s]).
    """
    if steps == 0:
        return state, 0
    if len(inputs) != state.tile_r or len(weights) != state.tile_c:
        raise StreamUnderrun(
            f"need {state.tile_r} input and {state.tile_c} weight feed lanes")
    for r, lane in enumerate(inputs):
        if len(lane) < steps:
            raise StreamUnderrun(f"input feed lane {r} has {len(lane)} < {steps}")
    for c, lane in enumerate(weights):
        if len(lane) < steps:
            raise StreamUnderrun(f"weight feed lane {c} has {len(lane)} < {steps}")
    for s in range(steps):
        for r in range(state.tile_r):
            a = inputs[r][s]
            state.input_q.push(a)
            state.input_q.pop()
            for c in range(state.tile_c):
                w = weights[c][s]
                if r == 0:
                    state.weight_q.push(w)
                    state.weight_q.pop()
                state.acc_grid[r][c] = pe_dot(a, w, state.acc_grid[r][c])
    return state, fill_cycles(state.tile_r, state.tile_c) + steps


def request_operands(state: SauState, needed: dict) -> list:
    """Order pending VRF requests: accumulator refills > weights > inputs.

    `needed` maps class name ("acc", "weight", "input") to a list of addresses.
    One request issues per cycle per port; within a cycle the highest-priority
    outstanding class wins, so the returned sequence is the issue order.
    """
    pending = {
        "acc": list(needed.get("acc", ())),
        "weight": list(needed.get("weight", ())),
        "input": list(needed.get("input", ())),
    }
    order = []
    while any(pending.values()):
        for cls in ("acc", "weight", "input"):
            if pending[cls]:
                order.append((cls, pending[cls].pop(0)))
                break
    return order


def parallelism_dims(cfg, precision: Precision) -> dict:
    """The three parallel degrees: input channel, output channel, map height."""
    return {"ic": precision.ic_par, "oc": cfg.tile_c, "fh": cfg.tile_r}
