"""Systolic array unit: packed MACs, tile streaming, queues, timing."""

import random

import pytest
from hypothesis import given, strategies as st

from vsasim.errors import PrecisionMismatch, StreamUnderrun
from vsasim.isa import Precision
from vsasim.sau import (PackedElement, Queue, SauState, fill_cycles,
                        parallelism_dims, pe_dot, request_operands, run_tile,
                        wrap32)


def _rand_elem(rng, prec):
    return PackedElement(
        prec, tuple(rng.randint(prec.lo, prec.hi)
                    for _ in range(prec.ic_par)))


# --- wrap32 --------------------------------------------------------------------

def test_wrap32_examples():
    assert wrap32(5) == 5
    assert wrap32(-7) == -7
    assert wrap32(2**31 - 1) == 2**31 - 1
    assert wrap32(2**31) == -2**31
    assert wrap32(-2**31 - 1) == 2**31 - 1
    assert wrap32(2**32) == 0


@given(st.integers(-2**40, 2**40))
def test_wrap32_is_modular(v):
    w = wrap32(v)
    assert -2**31 <= w <= 2**31 - 1
    assert (w - v) % 2**32 == 0


# --- packed elements -----------------------------------------------------------

def test_packed_element_validation():
    PackedElement(Precision.P16, (32767,))
    with pytest.raises(ValueError):
        PackedElement(Precision.P8, (1, 2, 3))          # needs 4 operands
    with pytest.raises(ValueError):
        PackedElement(Precision.P8, (1, 2, 3, 128))     # out of range
    with pytest.raises(ValueError):
        PackedElement(Precision.P4, (0,) * 15 + (-9,))  # out of range
    assert PackedElement.zero(Precision.P4).operands == (0,) * 16


def test_pe_dot_example():
    a = PackedElement(Precision.P8, (1, 2, 3, 4))
    w = PackedElement(Precision.P8, (5, 6, 7, 8))
    assert pe_dot(a, w, 10) == 10 + 5 + 12 + 21 + 32


def test_pe_dot_wraps_to_32_bits():
    a = PackedElement(Precision.P16, (32767,))
    w = PackedElement(Precision.P16, (32767,))
    prod = 32767 * 32767
    assert pe_dot(a, w, 2**31 - 1) == wrap32(2**31 - 1 + prod)


def test_pe_dot_precision_mismatch():
    a = PackedElement(Precision.P8, (1, 2, 3, 4))
    w = PackedElement(Precision.P16, (5,))
    with pytest.raises(PrecisionMismatch):
        pe_dot(a, w, 0)


def test_mac_ratio_16_4_1():
    # each PE fuses 16/4/1 MACs per cycle at 4/8/16-bit precision
    assert Precision.P4.ic_par == 16 * Precision.P16.ic_par
    assert Precision.P8.ic_par == 4 * Precision.P16.ic_par


# --- queues ----------------------------------------------------------------------

def test_queue_backpressure_and_conservation():
    q = Queue(depth=2)
    assert q.push("a") and q.push("b")
    assert not q.push("c")          # full: caller must stall, never drop
    assert q.pop() == "a"
    assert q.push("c")
    assert q.pushed == 3 and q.popped == 1 and len(q) == 2
    assert q.pushed == q.popped + len(q)


# --- tile streaming ---------------------------------------------------------------

def test_fill_cycles():
    assert fill_cycles(4, 4) == 7
    assert fill_cycles(1, 1) == 1


@pytest.mark.parametrize("prec", list(Precision))
@pytest.mark.parametrize("tile_r,tile_c,steps", [(4, 4, 1), (4, 4, 9),
                                                 (2, 3, 5), (1, 1, 16)])
def test_run_tile_matches_triple_loop(prec, tile_r, tile_c, steps):
    rng = random.Random(hash((prec.bits, tile_r, tile_c, steps)) & 0xFFFF)
    inputs = [[_rand_elem(rng, prec) for _ in range(steps)]
              for _ in range(tile_r)]
    weights = [[_rand_elem(rng, prec) for _ in range(steps)]
               for _ in range(tile_c)]
    state = SauState(tile_r=tile_r, tile_c=tile_c)
    state, cycles = run_tile(inputs, weights, steps, state)
    assert cycles == tile_r + tile_c - 1 + steps
    for r in range(tile_r):
        for c in range(tile_c):
            acc = 0
            for s in range(steps):
                for x, y in zip(inputs[r][s].operands, weights[c][s].operands):
                    acc = wrap32(acc + x * y)
            assert state.acc_grid[r][c] == acc


def test_run_tile_accumulates_across_calls():
    prec = Precision.P16
    one = PackedElement(prec, (1,))
    state = SauState(tile_r=2, tile_c=2)
    for _ in range(3):
        state, _ = run_tile([[one], [one]], [[one], [one]], 1, state)
    assert state.acc_grid == [[3, 3], [3, 3]]


def test_run_tile_zero_steps_is_free():
    state = SauState()
    state, cycles = run_tile([], [], 0, state)
    assert cycles == 0


def test_run_tile_underrun():
    prec = Precision.P16
    one = PackedElement(prec, (1,))
    state = SauState(tile_r=2, tile_c=2)
    with pytest.raises(StreamUnderrun):
        run_tile([[one]], [[one], [one]], 1, state)       # missing feed lane
    with pytest.raises(StreamUnderrun):
        run_tile([[one], [one]], [[one], [one]], 2, state)  # short stream


def test_flush_drains_and_resets():
    prec = Precision.P16
    two = PackedElement(prec, (2,))
    three = PackedElement(prec, (3,))
    state = SauState(tile_r=2, tile_c=2)
    state, _ = run_tile([[two], [three]], [[two], [three]], 1, state)
    drained, cycles = state.flush()
    assert drained == [[4, 6], [6, 9]]
    assert cycles == state.tile_c
    assert state.acc_grid == [[0, 0], [0, 0]]
    assert state.output_q.pushed == 4


# --- operand request priority -----------------------------------------------------

def test_request_operands_priority():
    order = request_operands(SauState(), {
        "input": ["i0", "i1"], "weight": ["w0", "w1"], "acc": ["a0"]})
    assert order == [("acc", "a0"), ("weight", "w0"), ("weight", "w1"),
                     ("input", "i0"), ("input", "i1")]


def test_request_operands_empty_classes():
    assert request_operands(SauState(), {}) == []
    assert request_operands(SauState(), {"input": ["i0"]}) == [("input", "i0")]


def test_parallelism_dims():
    from vsasim.vcore import MachineConfig
    cfg = MachineConfig()
    assert parallelism_dims(cfg, Precision.P4) == {"ic": 16, "oc": 4, "fh": 4}
    assert parallelism_dims(cfg, Precision.P16) == {"ic": 1, "oc": 4, "fh": 4}
