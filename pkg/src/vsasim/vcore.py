"""Vector core model: machine config, VRF, external memory, execution, timing.

Cycle model (one number per instruction, charged by CostTracker):
  vsacfg / vsetcfg    1
  vsald               mem_latency + ceil(count * element_bits / mem_bw_bits)
  vle / vse           mem_latency + ceil(count * width_bits / mem_bw_bits)
                      (width_bits = 32 when the w32 flag is set)
  vsam                (tile_r + tile_c - 1) + steps
  accumulator flush   tile_c, charged when a vsam opens a different
                      (acc_addr, acc_slot) chain, before a vse, or at run end
  accumulator refill  tile_r, charged when an opening vsam asks for its
                      partial sums back from the VRF (acc_init).

The planner and the executor charge costs through the same CostTracker, so a
schedule's estimated cycle count equals the simulated one by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from .errors import (IllegalInstruction, OutOfBounds, ParseError,
                     UnconfiguredPrecision)
from .isa import (DataflowMode, Instruction, Precision, VsaCfg, VsaLd, VsaM,
                  Vse, VSetCfg, Vle)


@dataclass(frozen=True)
class MachineConfig:
    lanes: int = 4
    vlen_bits: int = 4096
    num_regs: int = 32
    mem_bw_bits: int = 128
    mem_latency: int = 4
    freq_mhz: int = 500
    tile_r: int = 4
    tile_c: int = 4
    area_mm2: float = 0.0  # optional, user-supplied; enables GOPS/mm^2

    def __post_init__(self):
        if self.lanes < 1:
            raise ValueError("lanes must be >= 1")
        if self.vlen_bits % (self.lanes * 8):
            raise ValueError("vlen_bits must split into whole bytes per lane")
        if self.reg_bits % 64:
            raise ValueError("per-lane register must hold whole 64-bit elements")
        for f in ("num_regs", "mem_bw_bits", "mem_latency", "freq_mhz",
                  "tile_r", "tile_c"):
            if getattr(self, f) < 1:
                raise ValueError(f"{f} must be >= 1")

    @property
    def reg_bits(self) -> int:
        return self.vlen_bits // self.lanes

    @property
    def reg_bytes(self) -> int:
        return self.reg_bits // 8

    def elems_per_reg(self, precision: Precision) -> int:
        return self.reg_bits // precision.element_bits

    @classmethod
    def from_file(cls, path: str) -> "MachineConfig":
        kwargs = {}
        valid = set(cls.__dataclass_fields__)
        with open(path) as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ParseError(lineno, f"expected key=value, got {line!r}")
                key, _, val = line.partition("=")
                key = key.strip()
                if key not in valid:
                    raise ParseError(lineno, f"unknown config key {key!r}")
                cast = float if key == "area_mm2" else int
                try:
                    kwargs[key] = cast(val.strip())
                except ValueError:
                    raise ParseError(lineno,
                                     f"bad number for {key}: {val.strip()!r}")
        return cls(**kwargs)


def theoretical_peak_gops(cfg: MachineConfig, precision: Precision) -> float:
    """2 ops per MAC, all lanes and PEs busy every cycle."""
    macs = cfg.lanes * cfg.tile_r * cfg.tile_c * precision.ic_par
    return 2 * macs * cfg.freq_mhz / 1000.0


# ---------------------------------------------------------------------------
# packed element codec

def decode_elements(buf: np.ndarray, precision: Precision) -> np.ndarray:
    """uint8 buffer -> (n_elems, ic_par) int32 operand matrix."""
    eb = precision.element_bits // 8
    if len(buf) % eb:
        raise ValueError("buffer is not a whole number of elements")
    if precision is Precision.P16:
        return buf.view("<i2").astype(np.int32).reshape(-1, 1)
    if precision is Precision.P8:
        return buf.view(np.int8).astype(np.int32).reshape(-1, 4)
    # 4-bit: two operands per byte, low nibble first
    b = buf.astype(np.int32)
    lo = ((b & 0xF) ^ 8) - 8
    hi = ((b >> 4) ^ 8) - 8
    ops = np.stack([lo, hi], axis=-1).reshape(-1, 16)
    return ops


def encode_elements(ops: np.ndarray, precision: Precision) -> np.ndarray:
    """(n_elems, ic_par) int operands -> uint8 buffer. Inverse of decode."""
    ops = np.asarray(ops, dtype=np.int64)
    if ops.ndim != 2 or ops.shape[1] != precision.ic_par:
        raise ValueError(f"expected (n, {precision.ic_par}) operands")
    if ops.size and (ops.min() < precision.lo or ops.max() > precision.hi):
        raise OutOfBounds(f"operand outside {precision.name} range")
    if precision is Precision.P16:
        return ops.astype("<i2").tobytes()
    if precision is Precision.P8:
        return ops.astype(np.int8).tobytes()
    flat = ops.reshape(-1, 2)
    byte = (flat[:, 0] & 0xF) | ((flat[:, 1] & 0xF) << 4)
    return byte.astype(np.uint8).tobytes()


# ---------------------------------------------------------------------------
# storage

class ExternalMemory:
    """Flat byte-addressed scratch memory behind the load/store unit."""

    def __init__(self, size: int = 1 << 26):
        self.size = size
        self.data = np.zeros(size, dtype=np.uint8)

    def _check(self, addr: int, nbytes: int):
        if addr < 0 or addr + nbytes > self.size:
            raise OutOfBounds(f"memory access [{addr}, {addr + nbytes}) "
                              f"outside size {self.size}")

    def read(self, addr: int, nbytes: int) -> np.ndarray:
        self._check(addr, nbytes)
        return self.data[addr:addr + nbytes].copy()

    def write(self, addr: int, buf):
        buf = np.frombuffer(bytes(buf), dtype=np.uint8)
        self._check(addr, len(buf))
        self.data[addr:addr + len(buf)] = buf


class Vrf:
    """Per-lane vector register file, byte granular."""

    def __init__(self, cfg: MachineConfig):
        self.cfg = cfg
        self.lane_bytes = cfg.num_regs * cfg.reg_bytes
        self.data = np.zeros((cfg.lanes, self.lane_bytes), dtype=np.uint8)

    def _off(self, reg: int, byte_off: int, nbytes: int) -> int:
        base = reg * self.cfg.reg_bytes + byte_off
        if reg < 0 or reg >= self.cfg.num_regs or byte_off < 0:
            raise OutOfBounds(f"register v{reg} offset {byte_off}")
        if base + nbytes > self.lane_bytes:
            raise OutOfBounds(
                f"v{reg}+{byte_off}..+{nbytes} runs past the register file")
        return base

    def read(self, lane: int, reg: int, byte_off: int, nbytes: int) -> np.ndarray:
        base = self._off(reg, byte_off, nbytes)
        return self.data[lane, base:base + nbytes].copy()

    def write(self, lane: int, reg: int, byte_off: int, buf):
        buf = np.frombuffer(bytes(buf), dtype=np.uint8)
        base = self._off(reg, byte_off, len(buf))
        self.data[lane, base:base + len(buf)] = buf

    def write_all_lanes(self, reg: int, byte_off: int, buf):
        buf = np.frombuffer(bytes(buf), dtype=np.uint8)
        base = self._off(reg, byte_off, len(buf))
        self.data[:, base:base + len(buf)] = buf

    def clear(self, lane: int, reg: int, byte_off: int, nbytes: int):
        base = self._off(reg, byte_off, nbytes)
        self.data[lane, base:base + nbytes] = 0


# ---------------------------------------------------------------------------
# side-band program metadata

class LoadMeta(NamedTuple):
    """Memory address, role tag and VRF placement for a vsald / vle / vse.

    dst_offset is the per-lane byte offset from the start of the named
    register (loads may land mid-region when a buffer is filled in chunks).
    """

    addr: int
    tag: str = "input"  # input | weight | out
    dst_offset: int = 0


class TileDesc(NamedTuple):
    """Gather geometry for one vsam, produced by the schedule stage.

    The hardware drives its address cursors from tiling registers written by
    the scalar core; here the schedule stage hands the resolved geometry over
    directly.  `geom` is a zero-argument callable returning

        in_index: (tile_r, steps) element slots relative to register vs1
        w_index:  (tile_c, steps) element slots relative to register vs2

    where slot -1 feeds a zero element (boundary padding).  It is only
    evaluated on the functional path; timing never touches it.

    acc_slot:   logical chain id; a vsam naming a new (acc_addr, acc_slot)
                forces a flush of the currently open chain
    acc_offset: int32 slot inside register acc_addr where the flushed
                tile lands, row major
    acc_init:   reload the grid from that VRF location when the chain opens
                (multi-stage partial sums); costs tile_r cycles
    """

    geom: object
    acc_slot: tuple = (0,)
    acc_offset: int = 0
    acc_init: bool = False


class Step(NamedTuple):
    instr: Instruction
    meta: object = None


# ---------------------------------------------------------------------------
# timing

LOAD_CATEGORY = {"input": "load_input", "weight": "load_weight",
                 "out": "store"}


class CostTracker:
    """Charges the cycle model over a Step stream; executor and planner share it."""

    def __init__(self, cfg: MachineConfig):
        self.cfg = cfg
        self.cycles = 0
        self.by_category: dict = {}
        self.precision: Optional[Precision] = None
        self.open_chain = None  # (acc_addr, acc_slot) or None

    def _add(self, category: str, n: int):
        self.cycles += n
        self.by_category[category] = self.by_category.get(category, 0) + n

    def _transfer(self, count: int, width_bits: int) -> int:
        return self.cfg.mem_latency + math.ceil(count * width_bits
                                                / self.cfg.mem_bw_bits)

    def _flush(self):
        if self.open_chain is not None:
            self._add("flush", self.cfg.tile_c)
            self.open_chain = None

    def charge(self, step: Step) -> int:
        before = self.cycles
        ins, meta = step
        t = type(ins)
        cfg = self.cfg
        bw = cfg.mem_bw_bits
        if t is VsaLd:
            if self.precision is None:
                raise UnconfiguredPrecision("vsald before vsacfg")
            tag = meta.tag if type(meta) is LoadMeta else "input"
            bits = ins.count_elems * self.precision.element_bits
            self._add(LOAD_CATEGORY[tag],
                      cfg.mem_latency + -(-bits // bw))
        elif t is VsaM:
            key = (ins.acc_addr,
                   meta.acc_slot if type(meta) is TileDesc else None)
            if self.open_chain != key:
                if self.open_chain is not None:
                    self._add("flush", cfg.tile_c)
                if type(meta) is TileDesc and meta.acc_init:
                    self._add("refill", cfg.tile_r)
                self.open_chain = key
            self._add("compute", cfg.tile_r + cfg.tile_c - 1 + ins.steps)
        elif t is Vle:
            if self.precision is None and not ins.w32:
                raise UnconfiguredPrecision("vle before vsacfg")
            width = 32 if ins.w32 else self.precision.element_bits
            tag = meta.tag if type(meta) is LoadMeta else "input"
            self._add(LOAD_CATEGORY[tag],
                      cfg.mem_latency + -(-ins.count_elems * width // bw))
        elif t is Vse:
            self._flush()
            if self.precision is None and not ins.w32:
                raise UnconfiguredPrecision("vse before vsacfg")
            width = 32 if ins.w32 else self.precision.element_bits
            self._add("store",
                      cfg.mem_latency + -(-ins.count_elems * width // bw))
        elif t is VsaCfg:
            self.precision = ins.precision
            self._add("config", 1)
        elif t is VSetCfg:
            self._add("config", 1)
        else:
            raise IllegalInstruction(f"unhandled {t.__name__}")
        return self.cycles - before

    def finish(self) -> int:
        before = self.cycles
        self._flush()
        return self.cycles - before


def estimate_cycles(cfg: MachineConfig, program: list) -> dict:
    """Run only the cost model over a program. Same numbers as simulation."""
    t = CostTracker(cfg)
    for step in program:
        t.charge(step)
    t.finish()
    return {"cycles": t.cycles, "by_category": dict(t.by_category)}


# ---------------------------------------------------------------------------
# execution

@dataclass
class MachineState:
    cfg: MachineConfig
    mem: ExternalMemory = None
    vrf: Vrf = None
    precision: Optional[Precision] = None
    dataflow: Optional[DataflowMode] = None
    vl: int = 0
    # one physical accumulator grid per lane
    acc: np.ndarray = None
    open_chain: tuple = None
    open_acc_addr: int = 0
    open_acc_offset: int = 0

    def __post_init__(self):
        if self.mem is None:
            self.mem = ExternalMemory()
        if self.vrf is None:
            self.vrf = Vrf(self.cfg)
        if self.acc is None:
            self.acc = np.zeros(
                (self.cfg.lanes, self.cfg.tile_r, self.cfg.tile_c),
                dtype=np.int64)


def _wrap32_array(a: np.ndarray) -> np.ndarray:
    return (a & 0xFFFFFFFF).astype(np.uint32).astype(np.int32)


def _flush_state(st: MachineState):
    """Write back the open accumulator grid (32-bit wrapped) and clear it."""
    if st.open_chain is None:
        return
    vals = _wrap32_array(st.acc)  # (lanes, tile_r, tile_c)
    flat = vals.reshape(st.cfg.lanes, -1)
    off = st.open_acc_offset * 4
    for lane in range(st.cfg.lanes):
        st.vrf.write(lane, st.open_acc_addr, off, flat[lane].astype("<i4").tobytes())
    st.acc[:] = 0
    st.open_chain = None


def exec_vsacfg(st: MachineState, ins: VsaCfg):
    _flush_state(st)
    st.precision = ins.precision
    st.dataflow = ins.dataflow


def exec_vsetcfg(st: MachineState, ins: VSetCfg):
    st.vl = ins.vl


def _need_precision(st: MachineState) -> Precision:
    if st.precision is None:
        raise UnconfiguredPrecision("precision not set; issue vsacfg first")
    return st.precision


def exec_vsald(st: MachineState, ins: VsaLd, meta: LoadMeta):
    prec = _need_precision(st)
    nbytes = ins.count_elems * prec.element_bits // 8
    if nbytes > st.cfg.reg_bytes:
        raise OutOfBounds("vsald longer than one register")
    buf = st.mem.read(meta.addr, nbytes)
    st.vrf.write_all_lanes(ins.vd, meta.dst_offset, buf.tobytes())


def _vle_width_bytes(st: MachineState, w32: bool) -> int:
    return 4 if w32 else _need_precision(st).element_bits // 8


def exec_vle(st: MachineState, ins: Vle, meta: LoadMeta):
    wb = _vle_width_bytes(st, ins.w32)
    buf = st.mem.read(meta.addr, ins.count_elems * wb)
    L = st.cfg.lanes
    for lane in range(L):
        chunk = buf.reshape(-1, wb)[lane::L]
        if len(chunk):
            st.vrf.write(lane, ins.vd, meta.dst_offset, chunk.tobytes())


def exec_vse(st: MachineState, ins: Vse, meta: LoadMeta):
    _flush_state(st)
    wb = _vle_width_bytes(st, ins.w32)
    L = st.cfg.lanes
    out = np.zeros((ins.count_elems, wb), dtype=np.uint8)
    for lane in range(L):
        n = len(out[lane::L])
        if n:
            out[lane::L] = st.vrf.read(lane, ins.vs, 0, n * wb).reshape(-1, wb)
            st.vrf.clear(lane, ins.vs, 0, n * wb)  # move-out semantics
    st.mem.write(meta.addr, out.tobytes())


def _gather(ops: np.ndarray, index: np.ndarray) -> np.ndarray:
    """Rows of `ops` selected by `index`; -1 selects the zero element."""
    safe = np.where(index < 0, 0, index)
    picked = ops[safe]
    picked[index < 0] = 0
    return picked


def exec_vsam(st: MachineState, ins: VsaM, meta: TileDesc):
    prec = _need_precision(st)
    key = (ins.acc_addr, meta.acc_slot)
    opening = st.open_chain != key
    if st.open_chain is not None and opening:
        _flush_state(st)
    st.open_chain = key
    st.open_acc_addr = ins.acc_addr
    st.open_acc_offset = meta.acc_offset
    if opening and meta.acc_init:
        off = meta.acc_offset * 4
        n = st.cfg.tile_r * st.cfg.tile_c
        for lane in range(st.cfg.lanes):
            prev = st.vrf.read(lane, ins.acc_addr, off, n * 4).view("<i4")
            st.acc[lane] = prev.astype(np.int64).reshape(
                st.cfg.tile_r, st.cfg.tile_c)

    raw_in, raw_w = meta.geom()
    in_idx = np.asarray(raw_in, dtype=np.int64)
    w_idx = np.asarray(raw_w, dtype=np.int64)
    eb = prec.element_bits // 8
    for idx, reg in ((in_idx, ins.vs1), (w_idx, ins.vs2)):
        hi = int(idx.max()) + 1 if idx.size else 0
        if reg * st.cfg.reg_bytes + hi * eb > st.vrf.lane_bytes:
            raise OutOfBounds("vsam gather runs past the register file")
    if in_idx.shape != (st.cfg.tile_r, ins.steps) or \
            w_idx.shape != (st.cfg.tile_c, ins.steps):
        raise IllegalInstruction("vsam gather shape does not match steps")
    n_in = max(1, int(in_idx.max()) + 1)
    n_w = max(1, int(w_idx.max()) + 1)
    a = np.empty((st.cfg.lanes, st.cfg.tile_r, ins.steps, prec.ic_par),
                 dtype=np.int64)
    w = np.empty((st.cfg.lanes, st.cfg.tile_c, ins.steps, prec.ic_par),
                 dtype=np.int64)
    for lane in range(st.cfg.lanes):
        in_ops = decode_elements(
            st.vrf.read(lane, ins.vs1, 0, n_in * eb), prec).astype(np.int64)
        w_ops = decode_elements(
            st.vrf.read(lane, ins.vs2, 0, n_w * eb), prec).astype(np.int64)
        a[lane] = _gather(in_ops, in_idx)
        w[lane] = _gather(w_ops, w_idx)
    st.acc += np.einsum("lrsk,lcsk->lrc", a, w)


@dataclass
class RunResult:
    cycles: int
    by_category: dict
    trace: list = field(default_factory=list)


def run(st: MachineState, program: list, functional: bool = True,
        trace: bool = False) -> RunResult:
    """Execute a Step stream. With functional=False only timing is modeled."""
    tracker = CostTracker(st.cfg)
    events = []
    for pc, step in enumerate(program):
        cyc = tracker.charge(step)
        if functional:
            ins, meta = step.instr, step.meta
            if isinstance(ins, VsaCfg):
                exec_vsacfg(st, ins)
            elif isinstance(ins, VSetCfg):
                exec_vsetcfg(st, ins)
            elif isinstance(ins, VsaLd):
                exec_vsald(st, ins, meta)
            elif isinstance(ins, Vle):
                exec_vle(st, ins, meta)
            elif isinstance(ins, Vse):
                exec_vse(st, ins, meta)
            elif isinstance(ins, VsaM):
                exec_vsam(st, ins, meta)
            else:
                raise IllegalInstruction(f"unhandled {type(ins).__name__}")
        if trace:
            events.append((pc, step.instr, cyc))
    tracker.finish()
    if functional:
        _flush_state(st)
    return RunResult(tracker.cycles, dict(tracker.by_category), events)
