"""Convolution dataflow planning: packing, FF/CF schedules, lowering, selection.

Two schedule families share one machine cost model (vcore.CostTracker):

FF (feature-map-first): per output-row block and output-column tile, input
channel groups are processed as separate stages.  Each stage broadcasts one
spatial patch covering several packed channels, streams k*k positions per
output column, and parks 32-bit partial sums in a VRF accumulator arena
between stages (flush + refill).  The patch is reused by every output-channel
group and every column of the tile, which is where the window-overlap reuse
comes from.

CF (channel-first): per output column, the whole input-channel extent is
chained inside the SAU accumulators, so partial sums never touch the VRF and
each (group, column) tile is written back exactly once.  Inputs are fetched
along the channel dimension at single window granularity; weights are kept
VRF-resident per output-channel group when they fit (cases A/B below) and
re-streamed per column otherwise (case C).

Per-lane register arenas (regs of cfg.reg_bits each):
  FF: acc | patch | weights, sized by _ff_regions; the whole arena counts as
      the plan's VRF footprint since it is reserved for the layer's duration.
  CF: v0 accumulator landing slot, v1.. window buffer (8 regs),
      then weight residence (12 regs).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import Infeasible, ShapeMismatch
from .isa import DataflowMode, Precision, VsaCfg, VsaLd, VsaM, Vse, VSetCfg, Vle
from .vcore import (CostTracker, ExternalMemory, LoadMeta, MachineConfig,
                    MachineState, Step, TileDesc, encode_elements, run)

CF_IN_REGS = 8
CF_WT_REGS = 12
CF_D_ACC_REGS = 9
VSAM_MAX_STEPS = 128
VLE_MAX = 2047
VSALD_MAX = 4095


# ---------------------------------------------------------------------------
# layer geometry

@dataclass(frozen=True)
class LayerSpec:
    name: str
    cin: int
    cout: int
    k: int
    h: int
    w: int
    stride: int = 1
    pad: int = 0

    def __post_init__(self):
        if min(self.cin, self.cout, self.k, self.h, self.w, self.stride) < 1:
            raise ShapeMismatch(f"{self.name}: non-positive dimension")
        if self.pad < 0:
            raise ShapeMismatch(f"{self.name}: negative padding")
        if self.oh < 1 or self.ow < 1:
            raise ShapeMismatch(f"{self.name}: empty output map")

    @property
    def oh(self) -> int:
        return (self.h + 2 * self.pad - self.k) // self.stride + 1

    @property
    def ow(self) -> int:
        return (self.w + 2 * self.pad - self.k) // self.stride + 1

    def macs(self) -> int:
        return self.oh * self.ow * self.cout * self.cin * self.k * self.k


def pack_tensor(values: np.ndarray, precision: Precision) -> np.ndarray:
    """(c, h, w) -> (cg, h, w, ic_par) with channels zero-padded to ic_par."""
    values = np.asarray(values)
    if values.ndim != 3:
        raise ShapeMismatch("expected a (c, h, w) tensor")
    c, h, w = values.shape
    icp = precision.ic_par
    cg = -(-c // icp)
    out = np.zeros((cg * icp, h, w), dtype=np.int64)
    out[:c] = values
    return out.reshape(cg, icp, h, w).transpose(0, 2, 3, 1)


def unpack_tensor(packed: np.ndarray, c: int) -> np.ndarray:
    cg, h, w, icp = packed.shape
    return packed.transpose(0, 3, 1, 2).reshape(cg * icp, h, w)[:c]


def pack_weights(values: np.ndarray, precision: Precision) -> np.ndarray:
    """(cout, cin, k, k) -> (cout, cg, k, k, ic_par)."""
    values = np.asarray(values)
    if values.ndim != 4:
        raise ShapeMismatch("expected (cout, cin, k, k) weights")
    cout, cin, k = values.shape[0], values.shape[1], values.shape[2]
    icp = precision.ic_par
    cg = -(-cin // icp)
    out = np.zeros((cout, cg * icp, k, k), dtype=np.int64)
    out[:, :cin] = values
    return out.reshape(cout, cg, icp, k, k).transpose(0, 1, 3, 4, 2)


def requantize(acc: np.ndarray, precision: Precision, shift: int) -> np.ndarray:
    """Arithmetic right shift, then clamp to the precision's signed range."""
    if not 0 <= shift < 32:
        raise ValueError("shift must be in [0, 32)")
    acc = np.asarray(acc, dtype=np.int64)
    return np.clip(acc >> shift, precision.lo, precision.hi)


def default_shift(layer: LayerSpec, precision: Precision) -> int:
    """Deterministic per-layer shift: log2 of the accumulation depth minus
    the output headroom, floored at zero."""
    depth = layer.cin * layer.k * layer.k
    return max(0, depth.bit_length() - 1 + precision.bits - 8)


def ff_patch_overlap(patch_h: int, patch_w: int, k: int, stride: int) -> int:
    """Elements shared by two horizontally adjacent FF patches.

    The next patch origin advances by stride * (output columns per patch),
    so patch_h=patch_w=4, k=3, stride=1 gives a 4 x 2 = 8 element overlap.
    """
    out_cols = (patch_w - k) // stride + 1
    if out_cols < 1:
        return 0
    return patch_h * max(0, patch_w - stride * out_cols)


# ---------------------------------------------------------------------------
# schedule bookkeeping

@dataclass(frozen=True)
class Stage:
    desc: str
    prefetch: tuple          # ((tag, elems), ...)
    n_chains: int
    reuse_from_prev: tuple = ()


@dataclass
class Schedule:
    strategy: DataflowMode
    stages: list
    tile_h: int
    est_cycles: int = 0
    by_category: dict = field(default_factory=dict)
    vrf_peak_bits: int = 0
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class OutRec:
    """One vse block in the output region: enough to invert lane round-robin."""

    addr: int
    n_int32: int
    kind: str                # ff | cf
    yb: int
    g_lo: int
    xb: int = 0
    x_t: int = 1             # ff tile width; cf stores x here via xb


@dataclass
class Plan:
    layer: LayerSpec
    precision: Precision
    cfg: MachineConfig
    strategy: DataflowMode
    schedule: Schedule
    steps: object            # () -> iterator of Step
    out_records: list = field(default_factory=list)
    in_base: int = 0
    wt_base: int = 0
    out_base: int = 0
    mem_bytes: int = 0
    wt_layout: dict = field(default_factory=dict)

    @property
    def est_cycles(self) -> int:
        return self.schedule.est_cycles


def _cost(cfg: MachineConfig, steps_iter) -> tuple[int, dict]:
    t = CostTracker(cfg)
    for step in steps_iter:
        t.charge(step)
    t.finish()
    return t.cycles, dict(t.by_category)


# ---------------------------------------------------------------------------
# shared emission helpers

def _emit_vsald_run(vd, addr, total, eby, spr, dst_slot, tag):
    """Chunked broadcast load of `total` contiguous elements."""
    done = 0
    while done < total:
        n = min(spr, VSALD_MAX, total - done)
        yield Step(VsaLd(vd, 1, n),
                   LoadMeta(addr + done * eby, tag, (dst_slot + done) * eby))
        done += n


def _emit_vle_run(cfg, reg, addr, total, eby, tag, dst_slot=0):
    """Chunked round-robin load; chunks stay lane-aligned."""
    chunk = cfg.lanes * (VLE_MAX // cfg.lanes)
    done = 0
    while done < total:
        n = min(chunk, total - done)
        yield Step(Vle(reg, 1, n),
                   LoadMeta(addr + done * eby, tag,
                            (dst_slot + done // cfg.lanes) * eby))
        done += n


def _emit_vse_run(cfg, base_reg, addr, total_i32):
    """Chunked 32-bit store of a contiguous accumulator region."""
    per_lane_reg = cfg.reg_bytes // 4
    chunk_regs = max(1, (VLE_MAX // cfg.lanes) // per_lane_reg)
    chunk = chunk_regs * per_lane_reg * cfg.lanes
    done = 0
    reg = base_reg
    while done < total_i32:
        n = min(chunk, total_i32 - done)
        yield Step(Vse(reg, 1, n, w32=True), LoadMeta(addr + done * 4, "out"))
        reg += chunk_regs
        done += n


def _emit_chain(vs1, vs2, acc_addr, acc_slot, acc_offset, acc_init,
                in_full, w_full):
    """Split one accumulation chain into <=128-step vsam instructions.

    in_full/w_full are callables returning the full (rows, S) index arrays;
    evaluation stays lazy so the timing-only path never builds them.
    """
    s_total = w_full.steps
    s0 = 0
    while s0 < s_total:
        n = min(VSAM_MAX_STEPS, s_total - s0)
        geom = _GeomSlice(in_full, w_full, s0, n)
        yield Step(VsaM(vs1, vs2, acc_addr, n),
                   TileDesc(geom, acc_slot, acc_offset, acc_init))
        s0 += n


class _GeomSlice:
    """Lazy [s0, s0+n) slice over a chain's gather geometry."""

    __slots__ = ("in_full", "w_full", "s0", "n")

    def __init__(self, in_full, w_full, s0, n):
        self.in_full = in_full
        self.w_full = w_full
        self.s0 = s0
        self.n = n

    def __call__(self):
        sl = slice(self.s0, self.s0 + self.n)
        return self.in_full()[:, sl], self.w_full()[:, sl]


class _FFInGeom:
    """FF gather: patch layout (cgl, patch_row, col), -1 outside the image."""

    __slots__ = ("steps", "lay", "cb", "xl")

    def __init__(self, lay, cb, xl):
        self.steps = cb * lay["k"] * lay["k"]
        self.lay = lay
        self.cb = cb
        self.xl = xl

    def __call__(self):
        lay = self.lay
        k = lay["k"]
        s = np.arange(self.steps)
        cgl, ky, kx = s // (k * k), (s // k) % k, s % k
        r = np.arange(lay["R"])[:, None]
        pr = r * lay["stride"] + ky[None, :]
        col = kx[None, :] + self.xl * lay["stride"]
        idx = (cgl[None, :] * lay["ih"] + pr) * lay["iw"] + col
        y = lay["y0"] + pr
        x = lay["x0"] + col
        bad = (y < 0) | (y >= lay["H"]) | (x < 0) | (x >= lay["W"])
        idx = np.where(bad, -1, idx)
        return idx


class _FFWGeom:
    """FF weights per lane: (col, cgl, ky, kx) row-major."""

    __slots__ = ("steps", "C", "S")

    def __init__(self, C, steps):
        self.steps = steps
        self.C = C
        self.S = steps

    def __call__(self):
        c = np.arange(self.C)[:, None]
        s = np.arange(self.S)[None, :]
        return c * self.S + s


class _CFInGeom:
    """CF gather over a window segment laid out (pos, cgl), pos = pr*k + pc."""

    __slots__ = ("steps", "lay", "pos0")

    def __init__(self, lay, cb, pos0=0, npos=None):
        k = lay["k"]
        self.steps = cb * k * k if npos is None else npos
        self.pos0 = pos0
        self.lay = lay

    def __call__(self):
        lay = self.lay
        k = lay["k"]
        s = np.arange(self.pos0, self.pos0 + self.steps)
        cgl, ky, kx = s // (k * k), (s // k) % k, s % k
        r = np.arange(lay["R"])[:, None]
        pr = r * lay["stride"] + ky[None, :]
        pc = kx[None, :]
        idx = (pr * k + pc) * lay["cb"] + cgl[None, :]
        y = lay["y0"] + pr
        x = lay["x0"] + pc
        bad = (y < 0) | (y >= lay["H"]) | (x < 0) | (x >= lay["W"])
        return np.where(bad, -1, idx)


class _CFWGeom:
    """CF weights per lane: slot = base + (col*span + cgl)*k*k + ky*k + kx."""

    __slots__ = ("steps", "C", "k", "cb", "span", "base", "cg0")

    def __init__(self, C, k, cb, span, base, cg0):
        self.steps = cb * k * k
        self.C = C
        self.k = k
        self.cb = cb
        self.span = span
        self.base = base
        self.cg0 = cg0

    def __call__(self):
        s = np.arange(self.steps)[None, :]
        cgl = s // (self.k * self.k)
        kk = s % (self.k * self.k)
        c = np.arange(self.C)[:, None]
        return self.base + (c * self.span + self.cg0 + cgl) * \
            (self.k * self.k) + kk


# ---------------------------------------------------------------------------
# FF planner

def _ff_regions(cfg: MachineConfig, layer: LayerSpec, prec: Precision,
                patch_pref: int = 8, wt_pref: int = 8) -> dict:
    spr = cfg.reg_bits // prec.element_bits
    ih = (cfg.tile_r - 1) * layer.stride + layer.k
    arena = cfg.num_regs - 2
    wt_regs = min(wt_pref, arena - 3)
    wt_one = -(-cfg.tile_c * layer.k * layer.k * prec.element_bits
               // cfg.reg_bits)
    wt_regs = max(wt_regs, wt_one)
    patch_regs = min(patch_pref, arena - wt_regs - 1)
    patch_min = -(-ih * layer.k * prec.element_bits // cfg.reg_bits)
    patch_regs = max(patch_regs, patch_min)
    acc_regs = arena - wt_regs - patch_regs
    tile_bits = cfg.tile_r * cfg.tile_c * 32
    if acc_regs < 1 or acc_regs * cfg.reg_bits < tile_bits:
        raise Infeasible(f"{layer.name}: register file too small for FF")
    return {"spr": spr, "ih": ih,
            "acc_regs": acc_regs, "patch_regs": patch_regs,
            "wt_regs": wt_regs, "acc_base": 0, "patch_base": acc_regs,
            "wt_base": acc_regs + patch_regs,
            "acc_tiles": acc_regs * cfg.reg_bits // tile_bits}


def _ff_params(cfg, layer, prec, regions, g_t):
    spr, ih = regions["spr"], regions["ih"]
    k, s = layer.k, layer.stride
    patch_elems = regions["patch_regs"] * spr
    x_geom = (patch_elems // ih - k) // s + 1
    x_t = min(layer.ow, regions["acc_tiles"] // g_t, max(0, x_geom))
    if x_t < 1:
        return None
    iw = (x_t - 1) * s + k
    cg_total = -(-layer.cin // prec.ic_par)
    cgb = min(cg_total, patch_elems // (ih * iw),
              regions["wt_regs"] * spr // (cfg.tile_c * k * k))
    if cgb < 1:
        return None
    return {"x_t": x_t, "g_t": g_t, "iw": iw, "cgb": cgb, "cg": cg_total,
            "G": -(-layer.cout // (cfg.lanes * cfg.tile_c))}


def _ff_blocks(layer, cfg, p):
    R = cfg.tile_r
    yB = -(-layer.oh // R)
    xB = -(-layer.ow // p["x_t"])
    for yb in range(yB):
        for xb in range(xB):
            x_count = min(p["x_t"], layer.ow - xb * p["x_t"])
            for g_lo in range(0, p["G"], p["g_t"]):
                ng = min(p["g_t"], p["G"] - g_lo)
                yield yb, xb, x_count, g_lo, ng


def _ff_wt_offsets(layer, cfg, p, prec):
    """Element offset of each (g, channel-block) weight block in the image."""
    k = layer.k
    per_block = cfg.lanes * cfg.tile_c * k * k
    offs = {}
    cur = 0
    for g in range(p["G"]):
        for ci, cg0 in enumerate(range(0, p["cg"], p["cgb"])):
            cb = min(p["cgb"], p["cg"] - cg0)
            offs[(g, ci)] = cur
            cur += per_block * cb
    return offs, cur


def _ff_steps(layer, cfg, prec, regions, p, bases, wt_offs):
    eby = prec.element_bits // 8
    spr = regions["spr"]
    R, C, L = cfg.tile_r, cfg.tile_c, cfg.lanes
    k, s, H, W = layer.k, layer.stride, layer.h, layer.w
    ih, iw = regions["ih"], p["iw"]
    in_base, wt_base, out_base = bases
    tile_i32 = R * C

    def gen():
        yield Step(VsaCfg(prec, DataflowMode.FF))
        yield Step(VSetCfg(spr))
        out_cur = out_base
        for yb, xb, x_count, g_lo, ng in _ff_blocks(layer, cfg, p):
            y0 = yb * R * s - layer.pad
            x0 = xb * p["x_t"] * s - layer.pad
            for ci, cg0 in enumerate(range(0, p["cg"], p["cgb"])):
                cb = min(p["cgb"], p["cg"] - cg0)
                # patch prefetch: one broadcast run per packed channel row
                for cgl in range(cb):
                    for pr in range(ih):
                        y = y0 + pr
                        if not 0 <= y < H:
                            continue
                        cs = max(0, -x0)
                        ce = min(iw, W - x0)
                        if ce <= cs:
                            continue
                        addr = in_base + (((cg0 + cgl) * H + y) * W
                                          + x0 + cs) * eby
                        slot = (cgl * ih + pr) * iw + cs
                        yield from _emit_vsald_run(
                            regions["patch_base"], addr, ce - cs, eby, spr,
                            slot, "input")
                lay = {"R": R, "k": k, "stride": s, "ih": ih, "iw": iw,
                       "y0": y0, "x0": x0, "H": H, "W": W}
                w_geom = _FFWGeom(C, cb * k * k)
                for g in range(g_lo, g_lo + ng):
                    wt_addr = wt_base + wt_offs[(g, ci)] * eby
                    yield from _emit_vle_run(
                        cfg, regions["wt_base"], wt_addr,
                        L * C * k * k * cb, eby, "weight")
                    for xl in range(x_count):
                        t = (g - g_lo) * p["x_t"] + xl
                        in_geom = _FFInGeom(lay, cb, xl)
                        yield from _emit_chain(
                            regions["patch_base"], regions["wt_base"],
                            regions["acc_base"], (yb, xb, g, xl),
                            t * tile_i32, ci > 0, in_geom, w_geom)
            n_i32 = ((ng - 1) * p["x_t"] + x_count) * tile_i32 * L
            yield from _emit_vse_run(cfg, regions["acc_base"], out_cur, n_i32)
            out_cur += n_i32 * 4
    return gen


# (patch_pref, wt_pref) arena splits the planner considers; the remainder
# of the arena is the accumulator region.
FF_ARENA_SPLITS = ((8, 8), (12, 10), (14, 9))


# Planning is deterministic in the layer shape, machine and precision, so
# repeated shapes (common inside CNNs) are planned once.
_PLAN_CACHE: dict = {}


def _cached_plan(kind, layer, cfg, precision, builder) -> Plan:
    key = (kind, layer.cin, layer.cout, layer.k, layer.stride, layer.pad,
           layer.h, layer.w, cfg, precision)
    hit = _PLAN_CACHE.get(key)
    if hit is None:
        try:
            hit = builder()
        except Infeasible as e:
            hit = e
        _PLAN_CACHE[key] = hit
    if isinstance(hit, Infeasible):
        msg = str(hit)
        reason = msg.split(": ", 1)[1] if ": " in msg else msg
        raise Infeasible(f"{layer.name}: {reason}")
    if hit.layer.name != layer.name:
        hit = replace(hit, layer=layer)
    return hit


def plan_ff(layer: LayerSpec, cfg: MachineConfig,
            precision: Precision) -> Plan:
    return _cached_plan("ff", layer, cfg, precision,
                        lambda: _plan_ff(layer, cfg, precision))


def _plan_ff(layer: LayerSpec, cfg: MachineConfig,
             precision: Precision) -> Plan:
    G = -(-layer.cout // (cfg.lanes * cfg.tile_c))
    best = None
    seen = set()
    for patch_pref, wt_pref in FF_ARENA_SPLITS:
        try:
            regions = _ff_regions(cfg, layer, precision,
                                  patch_pref, wt_pref)
        except Infeasible:
            continue
        key = (regions["acc_regs"], regions["patch_regs"],
               regions["wt_regs"])
        if key in seen:
            continue
        seen.add(key)
        cands = sorted({g_t for g_t in (1, 2, 4, G)
                        if 1 <= g_t <= min(G, regions["acc_tiles"])})
        for g_t in cands:
            p = _ff_params(cfg, layer, precision, regions, g_t)
            if p is None:
                continue
            bases, wt_offs, plan_sizes = _layout_ff(layer, cfg, precision, p)
            gen = _ff_steps(layer, cfg, precision, regions, p, bases,
                            wt_offs)
            cycles, by_cat = _cost(cfg, gen())
            if best is None or cycles < best[0]:
                best = (cycles, by_cat, regions, p, bases, wt_offs,
                        plan_sizes, gen)
    if best is None:
        raise Infeasible(f"{layer.name}: no feasible FF tiling")
    cycles, by_cat, regions, p, bases, wt_offs, sizes, gen = best
    sched = _ff_schedule(layer, cfg, precision, regions, p, cycles, by_cat)
    recs = _ff_out_records(layer, cfg, p, bases[2])
    return Plan(layer, precision, cfg, DataflowMode.FF, sched, gen,
                recs, bases[0], bases[1], bases[2], sizes, {"offs": wt_offs})


def _layout_ff(layer, cfg, prec, p):
    eby = prec.element_bits // 8
    in_bytes = p["cg"] * layer.h * layer.w * eby
    wt_offs, wt_elems = _ff_wt_offsets(layer, cfg, p, prec)
    wt_base = _align(in_bytes)
    out_base = _align(wt_base + wt_elems * eby)
    out_bytes = sum(((ng - 1) * p["x_t"] + xc) * cfg.tile_r * cfg.tile_c
                    * cfg.lanes * 4
                    for _, _, xc, _, ng in _ff_blocks(layer, cfg, p))
    return (0, wt_base, out_base), wt_offs, out_base + out_bytes


def _ff_out_records(layer, cfg, p, out_base):
    tile_i32 = cfg.tile_r * cfg.tile_c
    recs = []
    cur = out_base
    for yb, xb, x_count, g_lo, ng in _ff_blocks(layer, cfg, p):
        n = ((ng - 1) * p["x_t"] + x_count) * tile_i32 * cfg.lanes
        recs.append(OutRec(cur, n, "ff", yb, g_lo, xb, p["x_t"]))
        cur += n * 4
    return recs


def _ff_schedule(layer, cfg, prec, regions, p, cycles, by_cat):
    stages = []
    n_cgb = -(-p["cg"] // p["cgb"])
    for yb, xb, x_count, g_lo, ng in _ff_blocks(layer, cfg, p):
        for ci in range(n_cgb):
            cb = min(p["cgb"], p["cg"] - ci * p["cgb"])
            stages.append(Stage(
                f"y{yb} x{xb} g{g_lo}+{ng} ch{ci}",
                (("input", cb * regions["ih"] * p["iw"]),
                 ("weight", ng * cfg.lanes * cfg.tile_c
                  * layer.k * layer.k * cb)),
                ng * x_count,
                ("acc",) if ci > 0 else ()))
    peak = (regions["acc_regs"] + regions["patch_regs"]
            + regions["wt_regs"]) * cfg.reg_bits
    return Schedule(DataflowMode.FF, stages, cfg.tile_r, cycles, by_cat,
                    peak, dict(p))


def _align(n: int, a: int = 64) -> int:
    return (n + a - 1) // a * a


# ---------------------------------------------------------------------------
# CF planner

def _cf_case(layer, cfg, prec):
    spr = cfg.reg_bits // prec.element_bits
    cg = -(-layer.cin // prec.ic_par)
    ih = (cfg.tile_r - 1) * layer.stride + layer.k
    window = cg * ih * layer.k
    wt_g = cfg.tile_c * layer.k * layer.k * cg
    G = -(-layer.cout // (cfg.lanes * cfg.tile_c))
    if window <= CF_IN_REGS * spr and G * wt_g <= CF_WT_REGS * spr:
        return "A"
    if wt_g <= CF_WT_REGS * spr:
        return "B"
    return "C"


def _cf_block(layer, cfg, prec, case) -> int:
    """Channel-group block resident per chain segment."""
    spr = cfg.reg_bits // prec.element_bits
    ih = (cfg.tile_r - 1) * layer.stride + layer.k
    cg = -(-layer.cin // prec.ic_par)
    cb = min(cg, CF_IN_REGS * spr // (ih * layer.k))
    if cb < 1:
        raise Infeasible(f"{layer.name}: window row does not fit CF buffers")
    if case == "A":
        cb = cg
    elif case == "C":
        # When even one channel group's weight tile overflows the weight
        # buffer, keep cb=1 and split chains along kernel rows instead.
        cb_wt = CF_WT_REGS * spr // (cfg.tile_c * layer.k * layer.k)
        cb = min(cb, cb_wt) if cb_wt >= 1 else 1
    return cb


def _cf_order(layer, cfg, case):
    G = -(-layer.cout // (cfg.lanes * cfg.tile_c))
    yB = -(-layer.oh // cfg.tile_r)
    if case == "A":
        return [(yb, x, g) for yb in range(yB)
                for x in range(layer.ow) for g in range(G)]
    return [(yb, x, g) for g in range(G)
            for yb in range(yB) for x in range(layer.ow)]


def _cf_win_loads(layer, cfg, prec, in_reg, in_base, x, y0, cg0, cbn):
    """One output column's window segment, laid out (pos, cgl)."""
    eby = prec.element_bits // 8
    spr = cfg.reg_bits // prec.element_bits
    k, s, H, W = layer.k, layer.stride, layer.h, layer.w
    cg = -(-layer.cin // prec.ic_par)
    ih = (cfg.tile_r - 1) * s + k
    x0 = x * s - layer.pad
    for pr in range(ih):
        y = y0 + pr
        if not 0 <= y < H:
            continue
        if cbn == cg:
            # full channel runs are contiguous across valid columns
            cs = max(0, -x0)
            ce = min(k, W - x0)
            if ce <= cs:
                continue
            addr = in_base + ((y * W + x0 + cs) * cg) * eby
            slot = (pr * k + cs) * cbn
            yield from _emit_vsald_run(in_reg, addr, (ce - cs) * cbn,
                                       eby, spr, slot, "input")
        else:
            for pc in range(k):
                xx = x0 + pc
                if not 0 <= xx < W:
                    continue
                addr = in_base + ((y * W + xx) * cg + cg0) * eby
                slot = (pr * k + pc) * cbn
                yield from _emit_vsald_run(in_reg, addr, cbn, eby, spr,
                                           slot, "input")


def _cf_steps(layer, cfg, prec, case, bases):
    eby = prec.element_bits // 8
    spr = cfg.reg_bits // prec.element_bits
    R, C, L = cfg.tile_r, cfg.tile_c, cfg.lanes
    k, s, H, W = layer.k, layer.stride, layer.h, layer.w
    cg = -(-layer.cin // prec.ic_par)
    ih = (R - 1) * s + layer.k
    G = -(-layer.cout // (L * C))
    in_base, wt_base, out_base = bases
    acc_reg, in_reg, wt_reg = 0, 1, 1 + CF_IN_REGS
    tile_i32 = R * C
    wt_g_elems = C * k * k * cg
    cb = _cf_block(layer, cfg, prec, case)
    wt_cap = CF_WT_REGS * spr
    row_split = case == "C" and C * k * k * cb > wt_cap
    seg_rows = wt_cap // (C * k) if row_split else k
    if seg_rows < 1:
        raise Infeasible(f"{layer.name}: weight row does not fit CF buffers")

    def win_loads(x, y0, cg0, cbn):
        yield from _cf_win_loads(layer, cfg, prec, in_reg, in_base,
                                 x, y0, cg0, cbn)

    def gen():
        yield Step(VsaCfg(prec, DataflowMode.CF))
        yield Step(VSetCfg(spr))
        out_cur = out_base
        if case == "A":
            yield from _emit_vle_run(cfg, wt_reg, wt_base,
                                     L * G * wt_g_elems, eby, "weight")
        last_win = last_g = None
        for yb, x, g in _cf_order(layer, cfg, case):
            y0 = yb * R * s - layer.pad
            if case == "B" and last_g != g:
                yield from _emit_vle_run(
                    cfg, wt_reg, wt_base + g * L * wt_g_elems * eby,
                    L * wt_g_elems, eby, "weight")
                last_g = g
            if case == "A" and last_win != (yb, x):
                yield from win_loads(x, y0, 0, cg)
                last_win = (yb, x)
            for cg0 in range(0, cg, cb):
                cbn = min(cb, cg - cg0)
                if case != "A":
                    yield from win_loads(x, y0, cg0, cbn)
                lay = {"R": R, "k": k, "stride": s, "cb": cbn,
                       "y0": y0, "x0": x * s - layer.pad, "H": H, "W": W}
                blk = wt_base + (g * cg + cg0) * C * k * k * L * eby
                if row_split:
                    for ky0 in range(0, k, seg_rows):
                        npos = min(seg_rows, k - ky0) * k
                        for c in range(C):
                            yield from _emit_vle_run(
                                cfg, wt_reg,
                                blk + (c * k * k + ky0 * k) * L * eby,
                                L * npos, eby, "weight", dst_slot=c * npos)
                        in_geom = _CFInGeom(lay, cbn, pos0=ky0 * k,
                                            npos=npos)
                        w_geom = _FFWGeom(C, npos)
                        yield from _emit_chain(in_reg, wt_reg, acc_reg,
                                               (yb, x, g), 0, False,
                                               in_geom, w_geom)
                    continue
                if case == "C":
                    yield from _emit_vle_run(cfg, wt_reg, blk,
                                             L * C * k * k * cbn, eby,
                                             "weight")
                in_geom = _CFInGeom(lay, cbn)
                if case == "A":
                    w_geom = _CFWGeom(C, k, cbn, cg, g * C * cg * k * k, cg0)
                elif case == "B":
                    w_geom = _CFWGeom(C, k, cbn, cg, 0, cg0)
                else:
                    w_geom = _CFWGeom(C, k, cbn, cbn, 0, 0)
                yield from _emit_chain(in_reg, vs2=wt_reg, acc_addr=acc_reg,
                                       acc_slot=(yb, x, g), acc_offset=0,
                                       acc_init=False, in_full=in_geom,
                                       w_full=w_geom)
            yield from _emit_vse_run(cfg, acc_reg, out_cur, tile_i32 * L)
            out_cur += tile_i32 * L * 4
    return gen


def _cf_params_d(layer, cfg, prec):
    spr = cfg.reg_bits // prec.element_bits
    R, C, k = cfg.tile_r, cfg.tile_c, layer.k
    ih = (R - 1) * layer.stride + k
    cg = -(-layer.cin // prec.ic_par)
    acc_base = 1 + CF_IN_REGS + CF_WT_REGS
    if acc_base + CF_D_ACC_REGS > cfg.num_regs:
        raise Infeasible(f"{layer.name}: no spare registers for blocked CF")
    xB = min(layer.ow, CF_D_ACC_REGS * cfg.reg_bytes // 4 // (R * C))
    cb = min(cg, CF_IN_REGS * spr // (ih * k),
             CF_WT_REGS * spr // (C * k * k))
    if xB < 1 or cb < 1:
        raise Infeasible(f"{layer.name}: blocked CF does not fit")
    return {"xB": xB, "cb": cb, "acc_base": acc_base}


def _cf_steps_d(layer, cfg, prec, p, bases):
    """Blocked CF: weights stay resident over a spatial block; partial
    sums for the block live in spare VRF registers between channel stages."""
    eby = prec.element_bits // 8
    spr = cfg.reg_bits // prec.element_bits
    R, C, L = cfg.tile_r, cfg.tile_c, cfg.lanes
    k, s, H, W = layer.k, layer.stride, layer.h, layer.w
    cg = -(-layer.cin // prec.ic_par)
    G = -(-layer.cout // (L * C))
    yB = -(-layer.oh // R)
    in_base, wt_base, out_base = bases
    in_reg, wt_reg = 1, 1 + CF_IN_REGS
    acc_base, xB, cb = p["acc_base"], p["xB"], p["cb"]

    def gen():
        yield Step(VsaCfg(prec, DataflowMode.CF))
        yield Step(VSetCfg(spr))
        out_cur = out_base
        for g in range(G):
            for yb in range(yB):
                y0 = yb * R * s - layer.pad
                for xb in range(0, layer.ow, xB):
                    nx = min(xB, layer.ow - xb)
                    for si, cg0 in enumerate(range(0, cg, cb)):
                        cbn = min(cb, cg - cg0)
                        blk = wt_base + (g * cg + cg0) * C * k * k * L * eby
                        yield from _emit_vle_run(cfg, wt_reg, blk,
                                                 L * C * k * k * cbn, eby,
                                                 "weight")
                        for xi in range(nx):
                            x = xb + xi
                            yield from _cf_win_loads(layer, cfg, prec,
                                                     in_reg, in_base,
                                                     x, y0, cg0, cbn)
                            lay = {"R": R, "k": k, "stride": s, "cb": cbn,
                                   "y0": y0, "x0": x * s - layer.pad,
                                   "H": H, "W": W}
                            yield from _emit_chain(
                                in_reg, wt_reg, acc_base, (yb, x, g),
                                xi * R * C, si > 0, _CFInGeom(lay, cbn),
                                _CFWGeom(C, k, cbn, cbn, 0, 0))
                    yield from _emit_vse_run(cfg, acc_base, out_cur,
                                             nx * R * C * L)
                    out_cur += nx * R * C * L * 4
    return gen


def _cf_out_records_d(layer, cfg, p, out_base):
    R, C, L = cfg.tile_r, cfg.tile_c, cfg.lanes
    G = -(-layer.cout // (L * C))
    yB = -(-layer.oh // R)
    xB = p["xB"]
    recs, cur = [], out_base
    for g in range(G):
        for yb in range(yB):
            for bi, xb in enumerate(range(0, layer.ow, xB)):
                n = min(xB, layer.ow - xb) * R * C * L
                recs.append(OutRec(cur, n, "ff", yb, g, bi, xB))
                cur += n * 4
    return recs


def plan_cf(layer: LayerSpec, cfg: MachineConfig,
            precision: Precision) -> Plan:
    return _cached_plan("cf", layer, cfg, precision,
                        lambda: _plan_cf(layer, cfg, precision))


def _plan_cf(layer: LayerSpec, cfg: MachineConfig,
             precision: Precision) -> Plan:
    if 1 + CF_IN_REGS + CF_WT_REGS > cfg.num_regs:
        raise Infeasible(f"{layer.name}: register file too small for CF")
    case = _cf_case(layer, cfg, precision)
    bases, sizes = _layout_cf(layer, cfg, precision)
    gen = _cf_steps(layer, cfg, precision, case, bases)
    cycles, by_cat = _cost(cfg, gen())
    variant, p_d = case, None
    if case == "C":
        try:
            p_d = _cf_params_d(layer, cfg, precision)
            gen_d = _cf_steps_d(layer, cfg, precision, p_d, bases)
            cyc_d, cat_d = _cost(cfg, gen_d())
            if cyc_d < cycles:
                gen, cycles, by_cat, variant = gen_d, cyc_d, cat_d, "D"
        except Infeasible:
            pass
    sched = _cf_schedule(layer, cfg, precision, variant, cycles, by_cat,
                         p_d if variant == "D" else None)
    if variant == "D":
        recs = _cf_out_records_d(layer, cfg, p_d, bases[2])
    else:
        recs = _cf_out_records(layer, cfg, case, bases[2])
    return Plan(layer, precision, cfg, DataflowMode.CF, sched, gen, recs,
                bases[0], bases[1], bases[2], sizes, {"case": case})


def _layout_cf(layer, cfg, prec):
    eby = prec.element_bits // 8
    cg = -(-layer.cin // prec.ic_par)
    G = -(-layer.cout // (cfg.lanes * cfg.tile_c))
    in_bytes = layer.h * layer.w * cg * eby
    wt_elems = cfg.lanes * G * cfg.tile_c * layer.k * layer.k * cg
    wt_base = _align(in_bytes)
    out_base = _align(wt_base + wt_elems * eby)
    yB = -(-layer.oh // cfg.tile_r)
    out_bytes = yB * layer.ow * G * cfg.tile_r * cfg.tile_c * cfg.lanes * 4
    return (0, wt_base, out_base), out_base + out_bytes


def _cf_out_records(layer, cfg, case, out_base):
    n = cfg.tile_r * cfg.tile_c * cfg.lanes
    recs = []
    cur = out_base
    for yb, x, g in _cf_order(layer, cfg, case):
        recs.append(OutRec(cur, n, "cf", yb, g, x))
        cur += n * 4
    return recs


def _cf_schedule(layer, cfg, prec, case, cycles, by_cat, p_d=None):
    cg = -(-layer.cin // prec.ic_par)
    spr = cfg.reg_bits // prec.element_bits
    ih = (cfg.tile_r - 1) * layer.stride + layer.k
    G = -(-layer.cout // (cfg.lanes * cfg.tile_c))
    window_bits = min(cg * ih * layer.k, CF_IN_REGS * spr) \
        * prec.element_bits
    wt_bits = min(cfg.tile_c * layer.k * layer.k * cg * (G if case == "A"
                                                         else 1),
                  CF_WT_REGS * spr) * prec.element_bits
    if case == "D":
        acc_bits = p_d["xB"] * cfg.tile_r * cfg.tile_c * 32
    else:
        acc_bits = cfg.tile_r * cfg.tile_c * 32
    peak = acc_bits + window_bits + wt_bits
    stages = []
    for g in range(G):
        reuse = ("weights",) if case in ("A", "B") and g == 0 else ()
        label = {"A": "resident", "B": "resident",
                 "C": "streamed", "D": "blocked"}[case]
        stages.append(Stage(
            f"group {g} ({label} weights)",
            (("weight", cfg.tile_c * layer.k * layer.k * cg),), layer.ow,
            reuse))
    params = {"case": case}
    if p_d is not None:
        params.update(p_d)
    return Schedule(DataflowMode.CF, stages, cfg.tile_r, cycles, by_cat,
                    peak, params)


# ---------------------------------------------------------------------------
# strategy selection

def select_strategy(layer: LayerSpec, cfg: MachineConfig,
                    precision: Precision) -> dict:
    ff = cf = None
    try:
        ff = plan_ff(layer, cfg, precision)
    except Infeasible:
        pass
    try:
        cf = plan_cf(layer, cfg, precision)
    except Infeasible:
        pass
    if ff is None and cf is None:
        raise Infeasible(f"{layer.name}: neither strategy fits this machine")
    if ff is None:
        chosen = cf
    elif cf is None:
        chosen = ff
    else:
        # tie goes to CF: lower VRF pressure
        chosen = cf if cf.est_cycles <= ff.est_cycles else ff
    return {"chosen": chosen.strategy, "plan": chosen,
            "ff_cycles": ff.est_cycles if ff else None,
            "cf_cycles": cf.est_cycles if cf else None,
            "ff": ff, "cf": cf}


# ---------------------------------------------------------------------------
# memory images and extraction

def build_images(plan: Plan, x_packed: np.ndarray, w_packed: np.ndarray,
                 mem) -> None:
    """Serialize packed operands into external memory for this plan."""
    prec = plan.precision
    layer = plan.layer
    cfg = plan.cfg
    cgn = x_packed.shape[0]
    if plan.strategy is DataflowMode.FF:
        order = x_packed.reshape(-1, prec.ic_par)           # planar (cg,y,x)
    else:
        order = x_packed.transpose(1, 2, 0, 3).reshape(-1, prec.ic_par)
    mem.write(plan.in_base, encode_elements(order, prec))

    L, C, k = cfg.lanes, cfg.tile_c, layer.k
    G = -(-layer.cout // (L * C))
    full = np.zeros((G * L * C,) + w_packed.shape[1:], dtype=np.int64)
    full[:layer.cout] = w_packed  # (oc, cg, k, k, icp)

    def oc(g, lane, c):
        return g * L * C + lane * C + c

    def block(g, cg0, cbn):
        lanes = [full[[oc(g, lane, c) for c in range(C)],
                      cg0:cg0 + cbn].reshape(-1, prec.ic_par)
                 for lane in range(L)]
        return _interleave(lanes)

    if plan.strategy is DataflowMode.FF:
        cb = plan.schedule.params["cgb"]
        img = np.concatenate([block(g, cg0, min(cb, cgn - cg0))
                              for g in range(G)
                              for cg0 in range(0, cgn, cb)])
    else:
        case = plan.wt_layout["case"]
        if case == "C":
            cb = _cf_block(layer, cfg, prec, case)
            img = np.concatenate([block(g, cg0, min(cb, cgn - cg0))
                                  for g in range(G)
                                  for cg0 in range(0, cgn, cb)])
        else:
            # whole groups resident: per lane (g, c, cg, ky, kx) order
            lanes = [full[[oc(g, lane, c) for g in range(G)
                           for c in range(C)]].reshape(-1, prec.ic_par)
                     for lane in range(L)]
            img = _interleave(lanes)
    mem.write(plan.wt_base, encode_elements(img, prec))


def _interleave(lanes: list) -> np.ndarray:
    """Round-robin element interleave so a vle hands lane i its own stream."""
    stack = np.stack(lanes, axis=1)           # (n, L, icp)
    return stack.reshape(-1, stack.shape[-1])


def extract_output(plan: Plan, mem) -> np.ndarray:
    """Raw int32 accumulator tensor (cout, oh, ow) from the output region."""
    layer, cfg = plan.layer, plan.cfg
    R, C, L = cfg.tile_r, cfg.tile_c, cfg.lanes
    acc = np.zeros((layer.cout, layer.oh, layer.ow), dtype=np.int32)
    for rec in plan.out_records:
        raw = mem.read(rec.addr, rec.n_int32 * 4).view("<i4")
        arr = raw.reshape(-1, L)              # [slot, lane]
        slot = np.arange(arr.shape[0])
        if rec.kind == "ff":
            t = slot // (R * C)
            rc = slot % (R * C)
            gl, xl = t // rec.x_t, t % rec.x_t
            oy = rec.yb * R + rc // C
            ox = rec.xb * rec.x_t + xl
            for lane in range(L):
                ocs = (rec.g_lo + gl) * L * C + lane * C + rc % C
                ok = (ocs < layer.cout) & (oy < layer.oh) & (ox < layer.ow)
                acc[ocs[ok], oy[ok], ox[ok]] = arr[ok, lane]
        else:
            oy = rec.yb * R + slot // C
            for lane in range(L):
                ocs = rec.g_lo * L * C + lane * C + slot % C
                ok = (ocs < layer.cout) & (oy < layer.oh)
                acc[ocs[ok], oy[ok], rec.xb] = arr[ok, lane]
    return acc


def execute(plan: Plan, x_vals=None, w_vals=None, functional: bool = True,
            trace: bool = False):
    """Run a lowered plan on a fresh machine.

    Functional runs need the raw input (cin, h, w) and weights
    (cout, cin, k, k); timing runs touch no data at all.
    Returns (machine state, RunResult).
    """
    mem = ExternalMemory(plan.mem_bytes + 64) if functional \
        else ExternalMemory(1)
    st = MachineState(plan.cfg, mem=mem)
    if functional:
        xp = pack_tensor(x_vals, plan.precision)
        wp = pack_weights(w_vals, plan.precision)
        build_images(plan, xp, wp, st.mem)
    res = run(st, plan.steps(), functional=functional, trace=trace)
    return st, res


# ---------------------------------------------------------------------------
# accounting helpers (criterion: FF reuse beats a no-reuse baseline)

def input_bytes_loaded(plan: Plan) -> int:
    eby = plan.precision.element_bits // 8
    total = 0
    for step in plan.steps():
        if isinstance(step.instr, VsaLd) and step.meta.tag == "input":
            total += step.instr.count_elems * eby
    return total


def baseline_input_bytes(layer: LayerSpec, precision: Precision) -> int:
    """Every output window fetched afresh: no overlap reuse at all."""
    cg = -(-layer.cin // precision.ic_par)
    return (layer.oh * layer.ow * layer.k * layer.k * cg
            * precision.element_bits // 8)


def noreuse_input_bytes(plan: Plan) -> int:
    """Input bytes a no-reuse variant of this plan would load.

    Walks the schedule's chains and charges each one its full input window
    (the unique element slots its gathers touch), as if nothing were kept
    in the VRF between chains.  The actual plan loads each patch once and
    reuses it across chains, so input_bytes_loaded(plan) must come in
    strictly lower whenever windows overlap.
    """
    eby = plan.precision.element_bits // 8
    total = 0
    key = None
    slots: set = set()
    for step in plan.steps():
        if isinstance(step.instr, VsaM):
            meta = step.meta
            chain = (step.instr.acc_addr, meta.acc_slot)
            if chain != key:
                total += len(slots)
                slots = set()
                key = chain
            idx = np.asarray(meta.geom()[0])
            slots.update(idx[idx >= 0].ravel().tolist())
    total += len(slots)
    return total * eby
