"""Cycle reports: per-layer performance records and JSON/CSV emitters.

A report row states, for one convolution layer, how many cycles each
dataflow strategy needs, which one the mixed strategy picks, and the
derived throughput figures.  All arithmetic is recomputable from the raw
fields: op_per_cycle = 2*macs / cycles_used, utilization divides that by
the machine's peak op/cycle, gops_at_freq scales it by the clock.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .dataflow import (LayerSpec, Plan, default_shift, execute,
                       extract_output, plan_cf, plan_ff, requantize)
from .errors import Infeasible, VerificationFailed
from .isa import DataflowMode, Precision
from .vcore import MachineConfig
from .workloads import conv2d_ref, gen_tensor, gen_weights

# Published improvement factors of the mixed strategy over FF-only and
# CF-only (area-efficiency figures from the original silicon evaluation;
# informational only, never a pass/fail bound).
REFERENCE_MIXED_VS_FF = 1.88
REFERENCE_MIXED_VS_CF = 1.38

STRATEGIES = ("ff", "cf", "mixed")


def peak_op_per_cycle(cfg: MachineConfig, precision: Precision) -> int:
    """Ops per cycle with every PE of every lane doing one MAC."""
    return 2 * cfg.lanes * cfg.tile_r * cfg.tile_c * precision.ic_par


@dataclass
class LayerRecord:
    layer: str
    strategy: str              # "FF" | "CF" (the strategy that was used)
    cycles_ff: int | None
    cycles_cf: int | None
    cycles_used: int
    macs: int
    op_per_cycle: float
    utilization: float
    gops_at_freq: float
    gops_per_mm2: float | None = None
    verified: bool | None = None

    def as_dict(self) -> dict:
        d = {"layer": self.layer, "strategy": self.strategy,
             "cycles_ff": self.cycles_ff, "cycles_cf": self.cycles_cf,
             "cycles_used": self.cycles_used, "macs": self.macs,
             "op_per_cycle": round(self.op_per_cycle, 6),
             "utilization": round(self.utilization, 6),
             "gops_at_freq": round(self.gops_at_freq, 6)}
        if self.gops_per_mm2 is not None:
            d["gops_per_mm2_user_area"] = round(self.gops_per_mm2, 6)
        if self.verified is not None:
            d["verified"] = self.verified
        return d


@dataclass
class CycleReport:
    model: str
    precision: int
    strategy: str              # requested mode: ff | cf | mixed
    records: list = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)
    reference: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = {"model": self.model, "precision": self.precision,
             "strategy": self.strategy,
             "layers": [r.as_dict() for r in self.records],
             "aggregate": self.aggregate}
        if self.reference:
            d["reference"] = self.reference
        return d


def _plan_pair(layer, cfg, precision):
    ff = cf = None
    try:
        ff = plan_ff(layer, cfg, precision)
    except Infeasible:
        pass
    try:
        cf = plan_cf(layer, cfg, precision)
    except Infeasible:
        pass
    return ff, cf


def _pick(layer, ff: Plan, cf: Plan, strategy: str) -> Plan:
    if strategy == "ff":
        chosen = ff
    elif strategy == "cf":
        chosen = cf
    else:  # mixed: argmin, tie to CF (lower VRF pressure)
        if ff is None or (cf is not None
                          and cf.est_cycles <= ff.est_cycles):
            chosen = cf
        else:
            chosen = ff
    if chosen is None:
        raise Infeasible(f"{layer.name}: no feasible {strategy} schedule")
    return chosen


def _verify_layer(plan: Plan, seed: int) -> None:
    layer, prec = plan.layer, plan.precision
    x = gen_tensor(seed, (layer.cin, layer.h, layer.w), prec).values
    w = gen_weights(seed + 1, layer, prec)
    shift = default_shift(layer, prec)
    ref = conv2d_ref(x, w, layer, shift, prec)
    st, _ = execute(plan, x, w)
    out = requantize(extract_output(plan, st.mem), prec, shift)
    if not np.array_equal(out, ref):
        bad = np.argwhere(out != ref)[0]
        c, y, xx = (int(v) for v in bad)
        raise VerificationFailed(
            f"{layer.name}: first mismatch at (c={c}, y={y}, x={xx}): "
            f"got {int(out[c, y, xx])}, expected {int(ref[c, y, xx])}",
            first_mismatch=(c, y, xx))


def run_layer(layer: LayerSpec, cfg: MachineConfig, precision: Precision,
              strategy: str = "mixed", verify: bool = False,
              seed: int = 0) -> LayerRecord:
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    ff, cf = _plan_pair(layer, cfg, precision)
    chosen = _pick(layer, ff, cf, strategy)
    verified = None
    if verify:
        _verify_layer(chosen, seed)
        verified = True
    cycles = chosen.est_cycles
    macs = layer.macs()
    opc = 2 * macs / cycles
    util = opc / peak_op_per_cycle(cfg, precision)
    gops = opc * cfg.freq_mhz / 1000.0
    return LayerRecord(
        layer=layer.name,
        strategy="FF" if chosen.strategy is DataflowMode.FF else "CF",
        cycles_ff=ff.est_cycles if ff else None,
        cycles_cf=cf.est_cycles if cf else None,
        cycles_used=cycles, macs=macs, op_per_cycle=opc, utilization=util,
        gops_at_freq=gops,
        gops_per_mm2=(gops / cfg.area_mm2 if cfg.area_mm2 else None),
        verified=verified)


def _aggregate(records: list) -> dict:
    total_ff = (sum(r.cycles_ff for r in records)
                if all(r.cycles_ff is not None for r in records) else None)
    total_cf = (sum(r.cycles_cf for r in records)
                if all(r.cycles_cf is not None for r in records) else None)
    agg = {"total_cycles": sum(r.cycles_used for r in records),
           "total_cycles_ff": total_ff,
           "total_cycles_cf": total_cf,
           "mean_op_per_cycle": round(
               sum(r.op_per_cycle for r in records) / len(records), 6),
           "peak_gops": round(max(r.gops_at_freq for r in records), 6)}
    return agg


def run_model(layers: list, cfg: MachineConfig, precision: Precision,
              strategy: str = "mixed", verify: bool = False, seed: int = 0,
              model_name: str = "") -> CycleReport:
    if not layers:
        raise ValueError("empty layer list")
    records = [run_layer(layer, cfg, precision, strategy, verify, seed + i)
               for i, layer in enumerate(layers)]
    report = CycleReport(model=model_name, precision=precision.bits,
                         strategy=strategy, records=records,
                         aggregate=_aggregate(records))
    agg = report.aggregate
    if strategy == "mixed" and agg["total_cycles_ff"] \
            and agg["total_cycles_cf"]:
        report.reference = {
            "mixed_vs_ff_cycles": round(
                agg["total_cycles_ff"] / agg["total_cycles"], 6),
            "mixed_vs_cf_cycles": round(
                agg["total_cycles_cf"] / agg["total_cycles"], 6),
            "published_mixed_vs_ff_area_eff": REFERENCE_MIXED_VS_FF,
            "published_mixed_vs_cf_area_eff": REFERENCE_MIXED_VS_CF,
        }
    return report


# ---------------------------------------------------------------------------
# sweep

SWEEP_COLUMNS = ("lanes", "tile_r", "tile_c", "precision", "total_cycles",
                 "mean_op_per_cycle", "peak_gops", "error")


def sweep(layers: list, base: MachineConfig, lanes_list, tile_r_list,
          tile_c_list, precisions, strategy: str = "mixed",
          model_name: str = "") -> list:
    """One row of aggregate metrics per grid point; errors stay in-row."""
    rows = []
    for lanes in lanes_list:
        for tr in tile_r_list:
            for tc in tile_c_list:
                for prec in precisions:
                    row = {"lanes": lanes, "tile_r": tr, "tile_c": tc,
                           "precision": prec.bits, "total_cycles": "",
                           "mean_op_per_cycle": "", "peak_gops": "",
                           "error": ""}
                    try:
                        cfg = MachineConfig(
                            lanes=lanes,
                            vlen_bits=base.reg_bits * lanes,
                            num_regs=base.num_regs,
                            mem_bw_bits=base.mem_bw_bits,
                            mem_latency=base.mem_latency,
                            freq_mhz=base.freq_mhz, tile_r=tr, tile_c=tc,
                            area_mm2=base.area_mm2)
                        rep = run_model(layers, cfg, prec, strategy,
                                        model_name=model_name)
                        row["total_cycles"] = rep.aggregate["total_cycles"]
                        row["mean_op_per_cycle"] = \
                            rep.aggregate["mean_op_per_cycle"]
                        row["peak_gops"] = rep.aggregate["peak_gops"]
                    except Exception as e:  # recorded in-row, sweep continues
                        row["error"] = f"{type(e).__name__}: {e}"
                    rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# emitters (byte-stable for fixed inputs)

LAYER_COLUMNS = ("layer", "strategy", "cycles_ff", "cycles_cf",
                 "cycles_used", "macs", "op_per_cycle", "utilization",
                 "gops_at_freq")


def report_json(report: CycleReport) -> str:
    return json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n"


def report_csv(report: CycleReport) -> str:
    buf = io.StringIO()
    cols = list(LAYER_COLUMNS)
    if any(r.gops_per_mm2 is not None for r in report.records):
        cols.append("gops_per_mm2_user_area")
    if any(r.verified is not None for r in report.records):
        cols.append("verified")
    w = csv.DictWriter(buf, fieldnames=cols, extrasaction="ignore",
                       lineterminator="\n")
    w.writeheader()
    for r in report.records:
        w.writerow(r.as_dict())
    return buf.getvalue()


def sweep_csv(rows: list) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow(row)
    return buf.getvalue()
