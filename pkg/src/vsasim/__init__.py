"""Cycle-approximate simulator for a vector processor with per-lane systolic
arrays and multi-precision packed convolution instructions."""

from .dataflow import (LayerSpec, Plan, Schedule, Stage, execute,
                       extract_output, plan_cf, plan_ff, requantize,
                       select_strategy)
from .isa import (DataflowMode, Precision, assemble, decode, disassemble,
                  encode)
from .vcore import MachineConfig, MachineState, run, theoretical_peak_gops
from .workloads import Tensor, conv2d_ref, gen_tensor, gen_weights, model_layers

__version__ = "0.1.0"

__all__ = [
    "DataflowMode", "LayerSpec", "MachineConfig", "MachineState", "Plan",
    "Precision", "Schedule", "Stage", "Tensor", "assemble", "conv2d_ref",
    "decode", "disassemble", "encode", "execute", "extract_output",
    "gen_tensor", "gen_weights", "model_layers", "plan_cf", "plan_ff",
    "requantize", "run", "select_strategy", "theoretical_peak_gops",
]
