"""Command-line front end.

Commands: run-layer, run-model, compare-strategies, sweep, verify,
disasm, asm.  Exit codes: 0 success, 1 verification failure,
2 infeasible / config / usage error.  Report formats are documented in
docs/report-schema.md.
"""

from __future__ import annotations

import argparse
import sys

from .errors import SimError, VerificationFailed
from .isa import Precision, assemble, disassemble
from .reports import (report_csv, report_json, run_layer, run_model, sweep,
                      sweep_csv)
from .vcore import MachineConfig
from .workloads import model_layers
from .dataflow import LayerSpec

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_ERROR = 2

_PRECISIONS = {4: Precision.P4, 8: Precision.P8, 16: Precision.P16}


def _add_common(p: argparse.ArgumentParser, verify_flag: bool = True):
    p.add_argument("--config", metavar="FILE",
                   help="machine config file (key = value lines)")
    p.add_argument("--precision", type=int, choices=(4, 8, 16), default=8)
    p.add_argument("--strategy", choices=("ff", "cf", "mixed"),
                   default="mixed")
    p.add_argument("--seed", type=int, default=0,
                   help="seed for generated tensors (u64)")
    p.add_argument("--out", choices=("json", "csv"), default="json")
    if verify_flag:
        p.add_argument("--verify", action="store_true",
                       help="check the simulated output against the "
                            "reference convolution")


def _add_layer_args(p: argparse.ArgumentParser):
    p.add_argument("--name", default="layer")
    p.add_argument("--cin", type=int, required=True)
    p.add_argument("--cout", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--h", type=int, required=True)
    p.add_argument("--w", type=int, required=True)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--pad", type=int, default=0)


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="vsasim",
        description="Cycle-approximate simulator of a multi-precision "
                    "systolic-array vector processor.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run-layer", help="simulate one convolution layer")
    _add_layer_args(p)
    _add_common(p)

    p = sub.add_parser("run-model", help="simulate every conv layer of a "
                                         "benchmark model")
    p.add_argument("model")
    _add_common(p)

    p = sub.add_parser("compare-strategies",
                       help="per-layer FF vs CF cycles for a model")
    p.add_argument("model")
    _add_common(p, verify_flag=False)

    p = sub.add_parser("sweep", help="aggregate metrics over a config grid")
    p.add_argument("model")
    p.add_argument("--lanes", type=_int_list, default=[4])
    p.add_argument("--tile-r", type=_int_list, default=[4])
    p.add_argument("--tile-c", type=_int_list, default=[4])
    p.add_argument("--precisions", type=_int_list, default=[4, 8, 16])
    p.add_argument("--config", metavar="FILE")
    p.add_argument("--strategy", choices=("ff", "cf", "mixed"),
                   default="mixed")

    p = sub.add_parser("verify", help="bit-exact check of a model against "
                                      "the reference convolution")
    p.add_argument("model")
    _add_common(p, verify_flag=False)

    p = sub.add_parser("asm", help="assemble text into hex words")
    p.add_argument("file", help="assembly source, '-' for stdin")

    p = sub.add_parser("disasm", help="disassemble hex words into text")
    p.add_argument("file", help="one hex word per line, '-' for stdin")
    return ap


def _load_cfg(args) -> MachineConfig:
    if getattr(args, "config", None):
        return MachineConfig.from_file(args.config)
    return MachineConfig()


def _read(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    with open(path) as fh:
        return fh.read()


def _emit(report, out: str):
    if out == "csv":
        sys.stdout.write(report_csv(report))
    else:
        sys.stdout.write(report_json(report))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except VerificationFailed as e:
        print(f"verification failed: {e}", file=sys.stderr)
        return EXIT_VERIFY
    except (SimError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


def _dispatch(args) -> int:
    cmd = args.command
    if cmd == "asm":
        for word in assemble(_read(args.file)):
            print(f"{word:08x}")
        return EXIT_OK
    if cmd == "disasm":
        words = [int(tok, 16) for tok in _read(args.file).split()]
        out = disassemble(words)
        sys.stdout.write(out + "\n" if out else out)
        return EXIT_OK

    cfg = _load_cfg(args)
    if cmd == "sweep":
        layers = model_layers(args.model)
        rows = sweep(layers, cfg, args.lanes, args.tile_r, args.tile_c,
                     [_PRECISIONS[b] for b in args.precisions],
                     args.strategy, model_name=args.model)
        sys.stdout.write(sweep_csv(rows))
        return EXIT_OK

    prec = _PRECISIONS[args.precision]
    if cmd == "run-layer":
        layer = LayerSpec(args.name, cin=args.cin, cout=args.cout,
                          k=args.k, h=args.h, w=args.w,
                          stride=args.stride, pad=args.pad)
        rep = run_model([layer], cfg, prec, args.strategy,
                        verify=args.verify, seed=args.seed,
                        model_name=args.name)
        _emit(rep, args.out)
        return EXIT_OK
    if cmd in ("run-model", "compare-strategies", "verify"):
        layers = model_layers(args.model)
        strategy = "mixed" if cmd == "compare-strategies" else args.strategy
        verify = (cmd == "verify") or getattr(args, "verify", False)
        rep = run_model(layers, cfg, prec, strategy, verify=verify,
                        seed=args.seed, model_name=args.model)
        _emit(rep, args.out)
        return EXIT_OK
    raise AssertionError(f"unhandled command {cmd}")


if __name__ == "__main__":
    sys.exit(main())
