"""Instruction set: encoding, decoding, and a line-oriented assembly form.

All six instructions live on the custom-0 major opcode and are discriminated
by funct3.  The bit layout below is mirrored in ``docs/encoding.md`` (the
normative table; the ISA tests cross-check against that file).

  Bits [6:0]    opcode   0b0001011  (custom-0)
  Bits [14:12]  funct3   000 VSACFG | 001 VSALD | 010 VSAM |
                         011 VSETCFG | 100 VLE | 101 VSE

  VSACFG   precision bits[21:20] (00=e4, 01=e8, 10=e16, 11 reserved),
           dataflow bit[22] (0=ff, 1=cf);
           reserved-zero: bits[11:7], [19:15], [31:23]
  VSALD    vd bits[11:7], base bits[19:15], count_elems bits[31:20]
  VSAM     acc_addr bits[11:7], vs1 bits[19:15], vs2 bits[24:20],
           steps-1 bits[31:25]  (steps in 1..128)
  VSETCFG  vl bits[31:20]; reserved-zero: bits[11:7], [19:15]
  VLE/VSE  vd/vs bits[11:7], base bits[19:15], count_elems bits[30:20],
           acc-width flag bit[31] (0: CSR element width, 1: 32-bit units)

Decoding is strict: any word whose reserved bits are nonzero is rejected.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .errors import FieldOverflow, IllegalInstruction, ParseError, ReservedField

OPCODE_CUSTOM0 = 0b0001011

FUNCT3_VSACFG = 0b000
FUNCT3_VSALD = 0b001
FUNCT3_VSAM = 0b010
FUNCT3_VSETCFG = 0b011
FUNCT3_VLE = 0b100
FUNCT3_VSE = 0b101


class Precision(enum.Enum):
    """Operand precision; each variant fixes how many operands fuse per element."""

    P4 = 4
    P8 = 8
    P16 = 16

    def __init__(self, bits):
        self.bits = bits                      # width of a single operand
        # operands fused per packed element along the input-channel dim
        self.ic_par = {4: 16, 8: 4, 16: 1}[bits]
        self.element_bits = self.ic_par * bits  # packed element: 64/32/16
        self.lo = -(1 << (bits - 1))
        self.hi = (1 << (bits - 1)) - 1

    @classmethod
    def from_bits(cls, bits: int) -> "Precision":
        try:
            return cls(bits)
        except ValueError:
            raise ValueError(f"no {bits}-bit precision; choose 4, 8, or 16")


class DataflowMode(enum.Enum):
    FF = "ff"
    CF = "cf"


_PREC_ENC = {Precision.P4: 0b00, Precision.P8: 0b01, Precision.P16: 0b10}
_PREC_DEC = {v: k for k, v in _PREC_ENC.items()}


@dataclass(frozen=True)
class VsaCfg:
    precision: Precision
    dataflow: DataflowMode
    reserved: int = 0


@dataclass(frozen=True)
class VsaLd:
    vd: int
    base: int
    count_elems: int
    broadcast: bool = field(default=True, compare=False)


@dataclass(frozen=True)
class VsaM:
    vs1: int
    vs2: int
    acc_addr: int
    steps: int


@dataclass(frozen=True)
class VSetCfg:
    vl: int


@dataclass(frozen=True)
class Vle:
    vd: int
    base: int
    count_elems: int
    w32: bool = False


@dataclass(frozen=True)
class Vse:
    vs: int
    base: int
    count_elems: int
    w32: bool = False


Instruction = VsaCfg | VsaLd | VsaM | VSetCfg | Vle | Vse


def _check(value: int, width: int, name: str) -> int:
    if not 0 <= value < (1 << width):
        raise FieldOverflow(f"{name}={value} does not fit {width} bits")
    return value


def encode(instr: Instruction) -> int:
    """Pack one instruction into its 32-bit word."""
    if isinstance(instr, VsaCfg):
        if instr.reserved != 0:
            raise FieldOverflow("VSACFG reserved bits must be zero")
        word = OPCODE_CUSTOM0 | (FUNCT3_VSACFG << 12)
        word |= _PREC_ENC[instr.precision] << 20
        word |= (1 << 22) if instr.dataflow is DataflowMode.CF else 0
        return word
    if isinstance(instr, VsaLd):
        word = OPCODE_CUSTOM0 | (FUNCT3_VSALD << 12)
        word |= _check(instr.vd, 5, "vd") << 7
        word |= _check(instr.base, 5, "base") << 15
        word |= _check(instr.count_elems, 12, "count_elems") << 20
        return word
    if isinstance(instr, VsaM):
        if instr.steps < 1:
            raise FieldOverflow(f"steps={instr.steps} must be >= 1")
        word = OPCODE_CUSTOM0 | (FUNCT3_VSAM << 12)
        word |= _check(instr.acc_addr, 5, "acc_addr") << 7
        word |= _check(instr.vs1, 5, "vs1") << 15
        word |= _check(instr.vs2, 5, "vs2") << 20
        word |= _check(instr.steps - 1, 7, "steps-1") << 25
        return word
    if isinstance(instr, VSetCfg):
        word = OPCODE_CUSTOM0 | (FUNCT3_VSETCFG << 12)
        word |= _check(instr.vl, 12, "vl") << 20
        return word
    if isinstance(instr, (Vle, Vse)):
        f3 = FUNCT3_VLE if isinstance(instr, Vle) else FUNCT3_VSE
        reg = instr.vd if isinstance(instr, Vle) else instr.vs
        word = OPCODE_CUSTOM0 | (f3 << 12)
        word |= _check(reg, 5, "vreg") << 7
        word |= _check(instr.base, 5, "base") << 15
        word |= _check(instr.count_elems, 11, "count_elems") << 20
        word |= (1 << 31) if instr.w32 else 0
        return word
    raise TypeError(f"not an instruction: {instr!r}")


def _bits(word: int, hi: int, lo: int) -> int:
    return (word >> lo) & ((1 << (hi - lo + 1)) - 1)


def decode(word: int) -> Instruction:
    """Decode a 32-bit word; strict about reserved bits."""
    if not 0 <= word < (1 << 32):
        raise IllegalInstruction(f"not a 32-bit word: {word:#x}")
    if _bits(word, 6, 0) != OPCODE_CUSTOM0:
        raise IllegalInstruction(f"unknown opcode in {word:#010x}")
    funct3 = _bits(word, 14, 12)
    if funct3 == FUNCT3_VSACFG:
        if _bits(word, 11, 7) or _bits(word, 19, 15) or _bits(word, 31, 23):
            raise ReservedField(f"VSACFG reserved bits set in {word:#010x}")
        penc = _bits(word, 21, 20)
        if penc not in _PREC_DEC:
            raise ReservedField(f"VSACFG precision 0b11 is reserved ({word:#010x})")
        df = DataflowMode.CF if _bits(word, 22, 22) else DataflowMode.FF
        return VsaCfg(_PREC_DEC[penc], df)
    if funct3 == FUNCT3_VSALD:
        return VsaLd(vd=_bits(word, 11, 7), base=_bits(word, 19, 15),
                     count_elems=_bits(word, 31, 20))
    if funct3 == FUNCT3_VSAM:
        return VsaM(vs1=_bits(word, 19, 15), vs2=_bits(word, 24, 20),
                    acc_addr=_bits(word, 11, 7), steps=_bits(word, 31, 25) + 1)
    if funct3 == FUNCT3_VSETCFG:
        if _bits(word, 11, 7) or _bits(word, 19, 15):
            raise ReservedField(f"VSETCFG reserved bits set in {word:#010x}")
        return VSetCfg(vl=_bits(word, 31, 20))
    if funct3 == FUNCT3_VLE:
        return Vle(vd=_bits(word, 11, 7), base=_bits(word, 19, 15),
                   count_elems=_bits(word, 30, 20), w32=bool(_bits(word, 31, 31)))
    if funct3 == FUNCT3_VSE:
        return Vse(vs=_bits(word, 11, 7), base=_bits(word, 19, 15),
                   count_elems=_bits(word, 30, 20), w32=bool(_bits(word, 31, 31)))
    raise IllegalInstruction(f"unknown funct3 {funct3:#05b} in {word:#010x}")


# --- assembly ----------------------------------------------------------------

_PREC_TOKENS = {"e4": Precision.P4, "e8": Precision.P8, "e16": Precision.P16}
_DF_TOKENS = {"ff": DataflowMode.FF, "cf": DataflowMode.CF}


def _vreg(tok: str, lineno: int) -> int:
    if not tok.startswith("v") or not tok[1:].isdigit() or int(tok[1:]) > 31:
        raise ParseError(lineno, f"expected vector register v0..v31, got {tok!r}")
    return int(tok[1:])


def _xreg(tok: str, lineno: int) -> int:
    if not tok.startswith("x") or not tok[1:].isdigit() or int(tok[1:]) > 31:
        raise ParseError(lineno, f"expected address register x0..x31, got {tok!r}")
    return int(tok[1:])


def _imm(tok: str, lineno: int) -> int:
    try:
        return int(tok, 0)
    except ValueError:
        raise ParseError(lineno, f"expected integer, got {tok!r}")


def parse_line(line: str, lineno: int = 1) -> Instruction | None:
    """Parse one assembly line; returns None for blank/comment lines."""
    text = line.split("#", 1)[0].strip()
    if not text:
        return None
    parts = text.split(None, 1)
    mnem = parts[0].lower()
    ops = [t.strip() for t in parts[1].split(",")] if len(parts) > 1 else []
    try:
        if mnem == "vsacfg":
            if len(ops) != 2:
                raise ParseError(lineno, "vsacfg takes: precision, dataflow")
            if ops[0] not in _PREC_TOKENS:
                raise ParseError(lineno, f"bad precision token {ops[0]!r}")
            if ops[1] not in _DF_TOKENS:
                raise ParseError(lineno, f"bad dataflow token {ops[1]!r}")
            return VsaCfg(_PREC_TOKENS[ops[0]], _DF_TOKENS[ops[1]])
        if mnem == "vsald":
            if len(ops) != 3:
                raise ParseError(lineno, "vsald takes: vd, base, count")
            return VsaLd(_vreg(ops[0], lineno), _xreg(ops[1], lineno),
                         _imm(ops[2], lineno))
        if mnem == "vsam":
            if len(ops) != 4:
                raise ParseError(lineno, "vsam takes: vs1, vs2, acc, steps")
            return VsaM(_vreg(ops[0], lineno), _vreg(ops[1], lineno),
                        _vreg(ops[2], lineno), _imm(ops[3], lineno))
        if mnem == "vsetcfg":
            if len(ops) != 1:
                raise ParseError(lineno, "vsetcfg takes: vl")
            return VSetCfg(_imm(ops[0], lineno))
        if mnem in ("vle", "vse"):
            if len(ops) not in (3, 4):
                raise ParseError(lineno, f"{mnem} takes: vreg, base, count[, w32]")
            w32 = False
            if len(ops) == 4:
                if ops[3] != "w32":
                    raise ParseError(lineno, f"bad flag {ops[3]!r} (only 'w32')")
                w32 = True
            reg = _vreg(ops[0], lineno)
            base = _xreg(ops[1], lineno)
            count = _imm(ops[2], lineno)
            return (Vle if mnem == "vle" else Vse)(reg, base, count, w32)
        raise ParseError(lineno, f"unknown mnemonic {mnem!r}")
    except FieldOverflow as e:
        raise ParseError(lineno, str(e))


def assemble(text: str) -> list[int]:
    """Assemble line-oriented source into 32-bit words ('#' starts a comment)."""
    words = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        instr = parse_line(line, lineno)
        if instr is None:
            continue
        try:
            words.append(encode(instr))
        except FieldOverflow as e:
            raise ParseError(lineno, str(e))
    return words


def format_instr(instr: Instruction) -> str:
    """Render one instruction in canonical assembly form."""
    if isinstance(instr, VsaCfg):
        p = {Precision.P4: "e4", Precision.P8: "e8", Precision.P16: "e16"}
        return f"vsacfg {p[instr.precision]}, {instr.dataflow.value}"
    if isinstance(instr, VsaLd):
        return f"vsald v{instr.vd}, x{instr.base}, {instr.count_elems}"
    if isinstance(instr, VsaM):
        return f"vsam v{instr.vs1}, v{instr.vs2}, v{instr.acc_addr}, {instr.steps}"
    if isinstance(instr, VSetCfg):
        return f"vsetcfg {instr.vl}"
    if isinstance(instr, Vle):
        sfx = ", w32" if instr.w32 else ""
        return f"vle v{instr.vd}, x{instr.base}, {instr.count_elems}{sfx}"
    if isinstance(instr, Vse):
        sfx = ", w32" if instr.w32 else ""
        return f"vse v{instr.vs}, x{instr.base}, {instr.count_elems}{sfx}"
    raise TypeError(f"not an instruction: {instr!r}")


def disassemble(words: list[int]) -> str:
    """Disassemble words to canonical assembly, one line per word."""
    return "\n".join(format_instr(decode(w)) for w in words)
