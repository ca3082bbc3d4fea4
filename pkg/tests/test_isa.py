"""Encoding, decoding, and assembly round-trips for all six instructions."""

import re
from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from vsasim.errors import FieldOverflow, IllegalInstruction, ParseError, ReservedField
from vsasim.isa import (DataflowMode, Precision, VsaCfg, VsaLd, VsaM, Vse,
                        VSetCfg, Vle, assemble, decode, disassemble, encode,
                        format_instr, parse_line)

DOCS = Path(__file__).resolve().parents[1] / "docs" / "encoding.md"


def _roundtrip(instr):
    word = encode(instr)
    back = decode(word)
    assert type(back) is type(instr)
    assert back == instr
    return word


# --- precision metadata -------------------------------------------------------

def test_precision_attributes():
    assert Precision.P4.bits == 4 and Precision.P4.ic_par == 16
    assert Precision.P8.bits == 8 and Precision.P8.ic_par == 4
    assert Precision.P16.bits == 16 and Precision.P16.ic_par == 1
    for p in Precision:
        assert p.element_bits == p.bits * p.ic_par
        assert p.lo == -(1 << (p.bits - 1))
        assert p.hi == (1 << (p.bits - 1)) - 1
    assert Precision.from_bits(8) is Precision.P8


# --- per-form round-trips -----------------------------------------------------

def test_vsacfg_roundtrip_exhaustive():
    for prec in Precision:
        for df in DataflowMode:
            _roundtrip(VsaCfg(prec, df))


def test_vsald_roundtrip_fields():
    for vd in range(32):
        for base in range(32):
            _roundtrip(VsaLd(vd, base, 0))
            _roundtrip(VsaLd(vd, base, 4095))
    for count in range(4096):
        _roundtrip(VsaLd(31, 0, count))


def test_vsam_roundtrip_fields():
    for acc in range(32):
        for vs1 in range(32):
            _roundtrip(VsaM(vs1, 0, acc, 1))
        for vs2 in range(32):
            _roundtrip(VsaM(0, vs2, acc, 128))
    for steps in range(1, 129):
        _roundtrip(VsaM(31, 31, 31, steps))


def test_vsetcfg_roundtrip_exhaustive():
    for vl in range(4096):
        _roundtrip(VSetCfg(vl))


@pytest.mark.parametrize("cls", [Vle, Vse])
def test_vle_vse_roundtrip_fields(cls):
    for reg in range(32):
        for base in range(32):
            for w32 in (False, True):
                _roundtrip(cls(reg, base, 2047, w32))
    for count in range(2048):
        _roundtrip(cls(5, 9, count, count % 2 == 0))


def test_vle_vse_distinct_words():
    assert encode(Vle(1, 2, 3, False)) != encode(Vse(1, 2, 3, False))


# --- field overflow and reserved bits ----------------------------------------

@pytest.mark.parametrize("bad", [
    VsaLd(32, 0, 0), VsaLd(0, 32, 0), VsaLd(0, 0, 4096),
    VsaM(32, 0, 0, 1), VsaM(0, 32, 0, 1), VsaM(0, 0, 32, 1),
    VsaM(0, 0, 0, 129), VsaM(0, 0, 0, 0),
    VSetCfg(4096), Vle(0, 0, 2048), Vse(0, 0, 2048),
])
def test_encode_rejects_field_overflow(bad):
    with pytest.raises(FieldOverflow):
        encode(bad)


def test_decode_rejects_reserved_bits():
    base_cfg = encode(VsaCfg(Precision.P8, DataflowMode.FF))
    for bit in list(range(7, 12)) + list(range(15, 20)) + list(range(23, 32)):
        with pytest.raises(ReservedField):
            decode(base_cfg | (1 << bit))
    # precision code 0b11 is reserved
    with pytest.raises(ReservedField):
        decode(base_cfg | (0b11 << 20))
    base_vset = encode(VSetCfg(7))
    for bit in list(range(7, 12)) + list(range(15, 20)):
        with pytest.raises(ReservedField):
            decode(base_vset | (1 << bit))


def test_decode_rejects_bad_opcode_and_funct3():
    with pytest.raises(IllegalInstruction):
        decode(0x00000013)  # a base-ISA opcode, not custom-0
    for funct3 in (0b110, 0b111):
        with pytest.raises(IllegalInstruction):
            decode(0b0001011 | (funct3 << 12))
    with pytest.raises(IllegalInstruction):
        decode(1 << 32)


# --- property-based round-trip ------------------------------------------------

@given(st.integers(0, 31), st.integers(0, 31), st.integers(0, 4095))
def test_vsald_roundtrip_property(vd, base, count):
    _roundtrip(VsaLd(vd, base, count))


@given(st.integers(0, 31), st.integers(0, 31), st.integers(0, 31),
       st.integers(1, 128))
def test_vsam_roundtrip_property(vs1, vs2, acc, steps):
    _roundtrip(VsaM(vs1, vs2, acc, steps))


@given(st.integers(0, 31), st.integers(0, 31), st.integers(0, 2047),
       st.booleans(), st.booleans())
def test_vle_vse_roundtrip_property(reg, base, count, w32, store):
    cls = Vse if store else Vle
    _roundtrip(cls(reg, base, count, w32))


# --- assembly -----------------------------------------------------------------

SAMPLES = [
    VsaCfg(Precision.P4, DataflowMode.CF),
    VsaCfg(Precision.P16, DataflowMode.FF),
    VsaLd(1, 2, 16),
    VsaM(1, 9, 0, 36),
    VSetCfg(32),
    Vle(9, 3, 128, False),
    Vse(0, 4, 64, True),
]


@pytest.mark.parametrize("instr", SAMPLES, ids=lambda i: type(i).__name__)
def test_asm_roundtrip(instr):
    back = parse_line(format_instr(instr))
    assert type(back) is type(instr)
    assert back == instr


def test_assemble_disassemble_roundtrip():
    text = "\n".join(format_instr(i) for i in SAMPLES)
    words = assemble(text)
    assert disassemble(words) == text


def test_parse_line_blank_and_comment():
    assert parse_line("") is None
    assert parse_line("   # just a comment") is None
    assert parse_line("vsetcfg 8  # trailing comment") == VSetCfg(8)


@pytest.mark.parametrize("line", [
    "vsacfg p8, ff",        # wrong precision token
    "vsacfg e8, xx",        # wrong dataflow token
    "vsacfg e8",            # missing operand
    "vsald v1, v2, 16",     # base must be an x register
    "vsald x1, x2, 16",     # vd must be a v register
    "vle v1, x2, 8, w16",   # only w32 is a valid flag
    "frobnicate v1",        # unknown mnemonic
    "vsald v1, x2, zz",     # non-integer immediate
])
def test_parse_line_rejects(line):
    with pytest.raises(ParseError):
        parse_line(line)


@pytest.mark.parametrize("line", [
    "vsald v1, x2, 4096",   # count overflows its field
    "vsam v1, v2, v3, 0",   # steps < 1
    "vsam v1, v2, v3, 129", # steps overflows its field
])
def test_assemble_rejects_out_of_range_immediates(line):
    with pytest.raises(ParseError):
        assemble(line)


# --- documentation cross-check -------------------------------------------------

def test_docs_examples_match_encoder():
    """docs/encoding.md is normative; its example encodings must assemble."""
    text = DOCS.read_text()
    rows = re.findall(r"`([^`]+)`\s*\|\s*`(0x[0-9a-f]{8})`", text)
    assert len(rows) >= 6, "expected one example per instruction form"
    seen = set()
    for asm, hexword in rows:
        instr = parse_line(asm)
        assert encode(instr) == int(hexword, 16), asm
        seen.add(type(instr))
    assert seen == {VsaCfg, VsaLd, VsaM, VSetCfg, Vle, Vse}


def test_docs_funct3_table_matches():
    text = DOCS.read_text()
    assert "0b0001011" in text
    for name, code in [("VSACFG", "000"), ("VSALD", "001"), ("VSAM", "010"),
                       ("VSETCFG", "011"), ("VLE", "100"), ("VSE", "101")]:
        assert re.search(rf"`{code}` {name}", text), name
