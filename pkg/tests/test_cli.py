"""Command-line interface: commands, output formats, exit codes."""

import json

import numpy as np
import pytest

import vsasim.reports
from vsasim.cli import EXIT_ERROR, EXIT_OK, EXIT_VERIFY, main
from vsasim.reports import LAYER_COLUMNS, SWEEP_COLUMNS

RUN_LAYER = ["run-layer", "--name", "demo", "--cin", "16", "--cout", "16",
             "--k", "3", "--h", "8", "--w", "8"]


def test_run_layer_json(capsys):
    assert main(RUN_LAYER) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["model"] == "demo" and doc["precision"] == 8
    assert doc["layers"][0]["layer"] == "demo"
    assert doc["aggregate"]["total_cycles"] > 0


def test_run_layer_csv(capsys):
    assert main(RUN_LAYER + ["--out", "csv"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == ",".join(LAYER_COLUMNS)
    assert lines[1].startswith("demo,")


def test_run_layer_verify(capsys):
    assert main(RUN_LAYER + ["--verify", "--precision", "16"]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["layers"][0]["verified"] is True


def test_run_layer_deterministic(capsys):
    assert main(RUN_LAYER) == EXIT_OK
    first = capsys.readouterr().out
    assert main(RUN_LAYER) == EXIT_OK
    assert capsys.readouterr().out == first


def test_run_model_and_compare(capsys):
    assert main(["run-model", "squeezenet", "--precision", "16",
                 "--strategy", "ff", "--out", "csv"]) == EXIT_OK
    out = capsys.readouterr().out
    assert all(row.split(",")[1] == "FF" for row in out.splitlines()[1:])
    assert main(["compare-strategies", "squeezenet",
                 "--precision", "16"]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["strategy"] == "mixed"
    assert "reference" in doc


def test_sweep_csv(capsys):
    assert main(["sweep", "squeezenet", "--precision", "16",
                 "--lanes", "4,8", "--precisions", "16"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == ",".join(SWEEP_COLUMNS)
    assert len(lines) == 3
    c4 = int(lines[1].split(",")[4])
    c8 = int(lines[2].split(",")[4])
    assert c8 <= c4          # doubling lanes never increases total cycles


def test_verify_command(capsys):
    assert main(["verify", "squeezenet", "--precision", "16"]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert all(rec["verified"] for rec in doc["layers"])


def test_verify_failure_exit_code(monkeypatch, capsys):
    real = vsasim.reports.conv2d_ref

    def corrupted(x, w, layer, shift, precision):
        out = real(x, w, layer, shift, precision)
        out.flat[0] = precision.hi if out.flat[0] != precision.hi \
            else precision.lo
        return out

    monkeypatch.setattr(vsasim.reports, "conv2d_ref", corrupted)
    assert main(RUN_LAYER + ["--verify"]) == EXIT_VERIFY
    assert "verification failed" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["run-model", "lenet99"],                       # unknown model
    ["run-layer", "--name", "x", "--cin", "0", "--cout", "1",
     "--k", "1", "--h", "4", "--w", "4"],           # bad geometry
])
def test_error_exit_code(argv, capsys):
    assert main(argv) == EXIT_ERROR
    assert "error:" in capsys.readouterr().err


def test_bad_config_file_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("widgets = 3\n")
    assert main(RUN_LAYER + ["--config", str(bad)]) == EXIT_ERROR
    assert main(RUN_LAYER + ["--config", str(tmp_path / "nope")]) == EXIT_ERROR


def test_config_file_is_used(tmp_path, capsys):
    cfg = tmp_path / "m.cfg"
    cfg.write_text("lanes = 8\nvlen_bits = 8192\narea_mm2 = 2.0\n")
    assert main(RUN_LAYER + ["--config", str(cfg)]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert "gops_per_mm2_user_area" in doc["layers"][0]


# --- assembler round-trip through the CLI -------------------------------------------

ASM = """\
vsacfg e8, ff
vsetcfg 32
vsald v1, x2, 16
vsam v1, v9, v0, 36
vle v9, x3, 128
vse v0, x4, 64, w32
"""


def test_asm_disasm_roundtrip(tmp_path, capsys):
    src = tmp_path / "prog.s"
    src.write_text(ASM)
    assert main(["asm", str(src)]) == EXIT_OK
    hexwords = capsys.readouterr().out
    assert hexwords.splitlines()[0] == "0010000b"
    hexfile = tmp_path / "prog.hex"
    hexfile.write_text(hexwords)
    assert main(["disasm", str(hexfile)]) == EXIT_OK
    assert capsys.readouterr().out == ASM


def test_asm_parse_error(tmp_path, capsys):
    src = tmp_path / "bad.s"
    src.write_text("vsacfg p8, ff\n")
    assert main(["asm", str(src)]) == EXIT_ERROR
