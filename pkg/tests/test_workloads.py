"""Deterministic tensors, the convolution oracle, and benchmark tables."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vsasim.dataflow import LayerSpec
from vsasim.errors import ParseError, ShapeMismatch, UnknownModel
from vsasim.isa import Precision
from vsasim.workloads import (MODEL_NAMES, Tensor, _parse_models_file,
                              conv2d_ref, dump_tensor, gen_tensor,
                              gen_weights, load_tensor, model_layers)

P4, P8, P16 = Precision.P4, Precision.P8, Precision.P16


# --- deterministic generation ---------------------------------------------------

@pytest.mark.parametrize("prec", list(Precision))
def test_gen_tensor_deterministic_and_in_range(prec):
    a = gen_tensor(42, (3, 5, 7), prec)
    b = gen_tensor(42, (3, 5, 7), prec)
    c = gen_tensor(43, (3, 5, 7), prec)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)
    assert a.values.shape == (3, 5, 7)
    assert a.values.min() >= prec.lo and a.values.max() <= prec.hi


def test_gen_tensor_not_constant():
    t = gen_tensor(0, (4, 8, 8), P8)
    assert len(np.unique(t.values)) > 30     # actually spreads over the range


def test_gen_weights_shape():
    lay = LayerSpec("l", 6, 10, 3, 8, 8)
    w = gen_weights(1, lay, P8)
    assert w.shape == (10, 6, 3, 3)
    assert np.array_equal(w, gen_weights(1, lay, P8))
    # weights use a different stream than inputs with the same seed
    t = gen_tensor(1, (60, 3, 3), P8)
    assert not np.array_equal(w.reshape(60, 3, 3), t.values)


def test_tensor_validation():
    with pytest.raises(ShapeMismatch):
        Tensor(np.zeros((4, 4), dtype=np.int64), P8)         # not 3-d
    with pytest.raises(ShapeMismatch):
        Tensor(np.full((1, 1, 1), 200, dtype=np.int64), P8)  # out of range


# --- reference convolution --------------------------------------------------------

def test_conv2d_ref_ones_kernel():
    # all-ones 3x3 kernel over an all-ones 2-channel map: interior sums 18
    lay = LayerSpec("ones", 2, 1, 3, 4, 4, 1, 1)
    x = np.ones((2, 4, 4), dtype=np.int64)
    w = np.ones((1, 2, 3, 3), dtype=np.int64)
    out = conv2d_ref(x, w, lay, shift=0, precision=P16)
    assert out.shape == (1, 4, 4)
    assert out[0, 1, 1] == 18                 # full window
    assert out[0, 0, 0] == 8                  # corner: 2x2 window x 2 ch
    assert out[0, 0, 1] == 12                 # edge: 2x3 window x 2 ch


def test_conv2d_ref_stride_and_identity():
    lay = LayerSpec("id", 1, 1, 1, 6, 6, 2, 0)
    x = np.arange(36, dtype=np.int64).reshape(1, 6, 6)
    w = np.ones((1, 1, 1, 1), dtype=np.int64)
    out = conv2d_ref(x, w, lay, shift=0, precision=P16)
    assert np.array_equal(out, x[:, ::2, ::2])


def test_conv2d_ref_linearity():
    lay = LayerSpec("lin", 3, 2, 3, 6, 6, 1, 1)
    x = gen_tensor(5, (3, 6, 6), P4).values
    w = gen_weights(6, lay, P4)
    one = conv2d_ref(x, w, lay, shift=0, precision=P16)
    two = conv2d_ref(x, 2 * w, lay, shift=1, precision=P16)
    assert np.array_equal(one, two)          # (2*acc) >> 1 == acc, no clamping


def test_conv2d_ref_shape_checks():
    lay = LayerSpec("s", 2, 1, 3, 4, 4, 1, 1)
    with pytest.raises(ShapeMismatch):
        conv2d_ref(np.zeros((3, 4, 4)), np.zeros((1, 2, 3, 3)), lay, 0, P8)
    with pytest.raises(ShapeMismatch):
        conv2d_ref(np.zeros((2, 4, 4)), np.zeros((1, 2, 5, 5)), lay, 0, P8)


def test_conv2d_ref_wraps_32_bits():
    # accumulate past 2^31: the oracle must wrap exactly like the hardware
    lay = LayerSpec("wrap", 1, 1, 1, 1, 1)
    x = np.full((1, 1, 1), 32767, dtype=np.int64)
    w = np.full((1, 1, 1, 1), 32767, dtype=np.int64)
    out = conv2d_ref(x, w, lay, shift=0, precision=P16)
    assert out[0, 0, 0] == 32767            # clamped after exact 32-bit acc


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**20))
def test_conv2d_ref_zero_weights_property(seed):
    lay = LayerSpec("z", 4, 4, 3, 6, 6, 1, 1)
    x = gen_tensor(seed, (4, 6, 6), P8).values
    out = conv2d_ref(x, np.zeros((4, 4, 3, 3), dtype=np.int64), lay, 0, P8)
    assert not out.any()


# --- model tables -------------------------------------------------------------------

def test_model_names_all_load():
    for name in MODEL_NAMES:
        layers = model_layers(name)
        assert layers and all(isinstance(l, LayerSpec) for l in layers)


def test_googlenet_has_mixed_kernel_sizes():
    ks = {l.k for l in model_layers("googlenet")}
    assert 1 in ks and 3 in ks and 5 in ks


def test_vgg16_all_3x3():
    layers = model_layers("vgg16")
    assert len(layers) == 13
    assert all(l.k == 3 and l.stride == 1 for l in layers)
    assert layers[0].cin == 3


def test_resnet18_downsamples():
    layers = model_layers("resnet18")
    assert layers[0].k == 7 and layers[0].stride == 2
    assert any(l.stride == 2 and l.k == 1 for l in layers)  # shortcut convs


def test_unknown_model():
    with pytest.raises(UnknownModel):
        model_layers("lenet99")


def test_model_parser_rejects():
    with pytest.raises(ParseError):
        _parse_models_file("m", "conv1 1 2 3\n")       # wrong field count
    with pytest.raises(ParseError):
        _parse_models_file("m", "conv1 a 2 3 4 5 6 7\n")
    with pytest.raises(ParseError):
        _parse_models_file("m", "# only comments\n")


# --- binary tensor files ---------------------------------------------------------------

@pytest.mark.parametrize("prec", list(Precision))
def test_dump_load_roundtrip(tmp_path, prec):
    t = gen_tensor(9, (5, 4, 6), prec)
    path = str(tmp_path / "t.bin")
    dump_tensor(t, path)
    back = load_tensor(path)
    assert back.precision is prec
    assert np.array_equal(back.values, t.values)


def test_load_rejects_bad_magic(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 12)
    with pytest.raises(ParseError):
        load_tensor(str(path))
