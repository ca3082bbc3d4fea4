"""Benchmark layer tables, deterministic tensors, and the convolution oracle.

Model tables live under data/models/ as plain text, one conv layer per line:
    name cin cout k stride pad h w
Tensors dump/load as little-endian binary with a 16-byte header:
    magic "VST1", precision code u16 (4|8|16), dims c,h,w as u16 u32 u32.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .dataflow import LayerSpec, requantize
from .errors import ParseError, ShapeMismatch, UnknownModel
from .isa import Precision

MODEL_NAMES = ("vgg16", "resnet18", "googlenet", "squeezenet")


@dataclass(frozen=True)
class Tensor:
    values: np.ndarray           # (c, h, w) int
    precision: Precision

    def __post_init__(self):
        v = self.values
        if v.ndim != 3:
            raise ShapeMismatch("tensors are (c, h, w)")
        if v.size and (v.min() < self.precision.lo
                       or v.max() > self.precision.hi):
            raise ShapeMismatch("values outside precision range")


# ---------------------------------------------------------------------------
# deterministic generation (counter-based splitmix64: the xorshift-multiply
# finalizer makes every (seed, index) pair an independent draw, so generation
# vectorizes without a sequential state walk)

def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = (x + np.uint64(0x9E3779B97F4A7C15))
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def gen_tensor(seed: int, dims: tuple, precision: Precision) -> Tensor:
    c, h, w = dims
    n = c * h * w
    with np.errstate(over="ignore"):
        idx = np.arange(n, dtype=np.uint64) + np.uint64(seed) \
            * np.uint64(0x100000001B3)
        bits = _splitmix64(idx)
    span = precision.hi - precision.lo + 1
    vals = (bits % np.uint64(span)).astype(np.int64) + precision.lo
    return Tensor(vals.reshape(c, h, w), precision)


def gen_weights(seed: int, layer: LayerSpec, precision: Precision) -> np.ndarray:
    t = gen_tensor(seed ^ 0x57EA11, (layer.cout * layer.cin, layer.k, layer.k),
                   precision)
    return t.values.reshape(layer.cout, layer.cin, layer.k, layer.k)


# ---------------------------------------------------------------------------
# reference oracle

def conv2d_ref(x: np.ndarray, weights: np.ndarray, layer: LayerSpec,
               shift: int, precision: Precision) -> np.ndarray:
    """Integer convolution with 32-bit wrapping accumulation, then requantize.

    Matches the simulator bit for bit: zero padding, stride, channel padding
    to ic_par (zeros contribute nothing), identical requantize function.
    """
    x = np.asarray(x, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.int64)
    if x.shape != (layer.cin, layer.h, layer.w):
        raise ShapeMismatch(f"input {x.shape} vs layer "
                            f"({layer.cin},{layer.h},{layer.w})")
    if weights.shape != (layer.cout, layer.cin, layer.k, layer.k):
        raise ShapeMismatch(f"weights {weights.shape} mismatch")
    k, s, p = layer.k, layer.stride, layer.pad
    xp = np.zeros((layer.cin, layer.h + 2 * p, layer.w + 2 * p),
                  dtype=np.int64)
    xp[:, p:p + layer.h, p:p + layer.w] = x
    acc = np.zeros((layer.cout, layer.oh, layer.ow), dtype=np.int64)
    for ky in range(k):
        for kx in range(k):
            win = xp[:, ky:ky + layer.oh * s:s, kx:kx + layer.ow * s:s]
            acc += np.tensordot(weights[:, :, ky, kx], win, axes=(1, 0))
    wrapped = (acc & 0xFFFFFFFF).astype(np.uint32).astype(np.int32)
    return requantize(wrapped, precision, shift)


# ---------------------------------------------------------------------------
# model tables

def _parse_models_file(name: str, text: str) -> list:
    layers = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 8:
            raise ParseError(lineno, f"expected 8 fields, got {len(parts)}")
        lname = parts[0]
        try:
            cin, cout, k, stride, pad, h, w = map(int, parts[1:])
        except ValueError:
            raise ParseError(lineno, f"bad integer in {raw!r}")
        layers.append(LayerSpec(lname, cin, cout, k, h, w, stride, pad))
    if not layers:
        raise ParseError(0, f"{name}: empty model table")
    return layers


def model_layers(name: str) -> list:
    """Conv layers of a named benchmark, from the shipped data tables."""
    key = name.lower()
    if key not in MODEL_NAMES:
        raise UnknownModel(f"{name}; known: {', '.join(MODEL_NAMES)}")
    text = resources.files("vsasim.data.models").joinpath(
        f"{key}.txt").read_text()
    return _parse_models_file(key, text)


# ---------------------------------------------------------------------------
# binary tensor files

_MAGIC = b"VST1"


def dump_tensor(t: Tensor, path: str) -> None:
    header = _MAGIC + struct.pack("<HHII", t.precision.bits,
                                  t.values.shape[0], t.values.shape[1],
                                  t.values.shape[2])
    assert len(header) == 16
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(t.values.astype("<i4").tobytes())


def load_tensor(path: str) -> Tensor:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if header[:4] != _MAGIC:
            raise ParseError(0, "not a tensor file")
        bits, c, h, w = struct.unpack("<HHII", header[4:])
        prec = Precision.from_bits(bits)
        vals = np.frombuffer(fh.read(c * h * w * 4), dtype="<i4")
    return Tensor(vals.astype(np.int64).reshape(c, h, w), prec)
