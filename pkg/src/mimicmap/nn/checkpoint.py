"""Binary network snapshots.

Layout (all little-endian):

    magic "MMCK" | version u16 | layer count u16
    per layer: kind tag u8, then kind-specific payload
        dense:      n_out u32, n_in u32, weights f32[n_out*n_in] row-major,
                    bias f32[n_out]
        batch norm: dim u32, momentum f64, epsilon f64,
                    gamma/beta/running_mean/running_var f32[dim] each
        leaky relu: slope f64
        dropout:    rate f64
        relu, softmax: no payload
    metadata: byte length u32, canonical UTF-8 JSON

Parameters and statistics are stored as 32-bit floats; training state is
64-bit, so save/load is lossy once but idempotent afterwards (reload and
re-save is byte-identical).
"""

import json
import struct
from pathlib import Path

import numpy as np

from .layers import BatchNorm, Dense, Dropout, LeakyRelu, Relu, Softmax
from .network import Network

MAGIC = b"MMCK"
VERSION = 1

_TAG_DENSE = 1
_TAG_BATCHNORM = 2
_TAG_RELU = 3
_TAG_LEAKY_RELU = 4
_TAG_DROPOUT = 5
_TAG_SOFTMAX = 6


def _f32_bytes(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def serialize_network(network: Network, metadata: dict | None = None) -> bytes:
    parts = [MAGIC, struct.pack("<HH", VERSION, len(network.layers))]
    for layer in network.layers:
        if isinstance(layer, Dense):
            parts.append(struct.pack("<BII", _TAG_DENSE, layer.n_out, layer.n_in))
            parts.append(_f32_bytes(layer.weights))
            parts.append(_f32_bytes(layer.bias))
        elif isinstance(layer, BatchNorm):
            parts.append(
                struct.pack("<BIdd", _TAG_BATCHNORM, layer.dim, layer.momentum, layer.epsilon)
            )
            for a in (layer.gamma, layer.beta, layer.running_mean, layer.running_var):
                parts.append(_f32_bytes(a))
        elif isinstance(layer, Relu):
            parts.append(struct.pack("<B", _TAG_RELU))
        elif isinstance(layer, LeakyRelu):
            parts.append(struct.pack("<Bd", _TAG_LEAKY_RELU, layer.slope))
        elif isinstance(layer, Dropout):
            parts.append(struct.pack("<Bd", _TAG_DROPOUT, layer.rate))
        elif isinstance(layer, Softmax):
            parts.append(struct.pack("<B", _TAG_SOFTMAX))
        else:
            raise TypeError(f"cannot serialize layer type {type(layer).__name__}")
    meta_bytes = json.dumps(
        metadata or {}, sort_keys=True, separators=(",", ":"), allow_nan=False
    ).encode("utf-8")
    parts.append(struct.pack("<I", len(meta_bytes)))
    parts.append(meta_bytes)
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        vals = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return vals

    def f32_array(self, count: int) -> np.ndarray:
        end = self.pos + 4 * count
        a = np.frombuffer(self.data[self.pos : end], dtype="<f4").astype(np.float64)
        self.pos = end
        return a


def deserialize_network(data: bytes) -> tuple[Network, dict]:
    if data[:4] != MAGIC:
        raise ValueError("not a checkpoint: bad magic")
    r = _Reader(data)
    r.pos = 4
    version, n_layers = r.unpack("<HH")
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    layers = []
    for _ in range(n_layers):
        (tag,) = r.unpack("<B")
        if tag == _TAG_DENSE:
            n_out, n_in = r.unpack("<II")
            w = r.f32_array(n_out * n_in).reshape(n_out, n_in)
            b = r.f32_array(n_out)
            layers.append(Dense(w, b))
        elif tag == _TAG_BATCHNORM:
            dim, momentum, epsilon = r.unpack("<Idd")
            bn = BatchNorm(dim, momentum=momentum, epsilon=epsilon)
            bn.gamma = r.f32_array(dim)
            bn.beta = r.f32_array(dim)
            bn.running_mean = r.f32_array(dim)
            bn.running_var = r.f32_array(dim)
            layers.append(bn)
        elif tag == _TAG_RELU:
            layers.append(Relu())
        elif tag == _TAG_LEAKY_RELU:
            (slope,) = r.unpack("<d")
            layers.append(LeakyRelu(slope))
        elif tag == _TAG_DROPOUT:
            (rate,) = r.unpack("<d")
            layers.append(Dropout(rate))
        elif tag == _TAG_SOFTMAX:
            layers.append(Softmax())
        else:
            raise ValueError(f"unknown layer tag {tag}")
    (meta_len,) = r.unpack("<I")
    metadata = json.loads(data[r.pos : r.pos + meta_len].decode("utf-8"))
    return Network(layers), metadata


def save_checkpoint(path, network: Network, metadata: dict | None = None) -> None:
    Path(path).write_bytes(serialize_network(network, metadata))


def load_checkpoint(path) -> tuple[Network, dict]:
    return deserialize_network(Path(path).read_bytes())
