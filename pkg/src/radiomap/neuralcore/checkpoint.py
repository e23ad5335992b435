"""Binary parameter checkpoints (little-endian, ``RNET1``).

Layout: magic, ``u32`` layer count, then per layer ``u8`` kind code,
``u8`` count of static dims followed by those dims as ``u32``, ``u8`` tensor
count, and per tensor ``u8`` ndim, ``u32`` dims and raw float32 data.
"""
import io
import struct
from pathlib import Path

import numpy as np

from radiomap.neuralcore.layers import (
    AvgPool, Chain, Conv2D, Conv2DTranspose, Dense, PLReLU, Reshape, Upsample,
)

MAGIC = b"RNET1"
KIND_CODES = {"conv": 0, "conv_transpose": 1, "avg_pool": 2, "upsample": 3, "dense": 4,
              "plrelu": 5, "reshape": 6}


def _static_dims(layer):
    if isinstance(layer, (Conv2D, Conv2DTranspose)):
        return (layer.c_in, layer.c_out)
    if isinstance(layer, Dense):
        return (layer.n_in, layer.n_out)
    if isinstance(layer, Reshape):
        return layer.shape
    return ()


def _make_layer(kind, dims):
    if kind == "conv":
        return Conv2D(*dims)
    if kind == "conv_transpose":
        return Conv2DTranspose(*dims)
    if kind == "dense":
        return Dense(*dims)
    if kind == "reshape":
        return Reshape(dims)
    if kind == "avg_pool":
        return AvgPool()
    if kind == "upsample":
        return Upsample()
    if kind == "plrelu":
        return PLReLU()
    raise ValueError(f"unknown layer kind {kind!r}")


def chain_to_bytes(chain: Chain) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(chain.layers)))
    for layer in chain.layers:
        dims = _static_dims(layer)
        buf.write(struct.pack("<BB", KIND_CODES[layer.kind], len(dims)))
        buf.write(struct.pack(f"<{len(dims)}I", *dims))
        tensors = getattr(layer, "params", [])
        buf.write(struct.pack("<B", len(tensors)))
        for t in tensors:
            buf.write(struct.pack("<B", t.ndim))
            buf.write(struct.pack(f"<{t.ndim}I", *t.shape))
            buf.write(np.ascontiguousarray(t, dtype="<f4").tobytes())
    return buf.getvalue()


def chain_from_bytes(raw: bytes, dtype=np.float32, offset: int = 0) -> tuple[Chain, int]:
    """Rebuild a chain; returns it with the offset just past its record."""
    if raw[offset:offset + 5] != MAGIC:
        raise ValueError("not a network checkpoint (bad magic)")
    pos = offset + 5
    (n_layers,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    codes = {v: k for k, v in KIND_CODES.items()}
    layers, blobs = [], []
    for _ in range(n_layers):
        code, ndims = struct.unpack_from("<BB", raw, pos)
        pos += 2
        dims = struct.unpack_from(f"<{ndims}I", raw, pos)
        pos += 4 * ndims
        layers.append(_make_layer(codes[code], dims))
        (nt,) = struct.unpack_from("<B", raw, pos)
        pos += 1
        tensors = []
        for _ in range(nt):
            (nd,) = struct.unpack_from("<B", raw, pos)
            pos += 1
            shape = struct.unpack_from(f"<{nd}I", raw, pos)
            pos += 4 * nd
            count = int(np.prod(shape))
            tensors.append(np.frombuffer(raw, dtype="<f4", count=count, offset=pos).reshape(shape))
            pos += 4 * count
        blobs.append(tensors)
    chain = Chain(layers, dtype=dtype)
    for layer, tensors in zip(chain.layers, blobs):
        expected = layer.param_shapes()
        if [t.shape for t in tensors] != [tuple(s) for s in expected]:
            raise ValueError(f"tensor shapes do not match layer {layer!r}")
        for view, t in zip(getattr(layer, "params", []), tensors):
            view[...] = t
    return chain, pos


def save_chain(chain: Chain, path) -> None:
    Path(path).write_bytes(chain_to_bytes(chain))


def load_chain(path, dtype=np.float32) -> Chain:
    return chain_from_bytes(Path(path).read_bytes(), dtype)[0]
