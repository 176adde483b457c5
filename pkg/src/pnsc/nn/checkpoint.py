"""Binary model checkpoints.

Layout (all integers little-endian)::

    b"PNSC"  u16 version  u8 len + kind (ascii)  u32 len + metadata (utf-8 JSON)
    u16 n_layers, then per layer: u8 kind code, u8 len + name, u8 ndims, u32 dims...
    f32 payload of every layer's tensors, in manifest order

The weights are kept in float64 while training and narrowed to float32 here.
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np

from .layers import LayerSpec

MAGIC = b"PNSC"
VERSION = 1
_KIND_CODES = {"dense": 1, "gru": 2, "embedding": 3}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}


class CheckpointError(ValueError):
    pass


def _pack_str(fmt: str, s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack(fmt, len(raw)) + raw


def dump_checkpoint(kind: str, manifest: list[LayerSpec], arrays: list[np.ndarray], metadata: dict | None = None) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<H", VERSION))
    out.write(_pack_str("<B", kind))
    out.write(_pack_str("<I", json.dumps(metadata or {}, sort_keys=True, separators=(",", ":"))))
    out.write(struct.pack("<H", len(manifest)))
    for spec in manifest:
        out.write(struct.pack("<B", _KIND_CODES[spec.kind]))
        out.write(_pack_str("<B", spec.name))
        out.write(struct.pack("<B", len(spec.dims)))
        out.write(struct.pack(f"<{len(spec.dims)}I", *spec.dims))
    shapes = [shape for spec in manifest for shape in spec.shapes()]
    if len(shapes) != len(arrays):
        raise CheckpointError(f"{len(arrays)} arrays for {len(shapes)} manifest tensors")
    for shape, arr in zip(shapes, arrays):
        if tuple(np.shape(arr)) != shape:
            raise CheckpointError(f"array shape {np.shape(arr)} != manifest shape {shape}")
        out.write(np.asarray(arr, dtype="<f4").tobytes())
    return out.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"checkpoint truncated at byte {self.pos}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self, fmt: str) -> str:
        (n,) = self.unpack(fmt)
        return self.take(n).decode("utf-8")


def load_checkpoint(data: bytes) -> tuple[str, list[LayerSpec], list[np.ndarray], dict]:
    """Inverse of :func:`dump_checkpoint`; arrays come back as float64."""
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError("bad checkpoint magic")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    kind = r.string("<B")
    metadata = json.loads(r.string("<I"))
    (n_layers,) = r.unpack("<H")
    manifest = []
    for _ in range(n_layers):
        (code,) = r.unpack("<B")
        if code not in _CODE_KINDS:
            raise CheckpointError(f"unknown layer code {code}")
        name = r.string("<B")
        (ndims,) = r.unpack("<B")
        dims = r.unpack(f"<{ndims}I")
        manifest.append(LayerSpec(_CODE_KINDS[code], name, tuple(dims)))
    arrays = []
    for spec in manifest:
        for shape in spec.shapes():
            n = int(np.prod(shape))
            arr = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape)
            arrays.append(arr.astype(np.float64))
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after payload")
    return kind, manifest, arrays, metadata
