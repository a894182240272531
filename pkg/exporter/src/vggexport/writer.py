"""Standalone writer for the NNWB weight-bundle container.

The format is implemented from scratch here, independently of any reader,
so the file itself stays the contract between exporter and consumer.
Layout, all integers little-endian:

    magic "NNWB" | u32 version=1 | u32 tensor_count
    per tensor: u16 name_len | name UTF-8 | u8 dtype (0 = f32) | u8 rank
                | u64 dims[rank] | raw <f4 data, row-major
    u32 metadata_len | metadata UTF-8 JSON (sorted keys, compact)
    u64 checksum, FNV-1a over every preceding byte

Tensors serialize in the iteration order of the mapping passed in and the
metadata JSON is canonicalized, so identical inputs always produce
byte-identical files.
"""

import json
import struct

import numpy as np

MAGIC = b"NNWB"
VERSION = 1
DTYPE_F32 = 0

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def _fnv1a_pure(h, data):
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & _MASK64
    return h


try:
    from numba import njit, types

    _sig = types.uint64(types.uint64, types.Array(types.uint8, 1, "C", readonly=True))

    @njit(_sig, cache=True)
    def _fnv1a_jit(h, buf):  # pragma: no cover - jit kernel
        prime = np.uint64(FNV_PRIME)
        for i in range(buf.size):
            h = (h ^ np.uint64(buf[i])) * prime
        return h

    def fnv1a_update(h, data):
        if isinstance(data, (bytes, bytearray, memoryview)):
            buf = np.frombuffer(data, dtype=np.uint8)
        else:
            buf = np.ascontiguousarray(data).view(np.uint8).ravel()
        return int(_fnv1a_jit(np.uint64(h), np.ascontiguousarray(buf)))

except Exception:  # pragma: no cover - plain fallback without numba

    def fnv1a_update(h, data):
        if not isinstance(data, (bytes, bytearray, memoryview)):
            data = np.ascontiguousarray(data).tobytes()
        return _fnv1a_pure(h, data)


class _HashingFile:
    """Forwards writes to a file while folding every byte into the hash."""

    def __init__(self, fh):
        self.fh = fh
        self.h = FNV_OFFSET

    def write(self, data):
        self.h = fnv1a_update(self.h, data)
        if not isinstance(data, (bytes, bytearray)):
            data = np.ascontiguousarray(data).tobytes()
        self.fh.write(data)


def write_nnwb(path, tensors, metadata) -> int:
    """Serialize ``name -> float32 array`` pairs plus a metadata dict.

    Returns the 64-bit checksum that was appended to the file.
    """
    with open(path, "wb") as fh:
        sink = _HashingFile(fh)
        sink.write(MAGIC)
        sink.write(struct.pack("<II", VERSION, len(tensors)))
        for name, arr in tensors.items():
            a = np.ascontiguousarray(arr, dtype="<f4")
            nb = name.encode("utf-8")
            if len(nb) > 0xFFFF:
                raise ValueError(f"tensor name too long: {name[:40]}...")
            sink.write(struct.pack("<H", len(nb)))
            sink.write(nb)
            sink.write(struct.pack("<BB", DTYPE_F32, a.ndim))
            sink.write(struct.pack(f"<{a.ndim}Q", *a.shape))
            sink.write(a)
        meta = json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
        sink.write(struct.pack("<I", len(meta)))
        sink.write(meta)
        fh.write(struct.pack("<Q", sink.h))
        return sink.h
