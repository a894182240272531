"""Reader and writer for the NNWB portable weight-bundle format.

Layout (all integers little-endian):

    magic "NNWB" | u32 version=1 | u32 tensor_count
    per tensor: u16 name_len | name UTF-8 | u8 dtype (0 = f32) | u8 rank
                | u64 dims[rank] | raw f32 data, row-major
    u32 metadata_len | metadata UTF-8 JSON
    u64 checksum, FNV-1a over every preceding byte

The metadata JSON carries preprocess_mean, preprocess_scale (multiplier
applied after mean subtraction), input_side, labels_file, provenance.

This module knows nothing about network architectures; it moves named
tensors and a metadata dict in and out of files.
"""

import json
import struct

import numpy as np

from .errors import FormatError, TruncatedFileError

MAGIC = b"NNWB"
VERSION = 1
DTYPE_F32 = 0

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def _fnv1a_py(h, buf):
    for b in buf:
        h = ((h ^ b) * FNV_PRIME) & _MASK64
    return h


try:
    from numba import njit, types

    _sig = types.uint64(types.uint64, types.Array(types.uint8, 1, "C", readonly=True))

    @njit(_sig, cache=True)
    def _fnv1a_nb(h, buf):  # pragma: no cover - thin jit wrapper
        prime = np.uint64(FNV_PRIME)
        for i in range(buf.size):
            h = (h ^ np.uint64(buf[i])) * prime
        return h

    def _fnv1a_chunk(h, buf):
        return int(_fnv1a_nb(np.uint64(h), buf))

except Exception:  # pragma: no cover - exercised only without numba

    def _fnv1a_chunk(h, buf):
        return _fnv1a_py(h, buf.tobytes())


def fnv1a_update(h: int, data) -> int:
    """Fold ``data`` (bytes or any contiguous array) into a running hash."""
    buf = np.ascontiguousarray(np.frombuffer(data, dtype=np.uint8)) if isinstance(
        data, (bytes, bytearray, memoryview)
    ) else np.ascontiguousarray(data).view(np.uint8).ravel()
    return _fnv1a_chunk(h, buf)


def fnv1a(data) -> int:
    return fnv1a_update(FNV_OFFSET, data)


class _HashingSink:
    """File-like target that hashes whatever passes through it.

    ``fh`` may be None, in which case nothing is stored: this is how an
    in-memory bundle computes the checksum its serialized form would have.
    """

    def __init__(self, fh=None):
        self.fh = fh
        self.h = FNV_OFFSET

    def write(self, data):
        self.h = fnv1a_update(self.h, data)
        if self.fh is not None:
            self.fh.write(data if isinstance(data, (bytes, bytearray)) else data.tobytes())


def _serialize(sink, tensors, metadata):
    sink.write(MAGIC)
    sink.write(struct.pack("<II", VERSION, len(tensors)))
    for name, arr in tensors.items():
        a = np.ascontiguousarray(arr, dtype="<f4")
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise FormatError(f"tensor name too long: {name[:40]}...")
        sink.write(struct.pack("<H", len(nb)))
        sink.write(nb)
        sink.write(struct.pack("<BB", DTYPE_F32, a.ndim))
        sink.write(struct.pack(f"<{a.ndim}Q", *a.shape))
        sink.write(a)
    meta = json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    sink.write(struct.pack("<I", len(meta)))
    sink.write(meta)


def write_bundle(path, tensors, metadata) -> int:
    """Serialize named tensors plus metadata to ``path``; returns the checksum.

    ``tensors`` iterates in the order written, so the same dict always
    produces byte-identical files.
    """
    with open(path, "wb") as fh:
        sink = _HashingSink(fh)
        _serialize(sink, tensors, metadata)
        fh.write(struct.pack("<Q", sink.h))
        return sink.h


def stream_checksum(tensors, metadata) -> int:
    """Checksum of the bundle ``write_bundle`` would produce, without writing."""
    sink = _HashingSink(None)
    _serialize(sink, tensors, metadata)
    return sink.h


class _Cursor:
    def __init__(self, buf, path):
        self.buf = buf
        self.off = 0
        self.path = path

    def take(self, n):
        if self.off + n > len(self.buf):
            raise TruncatedFileError(
                f"{self.path}: needed {n} bytes at offset {self.off}, "
                f"file holds {len(self.buf)}"
            )
        out = self.buf[self.off : self.off + n]
        self.off += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_bundle(path):
    """Parse an NNWB file into (tensors, metadata, checksum).

    Tensor arrays are read-only views into one shared buffer, keeping a
    large bundle at a single copy in memory.  The trailing checksum is
    verified before anything is returned.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < len(MAGIC) + 8 + 4 + 8:
        raise TruncatedFileError(f"{path}: {len(buf)} bytes is too short for a bundle")
    stored = struct.unpack("<Q", buf[-8:])[0]
    actual = fnv1a(buf[:-8])
    if stored != actual:
        raise FormatError(
            f"{path}: checksum mismatch, stored {stored:016x} != computed {actual:016x}"
        )
    cur = _Cursor(memoryview(buf)[:-8], path)
    if bytes(cur.take(4)) != MAGIC:
        raise FormatError(f"{path}: bad magic, expected NNWB")
    version, count = cur.unpack("<II")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    tensors = {}
    for _ in range(count):
        (name_len,) = cur.unpack("<H")
        name = bytes(cur.take(name_len)).decode("utf-8")
        dtype, rank = cur.unpack("<BB")
        if dtype != DTYPE_F32:
            raise FormatError(f"{path}: tensor {name}: unknown dtype code {dtype}")
        dims = cur.unpack(f"<{rank}Q") if rank else ()
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        raw = cur.take(4 * n)
        arr = np.frombuffer(raw, dtype="<f4").reshape(dims)
        arr.flags.writeable = False
        if name in tensors:
            raise FormatError(f"{path}: duplicate tensor name {name}")
        tensors[name] = arr
    (meta_len,) = cur.unpack("<I")
    try:
        metadata = json.loads(bytes(cur.take(meta_len)).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: metadata is not valid JSON: {exc}") from exc
    if cur.off != len(cur.buf):
        raise FormatError(f"{path}: {len(cur.buf) - cur.off} unexpected trailing bytes")
    return tensors, metadata, stored
