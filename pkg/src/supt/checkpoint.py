"""Binary checkpoints: magic SUPT, version, length-prefixed tensor records.

Layout (all integers little-endian):

    b"SUPT" | version u32 | payload_len u64 | payload | crc32(payload) u32

The payload is a sequence of named records; float64 and int64 arrays are
stored raw, boolean masks as packed bits, and one JSON record carries the
scalar state (iteration counter, master seed, accumulator counters, ...).
Round trips are byte-exact.
"""

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointIntegrityError, CheckpointVersionError

MAGIC = b"SUPT"
VERSION = 1

_F64, _I64, _BITS, _JSON = 0, 1, 2, 3


@dataclass
class CheckpointState:
    """Named arrays plus a JSON-serializable metadata dict."""

    tensors: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def _pack_record(name: str, kind: int, dims, data: bytes) -> bytes:
    name_b = name.encode("utf-8")
    head = struct.pack("<H", len(name_b)) + name_b
    head += struct.pack("<BB", kind, len(dims))
    head += struct.pack(f"<{len(dims)}Q", *dims) if dims else b""
    head += struct.pack("<Q", len(data))
    return head + data


def _encode(state: CheckpointState) -> bytes:
    parts = []
    for name, arr in state.tensors.items():
        arr = np.asarray(arr)
        if arr.dtype == bool:
            packed = np.packbits(arr.reshape(-1)).tobytes()
            parts.append(_pack_record(name, _BITS, arr.shape, packed))
        elif np.issubdtype(arr.dtype, np.integer):
            parts.append(_pack_record(name, _I64, arr.shape,
                                      arr.astype("<i8").tobytes()))
        else:
            parts.append(_pack_record(name, _F64, arr.shape,
                                      arr.astype("<f8").tobytes()))
    meta = json.dumps(state.meta, sort_keys=True).encode("utf-8")
    parts.append(_pack_record("__meta__", _JSON, (), meta))
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointIntegrityError("truncated checkpoint payload")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def done(self) -> bool:
        return self.pos == len(self.buf)


def _decode(payload: bytes) -> CheckpointState:
    state = CheckpointState()
    r = _Reader(payload)
    while not r.done():
        (name_len,) = struct.unpack("<H", r.take(2))
        name = r.take(name_len).decode("utf-8")
        kind, ndim = struct.unpack("<BB", r.take(2))
        dims = struct.unpack(f"<{ndim}Q", r.take(8 * ndim)) if ndim else ()
        (data_len,) = struct.unpack("<Q", r.take(8))
        data = r.take(data_len)
        if kind == _F64:
            state.tensors[name] = np.frombuffer(data, "<f8").reshape(dims).copy()
        elif kind == _I64:
            state.tensors[name] = np.frombuffer(data, "<i8").reshape(dims).copy()
        elif kind == _BITS:
            n = int(np.prod(dims)) if dims else 0
            bits = np.unpackbits(np.frombuffer(data, np.uint8), count=n)
            state.tensors[name] = bits.astype(bool).reshape(dims)
        elif kind == _JSON:
            state.meta = json.loads(data.decode("utf-8"))
        else:
            raise CheckpointIntegrityError(f"unknown record kind {kind}")
    return state


def save_checkpoint(path, state: CheckpointState) -> None:
    payload = _encode(state)
    blob = MAGIC + struct.pack("<I", VERSION)
    blob += struct.pack("<Q", len(payload)) + payload
    blob += struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)
    with open(path, "wb") as f:
        f.write(blob)


def load_checkpoint(path) -> CheckpointState:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise CheckpointIntegrityError("not a SUPT checkpoint")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise CheckpointVersionError(
            f"checkpoint version {version}, expected {VERSION}")
    (payload_len,) = struct.unpack_from("<Q", blob, 8)
    if len(blob) != 16 + payload_len + 4:
        raise CheckpointIntegrityError("checkpoint length mismatch")
    payload = blob[16:16 + payload_len]
    (crc,) = struct.unpack_from("<I", blob, 16 + payload_len)
    if crc != (zlib.crc32(payload) & 0xFFFFFFFF):
        raise CheckpointIntegrityError("checkpoint checksum mismatch")
    return _decode(payload)
