"""Binary checkpoint with byte-exact round trips.

Layout (all integers little-endian):

    magic   5 bytes  b"SQZG1"
    version u32      currently 1
    conf    u32 length + utf-8 config text (canonical key=value lines)
    count   u32 number of sections
    section u16 name length, name utf-8,
            u8 dtype tag (0 = float32, 1 = float64),
            u8 ndim, u32 per-dimension extents,
            raw little-endian scalar payload
"""

import os
import struct

import numpy as np

from .errors import ConfigError

MAGIC = b"SQZG1"
VERSION = 1

_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAG_FOR = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def atomic_write(path: str, payload: bytes):
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def serialize(config_text: str, arrays: dict) -> bytes:
    out = [MAGIC, struct.pack("<I", VERSION)]
    conf = config_text.encode("utf-8")
    out.append(struct.pack("<I", len(conf)))
    out.append(conf)
    out.append(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in _TAG_FOR:
            raise ConfigError(f"section {name!r}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack("<BB", _TAG_FOR[arr.dtype], arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    return b"".join(out)


def save(path: str, config_text: str, arrays: dict):
    atomic_write(path, serialize(config_text, arrays))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise ConfigError("truncated checkpoint")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def deserialize(blob: bytes):
    r = _Reader(blob)
    if r.take(len(MAGIC)) != MAGIC:
        raise ConfigError("bad checkpoint magic")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise ConfigError(f"unsupported checkpoint version {version}")
    (conf_len,) = r.unpack("<I")
    config_text = r.take(conf_len).decode("utf-8")
    (count,) = r.unpack("<I")
    arrays = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        tag, ndim = r.unpack("<BB")
        if tag not in _DTYPE_TAGS:
            raise ConfigError(f"section {name!r}: unknown dtype tag {tag}")
        shape = r.unpack(f"<{ndim}I")
        dtype = _DTYPE_TAGS[tag]
        n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        arr = np.frombuffer(r.take(n_bytes), dtype=dtype).reshape(shape)
        arrays[name] = arr.astype(dtype.newbyteorder("="))
    if r.pos != len(blob):
        raise ConfigError("trailing bytes after last checkpoint section")
    return config_text, arrays


def load(path: str):
    with open(path, "rb") as fh:
        return deserialize(fh.read())
