"""Binary checkpoint format.

Layout (all integers unsigned 32-bit little-endian)::

    b"PPMN" | version | tensor count
    per tensor: name length | UTF-8 name | rank | extents... | float32 LE values
"""
import struct
from collections import OrderedDict

import numpy as np

from .errors import DatasetError

MAGIC = b"PPMN"
VERSION = 1


def encode_checkpoint(tensors, version=VERSION):
    parts = [MAGIC, struct.pack("<II", version, len(tensors))]
    for name, value in tensors.items():
        raw = name.encode("utf-8")
        value = np.asarray(value)
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack(f"<I{value.ndim}I", value.ndim, *value.shape))
        parts.append(np.ascontiguousarray(value, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_checkpoint(data):
    view = memoryview(data)
    if bytes(view[:4]) != MAGIC:
        raise DatasetError("not a PPMN checkpoint (bad magic)")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(view):
            raise DatasetError("truncated checkpoint")
        out = struct.unpack_from(fmt, view, pos)
        pos += size
        return out

    version, count = take("<II")
    if version != VERSION:
        raise DatasetError(f"unsupported checkpoint version {version}")
    tensors = OrderedDict()
    for _ in range(count):
        (nlen,) = take("<I")
        name = bytes(take(f"<{nlen}s")[0]).decode("utf-8")
        (rank,) = take("<I")
        shape = take(f"<{rank}I")
        n = int(np.prod(shape, dtype=np.int64))
        if pos + 4 * n > len(view):
            raise DatasetError(f"truncated checkpoint while reading {name!r}")
        tensors[name] = np.frombuffer(view, dtype="<f4", count=n, offset=pos).reshape(shape).astype(np.float32)
        pos += 4 * n
    if pos != len(view):
        raise DatasetError("trailing bytes after checkpoint payload")
    return tensors


def save_checkpoint(path, tensors):
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(tensors))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())
