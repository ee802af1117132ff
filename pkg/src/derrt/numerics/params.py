"""Binary parameter files.

Layout (all integers little-endian)::

    magic   8 bytes  b"DERRTPRM"
    version u32
    count   u32
    count x { name_len u16, name utf-8, ndim u32, shape u32 * ndim, data f64 * prod(shape) }

Entries are written in sorted name order so equal parameter sets give equal bytes.
"""
import struct

import numpy as np

MAGIC = b"DERRTPRM"
VERSION = 1


def dumps_params(params: dict) -> bytes:
    out = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name in sorted(params):
        arr = np.ascontiguousarray(np.asarray(params[name], dtype="<f8"))
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def loads_params(blob: bytes) -> dict:
    if blob[:8] != MAGIC:
        raise ValueError("not a parameter file (bad magic)")
    version, count = struct.unpack_from("<II", blob, 8)
    if version != VERSION:
        raise ValueError(f"unsupported parameter file version {version}")
    pos = 16
    params = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos : pos + n].decode("utf-8")
        pos += n
        (ndim,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        params[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(shape).astype(float)
        pos += 8 * size
    if pos != len(blob):
        raise ValueError("trailing bytes in parameter file")
    return params


def save_params(path, params: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps_params(params))


def load_params(path) -> dict:
    with open(path, "rb") as fh:
        return loads_params(fh.read())
