"""POFT tensor container.

Layout (all little-endian)::

    b"POFT" | version u16 | dtype code u8 | ndim u8 | dims u32 * ndim | payload

The payload is row-major. Dtype codes: 1 = float32, 2 = float64, 3 = uint8,
4 = int32.
"""

import struct

import numpy as np

MAGIC = b"POFT"
VERSION = 1
DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("u1"), 4: np.dtype("<i4")}


class ContainerError(ValueError):
    """Raised for files that are not valid POFT containers."""


def encode(array):
    a = np.asarray(array)
    code = next((c for c, dt in DTYPES.items()
                 if a.dtype.kind == dt.kind and a.dtype.itemsize == dt.itemsize), None)
    if code is None:
        raise ContainerError(f"unsupported dtype {a.dtype}")
    if a.ndim > 255:
        raise ContainerError("too many dimensions")
    header = MAGIC + struct.pack("<HBB", VERSION, code, a.ndim)
    header += struct.pack(f"<{a.ndim}I", *a.shape)
    payload = np.ascontiguousarray(a, dtype=DTYPES[code]).tobytes()
    return header + payload


def decode(buf):
    buf = bytes(buf)
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise ContainerError("bad container: missing POFT magic")
    version, code, ndim = struct.unpack_from("<HBB", buf, 4)
    if version != VERSION:
        raise ContainerError(f"bad container: unsupported version {version}")
    if code not in DTYPES:
        raise ContainerError(f"bad container: unknown dtype code {code}")
    off = 8 + 4 * ndim
    if len(buf) < off:
        raise ContainerError("bad container: truncated header")
    dims = struct.unpack_from(f"<{ndim}I", buf, 8)
    dt = DTYPES[code]
    n = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    if len(buf) != off + n * dt.itemsize:
        raise ContainerError("bad container: payload size does not match header")
    return np.frombuffer(buf, dtype=dt, count=n, offset=off).reshape(dims).copy()


def save(path, array):
    with open(path, "wb") as f:
        f.write(encode(array))


def load(path):
    with open(path, "rb") as f:
        return decode(f.read())
