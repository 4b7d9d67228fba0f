"""Binary tensor file format.

Layout: one ASCII header line, then the raw little-endian payload.

    PETLABTF1 <dtype> <dim0> <dim1> ... row-major\\n<payload bytes>

Supported dtype tags: f32, f64, i32, i64. Round-trips are bit-exact.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import DataError

MAGIC = "PETLABTF1"

_DTYPES = {
    "f32": np.dtype("<f4"),
    "f64": np.dtype("<f8"),
    "i32": np.dtype("<i4"),
    "i64": np.dtype("<i8"),
}
_TAGS = {v: k for k, v in _DTYPES.items()}


def dtype_tag(dtype) -> str:
    tag = _TAGS.get(np.dtype(dtype).newbyteorder("<"))
    if tag is None:
        raise DataError(f"unsupported tensor dtype {dtype}")
    return tag


def write_tensor(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    tag = dtype_tag(array.dtype)
    data = np.ascontiguousarray(array, dtype=_DTYPES[tag])
    dims = " ".join(str(int(d)) for d in array.shape)
    header = f"{MAGIC} {tag}{' ' + dims if dims else ''} row-major\n"
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(data.tobytes())
    os.replace(tmp, path)


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = bytearray()
        while True:
            b = f.read(1)
            if not b:
                raise DataError(f"{path}: truncated header")
            if b == b"\n":
                break
            header.extend(b)
            if len(header) > 4096:
                raise DataError(f"{path}: header too long")
        tokens = header.decode("ascii", errors="replace").split()
        if len(tokens) < 3 or tokens[0] != MAGIC or tokens[-1] != "row-major":
            raise DataError(f"{path}: not a {MAGIC} tensor file")
        dtype = _DTYPES.get(tokens[1])
        if dtype is None:
            raise DataError(f"{path}: unknown dtype tag {tokens[1]!r}")
        try:
            shape = tuple(int(t) for t in tokens[2:-1])
        except ValueError:
            raise DataError(f"{path}: malformed shape in header") from None
        payload = f.read()
    count = int(np.prod(shape)) if shape else 1
    if len(payload) != count * dtype.itemsize:
        raise DataError(f"{path}: payload length {len(payload)} != "
                        f"{count} x {dtype.itemsize} bytes")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
