"""Binary tensor serialization (CSCT format) and named-tensor archives.

Single tensor layout, little-endian throughout:

    magic "CSCT" | u8 version=1 | u8 dtype (0=f32, 1=f64) | u8 ndim |
    u64 dims[ndim] | raw row-major payload

An archive (used for model checkpoints) is a u32 length-prefixed JSON
config header followed by a u32 tensor count and, per tensor, a u16
length-prefixed UTF-8 name and a CSCT blob. Round trips are bit-exact.
"""

import json
import struct

import numpy as np

from .errors import FormatError

MAGIC = b"CSCT"
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def tensor_bytes(arr):
    # np.ascontiguousarray would promote 0-d arrays to 1-d; keep rank.
    arr = np.asarray(arr, order="C")
    code = _DTYPE_CODES.get(arr.dtype)
    if code is None:
        raise FormatError(f"unsupported dtype {arr.dtype}; expected float32/float64")
    head = MAGIC + struct.pack("<BBB", 1, code, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + dims + arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()


def write_tensor(path, arr):
    with open(path, "wb") as f:
        f.write(tensor_bytes(arr))


def _read_exact(f, n, what):
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"truncated while reading {what}", offset=f.tell())
    return data


def read_tensor_from(f):
    start = f.tell()
    magic = _read_exact(f, 4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=start)
    version, code, ndim = struct.unpack("<BBB", _read_exact(f, 3, "header"))
    if version != 1:
        raise FormatError(f"unsupported version {version}", offset=start + 4)
    if code not in _CODE_DTYPES:
        raise FormatError(f"unknown dtype code {code}", offset=start + 5)
    dims = struct.unpack(f"<{ndim}Q", _read_exact(f, 8 * ndim, "dims"))
    dtype = _CODE_DTYPES[code]
    count = 1
    for d in dims:
        count *= d
    payload = _read_exact(f, count * dtype.itemsize, "payload")
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()


def read_tensor(path):
    with open(path, "rb") as f:
        return read_tensor_from(f)


def write_archive(path, config: dict, tensors: dict):
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(tensor_bytes(arr))


def read_archive(path):
    with open(path, "rb") as f:
        (jlen,) = struct.unpack("<I", _read_exact(f, 4, "config length"))
        config = json.loads(_read_exact(f, jlen, "config").decode("utf-8"))
        (count,) = struct.unpack("<I", _read_exact(f, 4, "tensor count"))
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", _read_exact(f, 2, "name length"))
            name = _read_exact(f, nlen, "name").decode("utf-8")
            tensors[name] = read_tensor_from(f)
    return config, tensors
