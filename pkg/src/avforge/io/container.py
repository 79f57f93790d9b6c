"""Versioned little-endian binary container shared by all binary file formats.

Layout:
    4 bytes  magic (ASCII)
    u32      major version
    u32      header length in bytes
    header   UTF-8 JSON object; "arrays" lists {"name", "dtype", "shape"} in storage order
    data     the arrays back to back, C order, little-endian, no padding
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from ..errors import DataError

VERSION = 1
_PREFIX = struct.Struct("<4sII")
DTYPES = {"<f4", "<u4", "<i4", "<u1"}


def encode_header(header: dict) -> bytes:
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def pack(magic: bytes, header: dict, arrays) -> bytes:
    """``arrays`` is a sequence of (name, array, dtype) triples."""
    specs, blobs = [], []
    for name, arr, dtype in arrays:
        if dtype not in DTYPES:
            raise ValueError(f"unsupported dtype {dtype}")
        a = np.ascontiguousarray(np.asarray(arr), dtype=dtype)
        specs.append({"name": name, "dtype": dtype, "shape": list(a.shape)})
        blobs.append(a.tobytes())
    head = encode_header(dict(header, arrays=specs))
    return _PREFIX.pack(magic, VERSION, len(head)) + head + b"".join(blobs)


def unpack(data: bytes, magic: bytes):
    """Parse a container; returns (header, {name: array}). Raises DataError with byte offsets."""
    if len(data) < 4:
        raise DataError("file too short for magic", offset=len(data), field="magic")
    if data[:4] != magic:
        raise DataError(f"bad magic {data[:4]!r}, expected {magic!r}", offset=0, field="magic")
    if len(data) < 8:
        raise DataError("file truncated in version", offset=len(data), field="version")
    if len(data) < _PREFIX.size:
        raise DataError("file truncated in header length", offset=len(data), field="header_len")
    _, version, head_len = _PREFIX.unpack_from(data)
    if version != VERSION:
        raise DataError(f"unsupported major version {version}", offset=4, field="version")
    end = _PREFIX.size + head_len
    if len(data) < end:
        raise DataError(f"header truncated: need {head_len} bytes", offset=len(data), field="header")
    try:
        header = json.loads(data[_PREFIX.size:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"malformed header: {exc}", offset=_PREFIX.size, field="header") from exc
    if not isinstance(header, dict) or not isinstance(header.get("arrays"), list):
        raise DataError("header lacks an array table", offset=_PREFIX.size, field="arrays")
    arrays, off = {}, end
    for spec in header["arrays"]:
        name = spec.get("name", "?")
        dtype, shape = spec.get("dtype"), spec.get("shape")
        if dtype not in DTYPES or not isinstance(shape, list) or any((not isinstance(s, int)) or s < 0 for s in shape):
            raise DataError(f"bad array spec {spec}", offset=_PREFIX.size, field=name)
        n = int(np.prod(shape, dtype=np.int64)) * np.dtype(dtype).itemsize
        if off + n > len(data):
            raise DataError(f"array {name!r} truncated: need {n} bytes", offset=len(data), field=name)
        arrays[name] = np.frombuffer(data, dtype=dtype, count=n // np.dtype(dtype).itemsize,
                                     offset=off).reshape(shape).copy()
        off += n
    if off != len(data):
        raise DataError(f"{len(data) - off} trailing bytes", offset=off, field="data")
    return header, arrays


def require(arrays: dict, name: str, ndim: int | None = None):
    if name not in arrays:
        raise DataError(f"missing array {name!r}", field=name)
    a = arrays[name]
    if ndim is not None and a.ndim != ndim:
        raise DataError(f"array {name!r} has {a.ndim} dims, expected {ndim}", field=name)
    return a


def atomic_write(path, data: bytes | str) -> None:
    """Write via a temporary file in the same directory, then rename over ``path``."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data.encode("utf-8") if isinstance(data, str) else data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_bytes(path) -> bytes:
    try:
        with open(path, "rb") as f:
            return f.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc
