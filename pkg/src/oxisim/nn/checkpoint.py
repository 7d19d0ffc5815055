"""Byte-deterministic binary checkpoints: named float arrays plus a JSON header."""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"OXNN1\n"
FORMAT_VERSION = 1
_DTYPES = {0: "<f4", 1: "<f8"}
_DTYPE_CODES = {"float32": 0, "float64": 1}


def save_checkpoint(path: str | Path, arrays: dict, meta: dict | None = None) -> None:
    """Write named arrays in sorted-key order; identical input, identical bytes."""
    meta = dict(meta or {})
    meta["format_version"] = FORMAT_VERSION
    meta["parameter_count"] = len(arrays)
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    buf.write(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        code = _DTYPE_CODES.get(arr.dtype.name)
        if code is None:
            raise ValueError(f"unsupported checkpoint dtype {arr.dtype} for {name}")
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<H", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<BB", arr.ndim, code))
        for dim in arr.shape:
            buf.write(struct.pack("<I", dim))
        buf.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: str | Path) -> tuple[dict, dict]:
    """Returns (meta, {name: array})."""
    blob = Path(path).read_bytes()
    if not blob.startswith(MAGIC):
        raise ValueError(f"{path}: not a checkpoint file")
    view = io.BytesIO(blob[len(MAGIC):])

    def read(fmt):
        size = struct.calcsize(fmt)
        data = view.read(size)
        if len(data) != size:
            raise ValueError(f"{path}: truncated checkpoint")
        return struct.unpack(fmt, data)

    (meta_len,) = read("<I")
    meta = json.loads(view.read(meta_len).decode("utf-8"))
    if meta.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {meta.get('format_version')}")
    (count,) = read("<I")
    arrays = {}
    for _ in range(count):
        (name_len,) = read("<H")
        name = view.read(name_len).decode("utf-8")
        ndim, code = read("<BB")
        shape = tuple(read("<I")[0] for _ in range(ndim))
        dtype = np.dtype(_DTYPES[code])
        n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
        raw = view.read(n_bytes)
        if len(raw) != n_bytes:
            raise ValueError(f"{path}: truncated array {name}")
        arrays[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    return meta, arrays
