"""Sample and value files.

Binary layout (all little-endian)::

    magic    4 bytes  b"FKDE"
    version  u32      1
    n        u64
    d        u64
    data     n*d float64, row-major

CSV files carry a header row ``x0,...,x{d-1}`` (``value`` for density
outputs) and are meant for small inputs.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Union

import numpy as np

__all__ = ["MAGIC", "FORMAT_VERSION", "FormatError", "read_matrix", "write_matrix",
           "write_values", "write_bytes_atomic"]

MAGIC = b"FKDE"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQQ")

PathLike = Union[str, Path]


class FormatError(ValueError):
    """File content does not match the expected format."""


def write_bytes_atomic(path: PathLike, payload: bytes) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _encode_bin(arr: np.ndarray) -> bytes:
    n, d = arr.shape
    return _HEADER.pack(MAGIC, FORMAT_VERSION, n, d) + arr.astype("<f8", copy=False).tobytes()


def _encode_csv(arr: np.ndarray, header: list[str]) -> bytes:
    lines = [",".join(header)]
    lines += [",".join(repr(float(v)) for v in row) for row in arr]
    return ("\n".join(lines) + "\n").encode()


def write_matrix(path: PathLike, data, fmt: str = "bin") -> None:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if fmt == "bin":
        payload = _encode_bin(arr)
    elif fmt == "csv":
        payload = _encode_csv(arr, [f"x{k}" for k in range(arr.shape[1])])
    else:
        raise ValueError(f"unsupported matrix format {fmt!r} (expected 'bin' or 'csv')")
    write_bytes_atomic(path, payload)


def write_values(path: PathLike, values, fmt: str = "csv") -> None:
    """Density values as a single ``value`` column (``csv``/``bin``) or a JSON document."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if fmt == "csv":
        payload = _encode_csv(v[:, None], ["value"])
    elif fmt == "bin":
        payload = _encode_bin(v[:, None])
    elif fmt == "json":
        payload = (json.dumps({"schema_version": 1, "values": v.tolist()}) + "\n").encode()
    else:
        raise ValueError(f"unsupported value format {fmt!r}")
    write_bytes_atomic(path, payload)


def _decode_bin(raw: bytes, name: str) -> np.ndarray:
    if len(raw) < _HEADER.size:
        raise FormatError(f"{name}: truncated header")
    magic, version, n, d = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{name}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{name}: unsupported format version {version}")
    body = raw[_HEADER.size:]
    if len(body) != 8 * n * d:
        raise FormatError(f"{name}: expected {n}x{d} values, found {len(body)} bytes")
    return np.frombuffer(body, dtype="<f8").reshape(n, d).astype(np.float64)


def _decode_csv(text: str, name: str) -> np.ndarray:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise FormatError(f"{name}: empty CSV")
    try:
        rows = [[float(v) for v in ln.split(",")] for ln in lines[1:]]
    except ValueError as exc:
        raise FormatError(f"{name}: {exc}") from None
    width = len(lines[0].split(","))
    if any(len(r) != width for r in rows):
        raise FormatError(f"{name}: ragged CSV rows")
    return np.array(rows, dtype=np.float64).reshape(len(rows), width)


def read_matrix(path: PathLike) -> np.ndarray:
    """Read a binary or CSV sample/value file (format sniffed from the magic bytes)."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] == MAGIC:
        return _decode_bin(raw, str(path))
    if raw[:1] == b"{":
        try:
            doc = json.loads(raw)
            return np.asarray(doc["values"], dtype=np.float64)[:, None]
        except (ValueError, KeyError, TypeError) as exc:
            raise FormatError(f"{path}: {exc}") from None
    return _decode_csv(raw.decode(), str(path))
