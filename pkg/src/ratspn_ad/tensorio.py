"""Binary tensor files and named-record containers.

Tensor file layout (little endian)::

    b"AETN" | version u8 = 1 | dtype u8 | rank u8 | reserved u8
    | rank x u32 dims | row-major payload

dtype 1 stores float32, dtype 2 stores float64 (used wherever a round trip
must be exact, e.g. model checkpoints and circuits).

A record file holds a UTF-8 ``key = value`` text header followed by named
tensors::

    magic (4 bytes) | version u8 | u32 header length | header
    | u32 record count | records: u32 name length | name | tensor
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

TENSOR_MAGIC = b"AETN"
TENSOR_VERSION = 1
FLOAT32 = 1
FLOAT64 = 2
_DTYPES = {FLOAT32: np.dtype("<f4"), FLOAT64: np.dtype("<f8")}


class FormatError(ValueError):
    pass


def _read_exact(f: BinaryIO, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"unexpected end of file (wanted {n} bytes, got {len(buf)})")
    return buf


def write_tensor(f: BinaryIO, array, dtype: int = FLOAT32) -> None:
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim > 255:
        raise FormatError("rank too large")
    if dtype not in _DTYPES:
        raise FormatError(f"unknown dtype code {dtype}")
    f.write(TENSOR_MAGIC + bytes([TENSOR_VERSION, dtype, arr.ndim, 0]))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes())


def read_tensor(f: BinaryIO) -> np.ndarray:
    head = _read_exact(f, 8)
    if head[:4] != TENSOR_MAGIC:
        raise FormatError(f"bad tensor magic {head[:4]!r}")
    version, dtype, rank = head[4], head[5], head[6]
    if version != TENSOR_VERSION:
        raise FormatError(f"unsupported tensor version {version}")
    if dtype not in _DTYPES:
        raise FormatError(f"unknown dtype code {dtype}")
    dims = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank)) if rank else ()
    count = int(np.prod(dims, dtype=np.int64))
    np_dtype = _DTYPES[dtype]
    payload = _read_exact(f, count * np_dtype.itemsize)
    return np.frombuffer(payload, dtype=np_dtype).astype(np.float64).reshape(dims)


def save_tensor(path, array, dtype: int = FLOAT32) -> None:
    with open(path, "wb") as f:
        write_tensor(f, array, dtype)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        arr = read_tensor(f)
        if f.read(1):
            raise FormatError(f"trailing bytes in {path}")
    return arr


# --- structured text --------------------------------------------------------


def format_header(fields: dict) -> str:
    lines = []
    for key, value in fields.items():
        if isinstance(value, (list, tuple)):
            value = ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def parse_header(text: str) -> dict[str, str]:
    fields = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"header line {lineno} is not key = value: {line!r}")
        key, value = line.split("=", 1)
        fields[key.strip()] = value.strip()
    return fields


# --- record files -----------------------------------------------------------


def write_records(path, magic: bytes, header: dict, records: dict[str, np.ndarray], dtype: int = FLOAT64) -> None:
    if len(magic) != 4:
        raise ValueError("magic must be 4 bytes")
    buf = io.BytesIO()
    text = format_header(header).encode("utf-8")
    buf.write(magic + bytes([1]))
    buf.write(struct.pack("<I", len(text)))
    buf.write(text)
    buf.write(struct.pack("<I", len(records)))
    for name, arr in records.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        write_tensor(buf, arr, dtype)
    Path(path).write_bytes(buf.getvalue())


def read_records(path, magic: bytes) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        head = _read_exact(f, 5)
        if head[:4] != magic:
            raise FormatError(f"{path}: expected magic {magic!r}, found {head[:4]!r}")
        if head[4] != 1:
            raise FormatError(f"{path}: unsupported version {head[4]}")
        (n,) = struct.unpack("<I", _read_exact(f, 4))
        header = parse_header(_read_exact(f, n).decode("utf-8"))
        (count,) = struct.unpack("<I", _read_exact(f, 4))
        records = {}
        for _ in range(count):
            (n,) = struct.unpack("<I", _read_exact(f, 4))
            name = _read_exact(f, n).decode("utf-8")
            records[name] = read_tensor(f)
        if f.read(1):
            raise FormatError(f"trailing bytes in {path}")
    return header, records
