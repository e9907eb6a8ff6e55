"""Binary portable graymap (P5) reading and writing, 8 or 16 bit."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def write_pgm(path, image) -> None:
    """Write a uint8 or uint16 image; 16-bit samples are stored big-endian."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError("P5 images must be two-dimensional")
    if img.dtype == np.uint8:
        maxval, raw = 255, img.tobytes()
    elif img.dtype == np.uint16:
        maxval, raw = 65535, img.astype(">u2").tobytes()
    else:
        raise TypeError(f"unsupported dtype {img.dtype}; use uint8 or uint16")
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n{maxval}\n".encode("ascii") + raw)


def _tokens(buf: bytes, count: int):
    """First ``count`` header tokens (comments skipped) and the payload offset."""
    out, i = [], 2
    while len(out) < count:
        while buf[i : i + 1].isspace():
            i += 1
        if buf[i : i + 1] == b"#":
            while buf[i : i + 1] not in (b"\n", b""):
                i += 1
            continue
        j = i
        while j < len(buf) and not buf[j : j + 1].isspace():
            j += 1
        out.append(int(buf[i:j]))
        i = j
    return out, i + 1


def read_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:2] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    (w, h, maxval), offset = _tokens(buf, 3)
    dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    data = np.frombuffer(buf, dtype=dtype, count=w * h, offset=offset)
    img = data.reshape(h, w)
    return img.astype(np.uint8 if maxval < 256 else np.uint16)


def to_preview(values, valid=None) -> np.ndarray:
    """Min-max normalise a float map to uint8 (over ``valid`` pixels if given)."""
    v = np.asarray(values, dtype=np.float64)
    sel = v[valid] if valid is not None and np.any(valid) else v
    lo, hi = (float(sel.min()), float(sel.max())) if sel.size else (0.0, 1.0)
    scaled = (v - lo) / (hi - lo) if hi > lo else np.zeros_like(v)
    return np.clip(np.round(scaled * 255), 0, 255).astype(np.uint8)
