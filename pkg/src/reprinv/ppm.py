"""Portable pixmap/graymap input and output.

Reading accepts plain (P2, P3) and binary (P5, P6) files with any maxval up
to 65535 and returns ``[C, H, W]`` float64 arrays scaled to [0, 1].
Writing always produces plain files: P3 for three channels, P2 for one.
Values are clamped to [0, 1] and stored as ``round(v * 255)``.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

_MAGIC = {b"P2": (1, False), b"P3": (3, False), b"P5": (1, True), b"P6": (3, True)}


class PNMError(ValueError):
    pass


def _header(data: bytes):
    """Split ``magic, width, height, maxval`` off ``data``; returns them and the body offset."""
    tokens = []
    pos = 0
    token_re = re.compile(rb"\s*(#[^\n]*\n\s*)*(\S+)")
    while len(tokens) < 4:
        m = token_re.match(data, pos)
        if m is None:
            raise PNMError("truncated header")
        tokens.append(m.group(2))
        pos = m.end()
    magic = tokens[0]
    if magic not in _MAGIC:
        raise PNMError(f"unsupported magic number {magic!r}")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise PNMError("non-integer header field") from exc
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise PNMError(f"bad header values {w}x{h} maxval {maxval}")
    return magic, w, h, maxval, pos


def decode(data: bytes) -> np.ndarray:
    magic, w, h, maxval, pos = _header(data)
    channels, binary = _MAGIC[magic]
    count = w * h * channels
    if binary:
        # exactly one whitespace byte separates the header from raster data
        pos += 1
        dt = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        if len(data) < pos + count * dt.itemsize:
            raise PNMError("raster data shorter than header promises")
        values = np.frombuffer(data, dtype=dt, count=count, offset=pos).astype(np.float64)
    else:
        text = re.sub(rb"#[^\n]*", b"", data[pos:])
        fields = text.split()
        if len(fields) < count:
            raise PNMError("raster data shorter than header promises")
        values = np.array([int(v) for v in fields[:count]], dtype=np.float64)
    if values.max(initial=0) > maxval:
        raise PNMError("sample exceeds maxval")
    return (values / maxval).reshape(h, w, channels).transpose(2, 0, 1).copy()


def read_pnm(path) -> np.ndarray:
    return decode(Path(path).read_bytes())


def encode(image: np.ndarray, comment: str | None = None) -> bytes:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[None]
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise PNMError("image must be [1, H, W] or [3, H, W]")
    c, h, w = img.shape
    levels = np.rint(np.clip(img, 0.0, 1.0) * 255).astype(np.int64)
    lines = ["P3" if c == 3 else "P2"]
    if comment:
        lines.extend(f"# {part}" for part in comment.splitlines())
    lines.append(f"{w} {h}")
    lines.append("255")
    pixels = levels.transpose(1, 2, 0).reshape(h, w * c)
    lines.extend(" ".join(str(v) for v in row) for row in pixels)
    return ("\n".join(lines) + "\n").encode("ascii")


def write_pnm(path, image: np.ndarray, comment: str | None = None) -> None:
    Path(path).write_bytes(encode(image, comment))
