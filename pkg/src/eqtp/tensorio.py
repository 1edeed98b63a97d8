"""Raw float32 tensor files ("EQTF") and key=value sidecars.

Layout: magic ``EQTF``, u32 rank, rank x u32 dims, then float32 data in
row-major order. Everything little-endian.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

MAGIC = b"EQTF"


class FormatError(ValueError):
    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


def encode_tensor(a: np.ndarray) -> bytes:
    a = np.asarray(a, dtype="<f4", order="C")    # ascontiguousarray would promote 0-d to 1-d
    head = MAGIC + struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return head + a.tobytes()


def write_tensor(fp: BinaryIO, a: np.ndarray) -> int:
    blob = encode_tensor(a)
    fp.write(blob)
    return len(blob)


def read_tensor(fp: BinaryIO) -> np.ndarray:
    start = fp.tell() if fp.seekable() else None
    magic = fp.read(4)
    if magic != MAGIC:
        raise FormatError(f"bad tensor magic {magic!r}", start)
    raw = fp.read(4)
    if len(raw) < 4:
        raise FormatError("truncated tensor header", start)
    (rank,) = struct.unpack("<I", raw)
    if rank > 16:
        raise FormatError(f"implausible tensor rank {rank}", start)
    raw = fp.read(4 * rank)
    if len(raw) < 4 * rank:
        raise FormatError("truncated tensor dims", start)
    shape = struct.unpack(f"<{rank}I", raw)
    count = int(np.prod(shape, dtype=np.int64))
    data = fp.read(4 * count)
    if len(data) < 4 * count:
        raise FormatError(f"truncated tensor data: wanted {4 * count} bytes, got {len(data)}", start)
    return np.frombuffer(data, dtype="<f4").reshape(shape).astype(np.float32)


def save_tensor(path: str | Path, a: np.ndarray) -> None:
    with open(path, "wb") as fp:
        write_tensor(fp, a)


def load_tensor(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fp:
        a = read_tensor(fp)
        if fp.read(1):
            raise FormatError("trailing bytes after tensor", fp.tell() - 1)
    return a


def decode_tensor(blob: bytes) -> np.ndarray:
    return read_tensor(io.BytesIO(blob))


def write_keyvalue(path: str | Path, items: dict[str, object]) -> None:
    lines = []
    for k, v in items.items():
        if "=" in k or "\n" in k or "\n" in str(v):
            raise ValueError(f"cannot encode {k!r}={v!r} as a key=value line")
        lines.append(f"{k}={v}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def parse_keyvalue(text: str, source: str = "<text>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        k = k.strip()
        if k in out:
            raise ValueError(f"{source}:{lineno}: duplicate key {k!r}")
        out[k] = v.strip()
    return out


def read_keyvalue(path: str | Path) -> dict[str, str]:
    return parse_keyvalue(Path(path).read_text(encoding="utf-8"), str(path))
