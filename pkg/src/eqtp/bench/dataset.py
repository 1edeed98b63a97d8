"""Demonstration datasets ("EQPD" record files).

Header: magic ``EQPD``, u32 version, u64 record count. Each record: u32
length + UTF-8 task name, u64 seed, observation tensor (EQTF), u8 goal flag
(+ goal tensor), six float64 action values (u, v, theta_pick, u', v',
theta_place). Little-endian throughout.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import tensorio
from ..nets import PickPlaceAction

MAGIC = b"EQPD"
VERSION = 1


@dataclass(frozen=True)
class Demonstration:
    task: str
    seed: int
    observation: np.ndarray
    action: PickPlaceAction
    goal: np.ndarray | None = None
    step: int = 0

    def __eq__(self, other):
        if not isinstance(other, Demonstration):
            return NotImplemented
        same_goal = (self.goal is None and other.goal is None) or (
            self.goal is not None and other.goal is not None and np.array_equal(self.goal, other.goal))
        return (self.task == other.task and self.seed == other.seed and self.step == other.step
                and np.array_equal(self.observation, other.observation)
                and np.array_equal(self.action.as_array(), other.action.as_array()) and same_goal)


def encode_dataset(demos: list[Demonstration]) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC + struct.pack("<IQ", VERSION, len(demos)))
    for d in demos:
        name = d.task.encode("utf-8")
        out.write(struct.pack("<I", len(name)) + name + struct.pack("<Q", d.seed))
        tensorio.write_tensor(out, d.observation)
        if d.goal is None:
            out.write(b"\x00")
        else:
            out.write(b"\x01")
            tensorio.write_tensor(out, d.goal)
        out.write(struct.pack("<6d", *d.action.as_array()))
    return out.getvalue()


def write_dataset(path: str | Path, demos: list[Demonstration]) -> None:
    Path(path).write_bytes(encode_dataset(demos))


def _need(fp: io.BytesIO, n: int, what: str) -> bytes:
    at = fp.tell()
    b = fp.read(n)
    if len(b) < n:
        raise tensorio.FormatError(f"truncated {what}", at)
    return b


def decode_dataset(blob: bytes) -> list[Demonstration]:
    fp = io.BytesIO(blob)
    if fp.read(4) != MAGIC:
        raise tensorio.FormatError("not a demonstration file (bad magic)", 0)
    version, count = struct.unpack("<IQ", _need(fp, 12, "header"))
    if version != VERSION:
        raise tensorio.FormatError(f"unsupported dataset version {version}", 4)
    demos: list[Demonstration] = []
    prev_seed, step = None, 0
    for r in range(count):
        (n,) = struct.unpack("<I", _need(fp, 4, f"record {r} task length"))
        at = fp.tell()
        try:
            name = _need(fp, n, f"record {r} task name").decode("utf-8")
        except UnicodeDecodeError as e:
            raise tensorio.FormatError(f"record {r}: task name is not UTF-8", at) from e
        (seed,) = struct.unpack("<Q", _need(fp, 8, f"record {r} seed"))
        obs = tensorio.read_tensor(fp)
        flag = _need(fp, 1, f"record {r} goal flag")
        if flag not in (b"\x00", b"\x01"):
            raise tensorio.FormatError(f"record {r}: bad goal flag {flag[0]}", fp.tell() - 1)
        goal = tensorio.read_tensor(fp) if flag == b"\x01" else None
        act = struct.unpack("<6d", _need(fp, 48, f"record {r} action"))
        step = step + 1 if seed == prev_seed else 0
        prev_seed = seed
        demos.append(Demonstration(name, seed, obs, PickPlaceAction.from_array(act), goal, step))
    if fp.read(1):
        raise tensorio.FormatError("trailing bytes after the last record", fp.tell() - 1)
    return demos


def read_dataset(path: str | Path) -> list[Demonstration]:
    return decode_dataset(Path(path).read_bytes())
