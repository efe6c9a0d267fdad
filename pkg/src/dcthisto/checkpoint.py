"""Named-tensor archive.

Layout (all integers little-endian)::

    b"DCTH" | version u32 | count u32
    repeated count times:
        name_len u16 | name utf-8 | rank u8 | dims u64 * rank | dtype u8 | raw values

dtype 0 is float32, 1 is float64. Loading preserves order and dtype, so
saving a loaded checkpoint reproduces the original bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import FormatError
from .tensor import Tensor

MAGIC = b"DCTH"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAGS = {np.dtype("float32"): 0, np.dtype("float64"): 1}

OPTIM_PREFIX = "optim."


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    version: int = VERSION

    def params(self) -> dict[str, Tensor]:
        return {k: Tensor(v, name=k) for k, v in self.tensors.items() if not k.startswith(OPTIM_PREFIX)}

    def optimizer_tensors(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.tensors.items() if k.startswith(OPTIM_PREFIX)}


def encode(tensors: Mapping[str, np.ndarray | Tensor], version: int = VERSION) -> bytes:
    parts = [MAGIC, struct.pack("<II", version, len(tensors))]
    for name, value in tensors.items():
        arr = value.data if isinstance(value, Tensor) else np.asarray(value)
        if arr.dtype not in _TAGS:
            arr = arr.astype(np.float64)
        raw_name = name.encode("utf-8")
        if len(raw_name) > 0xFFFF:
            raise ValueError(f"tensor name too long: {name[:40]}...")
        if arr.ndim > 0xFF:
            raise ValueError(f"tensor {name} has rank {arr.ndim} > 255")
        tag = _TAGS[arr.dtype]
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(struct.pack("<B", tag))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated checkpoint while reading {what}", self.pos)
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode(buf: bytes) -> Checkpoint:
    rd = _Reader(buf)
    magic = rd.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    (version,) = rd.unpack("<I", "version")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    (count,) = rd.unpack("<I", "tensor count")
    tensors: dict[str, np.ndarray] = {}
    for i in range(count):
        (nlen,) = rd.unpack("<H", f"name length of tensor {i}")
        start = rd.pos
        try:
            name = rd.take(nlen, f"name of tensor {i}").decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError(f"tensor {i} name is not valid UTF-8", start) from e
        if name in tensors:
            raise FormatError(f"duplicate tensor name {name!r}", start)
        (rank,) = rd.unpack("<B", f"rank of {name}")
        dims = rd.unpack(f"<{rank}Q", f"dims of {name}")
        tag_pos = rd.pos
        (tag,) = rd.unpack("<B", f"dtype of {name}")
        if tag not in _DTYPES:
            raise FormatError(f"unknown dtype tag {tag} for {name}", tag_pos)
        dtype = _DTYPES[tag]
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        raw = rd.take(n * dtype.itemsize, f"values of {name}")
        arr = np.frombuffer(raw, dtype=dtype).reshape(dims)
        tensors[name] = arr.astype(dtype.newbyteorder("="), copy=True)
    if rd.pos != len(buf):
        raise FormatError(f"{len(buf) - rd.pos} trailing bytes after last tensor", rd.pos)
    return Checkpoint(tensors, version)


def save_checkpoint(path, tensors: Mapping[str, np.ndarray | Tensor], state=None, float32: bool = False) -> Path:
    """Write ``tensors`` (plus AdamW moments when ``state`` is given) to ``path``."""
    out: dict[str, np.ndarray] = {}
    for k, v in tensors.items():
        arr = v.data if isinstance(v, Tensor) else np.asarray(v)
        out[k] = arr.astype(np.float32) if float32 else arr
    if state is not None:
        out.update(state.to_tensors())
    path = Path(path)
    path.write_bytes(encode(out))
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read checkpoint {path}: {e.strerror}") from e
    return decode(buf)
