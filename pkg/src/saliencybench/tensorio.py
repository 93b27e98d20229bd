"""Tensors and the TNSR container format.

TNSR layout: magic ``TNSR`` | version u16 LE | dtype code u8 (0 = f32) |
rank u8 | rank x dim u32 LE | payload as little-endian float32, row-major.

Checkpoints are stored as TNSB bundles: magic ``TNSB`` | version u16 LE |
count u32 LE | count x (name length u16 LE | name UTF-8 | TNSR blob length
u32 LE | TNSR blob). Entries are sorted by name so bundles are
byte-reproducible.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimMismatch, IoFailure, MalformedHeader, NonFiniteData

MAGIC = b"TNSR"
BUNDLE_MAGIC = b"TNSB"
VERSION = 1
DTYPE_F32 = 0


@dataclass(frozen=True)
class Tensor:
    """Dense float32 array with explicit dims.

    ``data`` is the flat row-major payload; helpers convert to and from
    numpy views. Instances are immutable and safe to share across threads.
    """

    dims: tuple[int, ...]
    data: np.ndarray  # 1-D float32, length = prod(dims)

    def __post_init__(self):
        n = int(np.prod(self.dims, dtype=np.int64)) if self.dims else 1
        if self.data.ndim != 1 or self.data.dtype != np.float32:
            raise DimMismatch("payload must be flat float32")
        if len(self.data) != n:
            raise DimMismatch(f"dims {self.dims} need {n} values, got {len(self.data)}")
        if len(self.data) and not np.all(np.isfinite(self.data)):
            raise NonFiniteData("tensor payload contains NaN or Inf")
        self.data.flags.writeable = False

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Tensor":
        arr = np.asarray(arr, dtype=np.float32)
        return cls(tuple(int(d) for d in arr.shape), arr.reshape(-1).copy())

    def to_array(self) -> np.ndarray:
        return self.data.reshape(self.dims)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self.data, other.data)


def save_tensor(t: Tensor, path: str | Path) -> None:
    """Write one tensor; the file re-loads to a bitwise-equal tensor."""
    try:
        with open(path, "wb") as fh:
            fh.write(_encode(t))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_tensor(path: str | Path) -> Tensor:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    tensor, used = _decode(blob, str(path))
    if used != len(blob):
        raise DimMismatch(f"{path}: {len(blob) - used} trailing bytes after payload")
    return tensor


def _encode(t: Tensor) -> bytes:
    if len(t.dims) > 255:
        raise DimMismatch("rank exceeds 255")
    head = MAGIC + struct.pack("<HBB", VERSION, DTYPE_F32, len(t.dims))
    head += struct.pack(f"<{len(t.dims)}I", *t.dims)
    return head + t.data.astype("<f4").tobytes()


def _decode(blob: bytes, origin: str) -> tuple[Tensor, int]:
    if len(blob) < 8:
        raise MalformedHeader(f"{origin}: truncated header")
    if blob[:4] != MAGIC:
        raise MalformedHeader(f"{origin}: bad magic {blob[:4]!r}")
    version, dtype, rank = struct.unpack_from("<HBB", blob, 4)
    if version != VERSION:
        raise MalformedHeader(f"{origin}: unsupported version {version}")
    if dtype != DTYPE_F32:
        raise MalformedHeader(f"{origin}: unsupported dtype code {dtype}")
    offset = 8 + 4 * rank
    if len(blob) < offset:
        raise MalformedHeader(f"{origin}: truncated dim list")
    dims = struct.unpack_from(f"<{rank}I", blob, 8)
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    end = offset + 4 * count
    if len(blob) < end:
        raise DimMismatch(f"{origin}: payload shorter than dims {dims} require")
    data = np.frombuffer(blob[offset:end], dtype="<f4").astype(np.float32)
    if count and not np.all(np.isfinite(data)):
        raise NonFiniteData(f"{origin}: payload contains NaN or Inf")
    return Tensor(tuple(int(d) for d in dims), data), end


def save_bundle(tensors: dict[str, Tensor], path: str | Path) -> None:
    """Write a named collection of tensors (checkpoint container)."""
    body = [BUNDLE_MAGIC, struct.pack("<HI", VERSION, len(tensors))]
    for name in sorted(tensors):
        raw = name.encode("utf-8")
        blob = _encode(tensors[name])
        body.append(struct.pack("<H", len(raw)) + raw + struct.pack("<I", len(blob)) + blob)
    try:
        with open(path, "wb") as fh:
            fh.write(b"".join(body))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_bundle(path: str | Path) -> dict[str, Tensor]:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(blob) < 10 or blob[:4] != BUNDLE_MAGIC:
        raise MalformedHeader(f"{path}: not a TNSB bundle")
    version, count = struct.unpack_from("<HI", blob, 4)
    if version != VERSION:
        raise MalformedHeader(f"{path}: unsupported bundle version {version}")
    offset = 10
    out: dict[str, Tensor] = {}
    for _ in range(count):
        if len(blob) < offset + 2:
            raise MalformedHeader(f"{path}: truncated entry header")
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (blob_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        tensor, used = _decode(blob[offset : offset + blob_len], f"{path}:{name}")
        if used != blob_len:
            raise DimMismatch(f"{path}:{name}: entry length mismatch")
        out[name] = tensor
        offset += blob_len
    if offset != len(blob):
        raise DimMismatch(f"{path}: trailing bytes after last entry")
    return out
