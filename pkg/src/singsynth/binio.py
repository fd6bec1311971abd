"""Little-endian binary container primitives shared by the feature and
checkpoint file formats: named float64 tensors with explicit shapes."""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np


class ContainerError(ValueError):
    pass


def write_u32(fh: BinaryIO, value: int) -> None:
    fh.write(struct.pack("<I", value))


def read_u32(fh: BinaryIO) -> int:
    raw = fh.read(4)
    if len(raw) != 4:
        raise ContainerError("truncated file: expected u32")
    return struct.unpack("<I", raw)[0]


def write_named_tensor(fh: BinaryIO, name: str, array: np.ndarray) -> None:
    data = np.ascontiguousarray(array, dtype="<f8")
    encoded = name.encode("utf-8")
    write_u32(fh, len(encoded))
    fh.write(encoded)
    write_u32(fh, data.ndim)
    for dim in data.shape:
        write_u32(fh, dim)
    fh.write(data.tobytes())


def read_named_tensor(fh: BinaryIO) -> tuple[str, np.ndarray]:
    name_len = read_u32(fh)
    name = fh.read(name_len).decode("utf-8")
    rank = read_u32(fh)
    if rank > 8:
        raise ContainerError(f"implausible tensor rank {rank} for {name!r}")
    shape = tuple(read_u32(fh) for _ in range(rank))
    count = int(np.prod(shape)) if shape else 1
    raw = fh.read(count * 8)
    if len(raw) != count * 8:
        raise ContainerError(f"truncated tensor data for {name!r}")
    return name, np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)


def write_magic(fh: BinaryIO, magic: bytes, version: int = 1) -> None:
    fh.write(magic)
    write_u32(fh, version)


def read_magic(fh: BinaryIO, magic: bytes) -> int:
    raw = fh.read(len(magic))
    if raw != magic:
        raise ContainerError(f"bad magic: expected {magic!r}, got {raw!r}")
    return read_u32(fh)
