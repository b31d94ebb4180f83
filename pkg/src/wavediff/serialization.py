"""Binary tensor framing shared by checkpoints and on-disk tensor caches.

Checkpoint layout (all integers little-endian):

    magic "DFWV" | u32 version | u32 config length | config UTF-8 |
    tensor section (parameters) | tensor section (optimizer moments) |
    u32 blob length | RNG state blob | u64 step counter

A tensor section is a u32 count followed by that many framed tensors:

    u32 name length | name UTF-8 | u8 dtype tag (0=float32, 1=float64) |
    u32 rank | u64 extents... | raw little-endian data

Standalone tensor caches (mel spectrograms, feature caches) use the same
tensor section framing behind a "DFWT" magic and u32 version.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import FormatError

CHECKPOINT_MAGIC = b"DFWV"
TENSOR_FILE_MAGIC = b"DFWT"
FORMAT_VERSION = 1

_TAG_OF_DTYPE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_DTYPE_OF_TAG = {0: np.dtype(np.float32), 1: np.dtype(np.float64)}


@dataclass
class Checkpoint:
    """Everything needed to resume a training run bit-exactly."""

    config_text: str
    params: dict[str, np.ndarray]
    moments: dict[str, np.ndarray]
    rng_state: bytes
    step: int
    version: int = FORMAT_VERSION


def _read_exact(f, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file: wanted {n} bytes, got {len(buf)}")
    return buf


def _write_tensor(f, name: str, arr: np.ndarray) -> None:
    dtype = np.dtype(arr.dtype)
    if dtype not in _TAG_OF_DTYPE:
        raise FormatError(f"unsupported dtype {dtype} for tensor {name!r}")
    encoded = name.encode("utf-8")
    f.write(struct.pack("<I", len(encoded)))
    f.write(encoded)
    f.write(struct.pack("<B", _TAG_OF_DTYPE[dtype]))
    f.write(struct.pack("<I", arr.ndim))
    for extent in arr.shape:
        f.write(struct.pack("<Q", extent))
    f.write(np.ascontiguousarray(arr).astype(dtype.newbyteorder("<")).tobytes())


def _read_tensor(f) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<I", _read_exact(f, 4))
    name = _read_exact(f, name_len).decode("utf-8")
    (tag,) = struct.unpack("<B", _read_exact(f, 1))
    if tag not in _DTYPE_OF_TAG:
        raise FormatError(f"unknown dtype tag {tag} for tensor {name!r}")
    dtype = _DTYPE_OF_TAG[tag]
    (rank,) = struct.unpack("<I", _read_exact(f, 4))
    shape = tuple(struct.unpack("<Q", _read_exact(f, 8))[0] for _ in range(rank))
    count = int(np.prod(shape)) if shape else 1
    raw = _read_exact(f, count * dtype.itemsize)
    arr = np.frombuffer(raw, dtype=dtype.newbyteorder("<")).astype(dtype).reshape(shape)
    return name, arr


def write_tensor_section(f, tensors: dict[str, np.ndarray]) -> None:
    f.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        _write_tensor(f, name, arr)


def read_tensor_section(f) -> dict[str, np.ndarray]:
    (count,) = struct.unpack("<I", _read_exact(f, 4))
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        name, arr = _read_tensor(f)
        if name in out:
            raise FormatError(f"duplicate tensor name {name!r}")
        out[name] = arr
    return out


def atomic_write_bytes(path: str | os.PathLike, payload: bytes) -> None:
    """Write a file atomically (temp in the same directory, then rename)."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(ckpt: Checkpoint, path: str | os.PathLike) -> None:
    import io

    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", ckpt.version))
    config = ckpt.config_text.encode("utf-8")
    buf.write(struct.pack("<I", len(config)))
    buf.write(config)
    write_tensor_section(buf, ckpt.params)
    write_tensor_section(buf, ckpt.moments)
    buf.write(struct.pack("<I", len(ckpt.rng_state)))
    buf.write(ckpt.rng_state)
    buf.write(struct.pack("<Q", ckpt.step))
    atomic_write_bytes(path, buf.getvalue())


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4)
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"bad checkpoint magic {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        (config_len,) = struct.unpack("<I", _read_exact(f, 4))
        config_text = _read_exact(f, config_len).decode("utf-8")
        params = read_tensor_section(f)
        moments = read_tensor_section(f)
        (blob_len,) = struct.unpack("<I", _read_exact(f, 4))
        rng_state = _read_exact(f, blob_len)
        (step,) = struct.unpack("<Q", _read_exact(f, 8))
        return Checkpoint(config_text, params, moments, rng_state, step, version)


def save_tensor_file(path: str | os.PathLike, tensors: dict[str, np.ndarray]) -> None:
    import io

    buf = io.BytesIO()
    buf.write(TENSOR_FILE_MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    write_tensor_section(buf, tensors)
    atomic_write_bytes(path, buf.getvalue())


def load_tensor_file(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4)
        if magic != TENSOR_FILE_MAGIC:
            raise FormatError(f"bad tensor file magic {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported tensor file version {version}")
        return read_tensor_section(f)
