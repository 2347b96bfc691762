"""Binary parameter checkpoints.

Layout (all integers little-endian)::

    magic  b"AWCK"            4 bytes
    version                   u32
    tensor count              u32
    per tensor:
        name length           u32
        name                  utf-8 bytes
        rank                  u32
        dims                  rank x u32
        data                  prod(dims) x float32
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"AWCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(tensors: dict[str, np.ndarray], path: str | Path) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    off = 4
    version, count = struct.unpack_from("<II", buf, off)
    off += 8
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", buf, off)
            off += 4
            name = buf[off : off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<I", buf, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}I", buf, off)
            off += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            nbytes = 4 * size
            if off + nbytes > len(buf):
                raise CheckpointError(f"{path}: truncated data for tensor {name!r}")
            out[name] = np.frombuffer(buf, dtype="<f4", count=size, offset=off).reshape(dims).astype(np.float32)
            off += nbytes
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated header") from exc
    return out
