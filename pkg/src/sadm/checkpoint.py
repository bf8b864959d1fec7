"""Binary checkpoint interchange.

Layout (all little-endian):

    magic "SADM" | u32 format version (1) | u32 tensor count
    per tensor: u16 name length | name bytes (utf-8) | u8 rank
                | u32 dim per axis | raw float32 data, C order

Rank-0 entries carry a single float and are used for scalar configuration
values under ``config.*`` names; optimizer momentum buffers travel under
``opt.momentum.*`` and may be ignored by readers that do not resume training.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointFormatError

MAGIC = b"SADM"
VERSION = 1


def save_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    """Write named float32 tensors in the normative binary layout."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(tensors)))
        for name, arr in tensors.items():
            data = np.asarray(arr, dtype="<f4")
            if data.ndim and not data.flags["C_CONTIGUOUS"]:
                data = np.ascontiguousarray(data)
            name_b = name.encode("utf-8")
            if len(name_b) > 0xFFFF:
                raise CheckpointFormatError(f"tensor name too long: {name!r}")
            f.write(struct.pack("<H", len(name_b)))
            f.write(name_b)
            f.write(struct.pack("<B", data.ndim))
            for d in data.shape:
                f.write(struct.pack("<I", d))
            f.write(data.tobytes(order="C"))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read a checkpoint written by save_checkpoint (or any conforming writer)."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {raw[:4]!r}")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise CheckpointFormatError(f"{path}: unsupported format version {version}")
    offset = 12
    tensors: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", raw, offset)
            offset += 2
            name = raw[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<B", raw, offset)
            offset += 1
            dims = struct.unpack_from(f"<{rank}I", raw, offset) if rank else ()
            offset += 4 * rank
            n = int(np.prod(dims, dtype=np.int64)) if rank else 1
            data = np.frombuffer(raw, dtype="<f4", count=n, offset=offset).copy()
            offset += 4 * n
            tensors[name] = data.reshape(dims)
    except (struct.error, ValueError) as exc:
        raise CheckpointFormatError(f"{path}: truncated or corrupt ({exc})") from exc
    if offset != len(raw):
        raise CheckpointFormatError(f"{path}: {len(raw) - offset} trailing bytes")
    return tensors
