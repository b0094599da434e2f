"""Versioned binary checkpoint format shared by the CLI and the trainers.

Layout (all integers little-endian):
  magic "BYIM" | format version u16 | record count u32
  per record: name length u32 | UTF-8 name | rank u32 | dims (u32 each)
              | raw little-endian float32 data

Batchnorm running statistics travel as ordinary named records.
"""

import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError, CheckpointIncompatible

MAGIC = b"BYIM"
VERSION = 1


def save_checkpoint(named_arrays, path):
    """Write {name: array} in deterministic (sorted-name) order."""
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(named_arrays))]
    for name in sorted(named_arrays):
        arr = np.ascontiguousarray(named_arrays[name], dtype="<f4")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path):
    """Read a checkpoint back into {name: float32 array}."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}")
    version, count = struct.unpack_from("<HI", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    pos = 10
    out = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            name = raw[pos : pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", raw, pos)
            pos += 4 * rank
            n = int(np.prod(shape)) if rank else 1
            arr = np.frombuffer(raw, dtype="<f4", count=n, offset=pos).reshape(shape)
            pos += 4 * n
            out[name] = arr.copy()
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint") from exc
    return out


def load_into(module, arrays, strict=True):
    """Assign checkpoint arrays into a Module's named parameters.

    Raises CheckpointIncompatible naming the first mismatched or missing
    record.
    """
    params = module.named_parameters()
    for name in sorted(params):
        if name not in arrays:
            if strict:
                raise CheckpointIncompatible(f"missing record {name!r}")
            continue
        arr = arrays[name]
        if tuple(arr.shape) != tuple(params[name].shape):
            raise CheckpointIncompatible(
                f"record {name!r}: checkpoint shape {tuple(arr.shape)} vs "
                f"model shape {tuple(params[name].shape)}"
            )
        params[name].assign(arr)
