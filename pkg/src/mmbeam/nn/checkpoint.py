"""Binary parameter checkpoints.

Layout (all little-endian)::

    b"MMBCKPT\\0"  uint32 version  uint32 n_tensors
    per tensor: uint16 name_len, utf-8 name, uint8 ndim, uint64 dims[ndim],
                float64 data[prod(dims)]
"""
from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from ..errors import CheckpointError

MAGIC = b"MMBCKPT\0"
VERSION = 1


def encode(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, count = struct.unpack_from("<II", blob, 8)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 16
    out = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            dims = struct.unpack_from(f"<{ndim}Q", blob, pos)
            pos += 8 * ndim
            n = int(np.prod(dims)) if ndim else 1
            data = np.frombuffer(blob, dtype="<f8", count=n, offset=pos)
            pos += 8 * n
            out[name] = data.reshape(dims).astype(float)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from exc
    return out


def atomic_write_bytes(path, data: bytes) -> None:
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    atomic_write_bytes(path, encode(tensors))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        return decode(f.read())


def load_into(module, path) -> None:
    """Load a checkpoint into ``module``; shape mismatches are rejected by name."""
    state = load_checkpoint(path)
    expected = module.state_dict()
    bad = [f"{k}: file {state[k].shape} vs model {v.shape}" for k, v in expected.items()
           if k in state and state[k].shape != v.shape]
    if bad:
        raise CheckpointError("shape mismatch: " + "; ".join(bad))
    missing = sorted(set(expected) - set(state))
    if missing:
        raise CheckpointError(f"checkpoint lacks tensors: {missing[:5]}")
    module.load_state_dict(state)
