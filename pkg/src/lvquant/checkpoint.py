"""Binary model checkpoints.

Layout (little-endian): magic ``LVQM``, u32 format version, 32-byte SHA-256
architecture fingerprint, u32 architecture-JSON length + JSON, u32 blob
count, then per blob: u16 name length, UTF-8 name, u32 ndim, u32 dims,
float32 payload. Batchnorm running statistics are stored as blobs named
``buffer:<name>``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import BadMagicError, CheckpointError, FingerprintMismatchError, MissingFileError
from .model import ArchConfig, ModelParams

MAGIC = b"LVQM"
VERSION = 1


def save_checkpoint(params: ModelParams, path) -> Path:
    path = Path(path)
    arch_json = json.dumps(asdict(params.arch), sort_keys=True).encode()
    blobs = [(k, v) for k, v in params.arrays.items()] + [(f"buffer:{k}", v) for k, v in params.buffers.items()]
    parts = [MAGIC, struct.pack("<I", VERSION), bytes.fromhex(params.arch.fingerprint()),
             struct.pack("<I", len(arch_json)), arch_json, struct.pack("<I", len(blobs))]
    for name, arr in blobs:
        arr = np.asarray(arr, dtype="<f4")
        nb = name.encode()
        parts += [struct.pack("<H", len(nb)), nb, struct.pack("<I", arr.ndim),
                  struct.pack(f"<{arr.ndim}I", *arr.shape), np.ascontiguousarray(arr).tobytes()]
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(parts))
    return path


def load_checkpoint(path, expected_arch: ArchConfig | None = None) -> ModelParams:
    """Read a checkpoint; rejects files whose fingerprint differs from ``expected_arch``."""
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"{path}: checkpoint not found")
    data = path.read_bytes()
    if data[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {data[:4]!r}, expected {MAGIC!r}")
    try:
        (version,) = struct.unpack_from("<I", data, 4)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        fp = data[8:40].hex()
        (alen,) = struct.unpack_from("<I", data, 40)
        arch_dict = json.loads(data[44:44 + alen])
        arch_dict["channels"] = tuple(arch_dict["channels"])
        arch = ArchConfig(**arch_dict)
        if arch.fingerprint() != fp:
            raise FingerprintMismatchError(f"{path}: stored fingerprint does not match its architecture record")
        if expected_arch is not None and expected_arch.fingerprint() != fp:
            raise FingerprintMismatchError(
                f"{path}: architecture fingerprint {fp[:12]} != expected {expected_arch.fingerprint()[:12]}")
        off = 44 + alen
        (count,) = struct.unpack_from("<I", data, off)
        off += 4
        arrays, buffers = {}, {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off:off + nlen].decode()
            off += nlen
            (ndim,) = struct.unpack_from("<I", data, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}I", data, off)
            off += 4 * ndim
            n = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(shape).astype(np.float32)
            off += 4 * n
            if name.startswith("buffer:"):
                buffers[name[len("buffer:"):]] = arr
            else:
                arrays[name] = arr
    except (struct.error, ValueError, KeyError, TypeError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint ({exc})") from None
    if off != len(data):
        raise CheckpointError(f"{path}: {len(data) - off} trailing bytes")
    return ModelParams(arch, arrays, buffers)
