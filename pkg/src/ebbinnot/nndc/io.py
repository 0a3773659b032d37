"""Binary weights file.

Layout (little endian)::

    b"NNDC" | version u32 | n_tensors u32 |
    per tensor: name_len u32, name bytes, rank u32, dims u32 * rank, f32 values
    | crc32 u32 of everything after the magic and before the trailer

Keys starting with ``meta.`` carry side information (``meta.geometry`` holds
the sensor (A, B) the network was trained for).
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"NNDC"
VERSION = 1


class WeightsFormatError(ValueError):
    pass


def save_weights(path, weights: dict, geometry: tuple[int, int] | None = None) -> None:
    tensors = dict(weights)
    if geometry is not None:
        tensors["meta.geometry"] = np.asarray(geometry, dtype=np.float32)
    parts = [struct.pack("<II", VERSION, len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    payload = b"".join(parts)
    Path(path).write_bytes(MAGIC + payload + struct.pack("<I", zlib.crc32(payload)))


def load_weights(path, dtype=np.float32) -> tuple[dict, tuple[int, int] | None]:
    """Returns (weights without ``meta.`` keys, geometry or None)."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise WeightsFormatError(f"{path}: not a weights file (bad magic)")
    if len(data) < 16:
        raise WeightsFormatError(f"{path}: truncated")
    payload, (crc,) = data[4:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(payload) != crc:
        raise WeightsFormatError(f"{path}: checksum mismatch")
    version, count = struct.unpack_from("<II", payload, 0)
    if version != VERSION:
        raise WeightsFormatError(f"{path}: unsupported version {version}")
    off, out = 8, {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", payload, off)
            off += 4
            name = payload[off:off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<I", payload, off)
            dims = struct.unpack_from(f"<{rank}I", payload, off + 4)
            off += 4 + 4 * rank
            size = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(payload, dtype="<f4", count=size, offset=off).reshape(dims)
            off += 4 * size
            out[name] = arr.astype(dtype)
    except (struct.error, ValueError) as exc:
        raise WeightsFormatError(f"{path}: truncated tensor table ({exc})") from None
    if off != len(payload):
        raise WeightsFormatError(f"{path}: {len(payload) - off} trailing bytes")
    geom = out.pop("meta.geometry", None)
    for k in [k for k in out if k.startswith("meta.")]:
        out.pop(k)
    return out, (tuple(int(v) for v in geom) if geom is not None else None)
