"""Named-segment binary container used for training-state checkpoints.

Layout: ``b"MBCK"`` magic, little-endian ``u32`` segment count, then per segment
``u16`` name length, UTF-8 name, ``u64`` payload length, payload. Arrays are
encoded as ``u8`` dtype-string length, dtype string, ``u8`` ndim, ``u64`` dims,
raw little-endian bytes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .nn import CheckpointError

MAGIC = b"MBCK"


def encode_array(arr) -> bytes:
    arr = np.asarray(arr)
    dt = arr.dtype.newbyteorder("<").str.encode()
    head = struct.pack("<B", len(dt)) + dt + struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes()


def decode_array(data: bytes, segment: str) -> np.ndarray:
    try:
        n = data[0]
        dt = np.dtype(data[1 : 1 + n].decode())
        off = 1 + n
        ndim = data[off]
        off += 1
        shape = struct.unpack_from(f"<{ndim}Q", data, off)
        off += 8 * ndim
        count = int(np.prod(shape)) if ndim else 1
        if len(data) - off != count * dt.itemsize:
            raise ValueError(f"payload holds {len(data) - off} bytes, expected {count * dt.itemsize}")
        return np.frombuffer(data, dt, count, off).reshape(shape).astype(dt.newbyteorder("="))
    except (IndexError, struct.error, TypeError, ValueError) as exc:
        raise CheckpointError(segment, f"malformed array: {exc}") from exc


def encode_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def decode_json(data: bytes, segment: str):
    try:
        return json.loads(data.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(segment, f"malformed JSON: {exc}") from exc


def write_container(path, segments: list[tuple[str, bytes]]) -> None:
    parts = [MAGIC, struct.pack("<I", len(segments))]
    for name, payload in segments:
        raw = name.encode()
        parts += [struct.pack("<H", len(raw)), raw, struct.pack("<Q", len(payload)), payload]
    Path(path).write_bytes(b"".join(parts))


def read_container(path) -> dict[str, bytes]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(path.name, str(exc)) from exc
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path.name}:header", "bad magic")
    if len(data) < 8:
        raise CheckpointError(f"{path.name}:header", "truncated segment count")
    (count,) = struct.unpack_from("<I", data, 4)
    off = 8
    out: dict[str, bytes] = {}
    for k in range(count):
        label = f"{path.name}:segment#{k}"
        try:
            (nlen,) = struct.unpack_from("<H", data, off)
            name = data[off + 2 : off + 2 + nlen].decode()
            off += 2 + nlen
            label = f"{path.name}:{name}"
            (plen,) = struct.unpack_from("<Q", data, off)
            off += 8
        except (struct.error, UnicodeDecodeError) as exc:
            raise CheckpointError(label, f"truncated segment header ({exc})") from exc
        if off + plen > len(data):
            raise CheckpointError(label, f"payload truncated: need {plen} bytes, {len(data) - off} left")
        out[name] = data[off : off + plen]
        off += plen
    if off != len(data):
        raise CheckpointError(f"{path.name}:trailer", f"{len(data) - off} unexpected trailing bytes")
    return out
