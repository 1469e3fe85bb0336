"""Binary checkpoint format.

Layout::

    b"MCRMLAB\\0" | u32 version | u64 header length | JSON header | float64 payload

The header is canonical JSON (sorted keys, no whitespace) holding run metadata,
a manifest of ``[name, shape, offset]`` entries and the SHA-256 of the payload.
Tensors are little-endian float64, concatenated in manifest order.  Nothing in
the file depends on time or host, so saving the same content twice gives the
same bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MCRMLAB\x00"
VERSION = 1
_PREFIX = struct.Struct("<IQ")


class CheckpointError(ValueError):
    pass


def dumps(meta: dict, tensors: dict[str, np.ndarray]) -> bytes:
    manifest = []
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        manifest.append([name, list(np.shape(arr)), offset])
        chunks.append(data)
        offset += len(data)
    payload = b"".join(chunks)
    header = {"meta": meta, "tensors": manifest, "payload_bytes": offset,
              "payload_sha256": hashlib.sha256(payload).hexdigest()}
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + _PREFIX.pack(VERSION, len(head)) + head + payload


def loads(raw: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if len(raw) < len(MAGIC) + _PREFIX.size or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic or truncated prefix)")
    version, head_len = _PREFIX.unpack_from(raw, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported (expected {VERSION})")
    start = len(MAGIC) + _PREFIX.size
    if len(raw) < start + head_len:
        raise CheckpointError("checkpoint header is truncated")
    try:
        header = json.loads(raw[start:start + head_len])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint header is corrupt: {exc}") from exc
    payload = raw[start + head_len:]
    if len(payload) != header["payload_bytes"]:
        raise CheckpointError(f"checkpoint payload has {len(payload)} bytes, expected {header['payload_bytes']}")
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CheckpointError("checkpoint payload checksum mismatch")
    tensors = {}
    for name, shape, offset in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
        tensors[name] = arr.reshape(shape).astype(np.float64)
    return header["meta"], tensors


def save(path, meta: dict, tensors: dict[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps(meta, tensors))
    tmp.replace(path)
    return path


def load(path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        raw = Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise CheckpointError(f"no checkpoint at {path}") from exc
    return loads(raw)
