"""Checkpoint container: named float32 arrays in a single CRC-checked binary file.

Layout: 8-byte magic, u32 header length, JSON header (kind, metadata and an
array table with name/dtype/shape/offset), raw little-endian float32 payload,
trailing CRC32 over everything before it.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"PGSDWT01"


class WeightsFileError(RuntimeError):
    pass


def save_weights(path, kind: str, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write named arrays to `path`. Values are stored as little-endian float32.

    Array order is canonicalized (sorted by name) so equal contents always
    serialize to identical bytes.
    """
    names = sorted(arrays)
    if len(set(names)) != len(names):
        raise WeightsFileError("duplicate array names")
    table = []
    blobs = []
    offset = 0
    for name in names:
        arr = np.ascontiguousarray(arrays[name], dtype="<f4")
        table.append({"name": name, "dtype": "f4", "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += len(blobs[-1])
    header = json.dumps(
        {"kind": kind, "meta": meta or {}, "arrays": table},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    body = MAGIC + struct.pack("<I", len(header)) + header + b"".join(blobs)
    crc = zlib.crc32(body) & 0xFFFFFFFF
    Path(path).write_bytes(body + struct.pack("<I", crc))


def load_weights(path) -> tuple[str, dict[str, np.ndarray], dict]:
    """Read a weights file, validating magic and CRC. Returns (kind, arrays, meta)."""
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 8:
        raise WeightsFileError(f"{path}: truncated file")
    body, (crc_stored,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc_stored:
        raise WeightsFileError(f"{path}: CRC mismatch")
    if body[: len(MAGIC)] != MAGIC:
        raise WeightsFileError(f"{path}: bad magic {body[:len(MAGIC)]!r}")
    (hlen,) = struct.unpack("<I", body[len(MAGIC): len(MAGIC) + 4])
    hstart = len(MAGIC) + 4
    header = json.loads(body[hstart: hstart + hlen].decode("utf-8"))
    payload = body[hstart + hlen:]
    arrays = {}
    for entry in header["arrays"]:
        if entry["name"] in arrays:
            raise WeightsFileError(f"{path}: duplicate array {entry['name']!r}")
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=start)
        arrays[entry["name"]] = arr.reshape(shape).copy()
    return header["kind"], arrays, header.get("meta", {})
