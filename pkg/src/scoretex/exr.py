"""Minimal OpenEXR scanline codec (no external image libraries needed).

Writes single-part float32 RGB/grayscale images uncompressed; reads
uncompressed, ZIPS and ZIP scanline files with FLOAT or HALF channels.
Covers lat-long environment maps and linear render dumps, not the full
format (no tiles, no deep data, no multi-part).
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = 20000630
PIXEL_UINT, PIXEL_HALF, PIXEL_FLOAT = 0, 1, 2
COMP_NONE, COMP_RLE, COMP_ZIPS, COMP_ZIP = 0, 1, 2, 3
_COMP_LINES = {COMP_NONE: 1, COMP_ZIPS: 1, COMP_ZIP: 16}


class ExrError(IOError):
    pass


def _attr(name: bytes, typ: bytes, value: bytes) -> bytes:
    return name + b"\0" + typ + b"\0" + struct.pack("<i", len(value)) + value


def _channel_entry(name: bytes, pixel_type: int) -> bytes:
    return name + b"\0" + struct.pack("<iBBBBii", pixel_type, 0, 0, 0, 0, 1, 1)


def write_exr_file(path, image: np.ndarray) -> None:
    """Store (H, W) or (H, W, 3) float data as an uncompressed FLOAT EXR."""
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ExrError(f"unsupported image shape {arr.shape}")
    h, w, c = arr.shape
    names = [b"Y"] if c == 1 else [b"B", b"G", b"R"]  # stored alphabetically
    planes = [arr[:, :, 0]] if c == 1 else [arr[:, :, 2], arr[:, :, 1], arr[:, :, 0]]

    chlist = b"".join(_channel_entry(n, PIXEL_FLOAT) for n in names) + b"\0"
    box = struct.pack("<iiii", 0, 0, w - 1, h - 1)
    header = b"".join([
        _attr(b"channels", b"chlist", chlist),
        _attr(b"compression", b"compression", struct.pack("<B", COMP_NONE)),
        _attr(b"dataWindow", b"box2i", box),
        _attr(b"displayWindow", b"box2i", box),
        _attr(b"lineOrder", b"lineOrder", struct.pack("<B", 0)),
        _attr(b"pixelAspectRatio", b"float", struct.pack("<f", 1.0)),
        _attr(b"screenWindowCenter", b"v2f", struct.pack("<ff", 0.0, 0.0)),
        _attr(b"screenWindowWidth", b"float", struct.pack("<f", 1.0)),
        b"\0",
    ])
    preamble = struct.pack("<ii", MAGIC, 2) + header

    line_bytes = w * 4 * len(names)
    offset = len(preamble) + 8 * h
    offsets = [offset + i * (8 + line_bytes) for i in range(h)]
    chunks = []
    for y in range(h):
        data = b"".join(np.ascontiguousarray(p[y], dtype="<f4").tobytes()
                        for p in planes)
        chunks.append(struct.pack("<ii", y, len(data)) + data)
    blob = preamble + struct.pack(f"<{h}Q", *offsets) + b"".join(chunks)
    Path(path).write_bytes(blob)


def _read_cstring(buf: bytes, pos: int) -> tuple[bytes, int]:
    end = buf.index(b"\0", pos)
    return buf[pos:end], end + 1


def _unzip_exr(data: bytes, expected: int) -> bytes:
    if len(data) == expected:
        return data  # stored raw: compression did not help
    raw = bytearray(zlib.decompress(data))
    # undo the delta predictor, then de-interleave the two halves
    for i in range(1, len(raw)):
        raw[i] = (raw[i - 1] + raw[i] - 128) & 0xFF
    half = (len(raw) + 1) // 2
    out = bytearray(len(raw))
    out[0::2] = raw[:half]
    out[1::2] = raw[half:]
    return bytes(out)


def read_exr_file(path) -> np.ndarray:
    """Load a scanline EXR as float32 (H, W) or (H, W, 3)."""
    buf = Path(path).read_bytes()
    if len(buf) < 8 or struct.unpack("<i", buf[:4])[0] != MAGIC:
        raise ExrError(f"{path}: not an EXR file")
    version = struct.unpack("<i", buf[4:8])[0]
    if version & 0x200:
        raise ExrError(f"{path}: tiled EXR not supported")
    pos = 8

    channels = []          # (name, pixel_type)
    compression = COMP_NONE
    data_window = None
    while True:
        name, pos = _read_cstring(buf, pos)
        if name == b"":
            break
        typ, pos = _read_cstring(buf, pos)
        (size,) = struct.unpack_from("<i", buf, pos)
        pos += 4
        value = buf[pos:pos + size]
        pos += size
        if name == b"channels":
            cpos = 0
            while value[cpos] != 0:
                cname, cpos = _read_cstring(value, cpos)
                ptype, = struct.unpack_from("<i", value, cpos)
                cpos += 16
                channels.append((cname.decode("latin1"), ptype))
        elif name == b"compression":
            compression = value[0]
        elif name == b"dataWindow":
            data_window = struct.unpack("<iiii", value)
    if data_window is None or not channels:
        raise ExrError(f"{path}: missing required headers")
    if compression not in _COMP_LINES:
        raise ExrError(f"{path}: unsupported compression {compression}")
    for _, ptype in channels:
        if ptype not in (PIXEL_HALF, PIXEL_FLOAT):
            raise ExrError(f"{path}: unsupported pixel type {ptype}")

    x0, y0, x1, y1 = data_window
    w, h = x1 - x0 + 1, y1 - y0 + 1
    lines_per = _COMP_LINES[compression]
    n_chunks = (h + lines_per - 1) // lines_per
    offsets = struct.unpack_from(f"<{n_chunks}Q", buf, pos)

    psize = {PIXEL_HALF: 2, PIXEL_FLOAT: 4}
    dt = {PIXEL_HALF: "<f2", PIXEL_FLOAT: "<f4"}
    planes = {name: np.empty((h, w), dtype=np.float32) for name, _ in channels}
    for off in offsets:
        y, packed = struct.unpack_from("<ii", buf, off)
        rows = min(lines_per, y1 - y + 1)
        expected = rows * w * sum(psize[t] for _, t in channels)
        data = buf[off + 8: off + 8 + packed]
        if compression in (COMP_ZIP, COMP_ZIPS):
            data = _unzip_exr(data, expected)
        if len(data) != expected:
            raise ExrError(f"{path}: chunk at y={y} has wrong size")
        dpos = 0
        for r in range(rows):
            for cname, ptype in channels:
                nbytes = w * psize[ptype]
                row = np.frombuffer(data, dtype=dt[ptype], count=w, offset=dpos)
                planes[cname][y - y0 + r] = row.astype(np.float32)
                dpos += nbytes

    have = {name for name, _ in channels}
    if {"R", "G", "B"} <= have:
        return np.stack([planes["R"], planes["G"], planes["B"]], axis=-1)
    if len(channels) == 1:
        return planes[channels[0][0]]
    raise ExrError(f"{path}: unsupported channel set {sorted(have)}")
