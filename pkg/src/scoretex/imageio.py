"""Image file helpers: 8/16-bit PNG via Pillow, float EXR via OpenCV.

All in-memory images are float arrays; PNG round-trips quantize to the
stated bit depth, EXR round-trips are float32-exact.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def write_png(path, image: np.ndarray, bit_depth: int = 8) -> None:
    """Save a float image in [0, 1] (HxW or HxWx3) as PNG."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    arr = np.clip(arr, 0.0, 1.0)
    if bit_depth == 8:
        data = np.round(arr * 255.0).astype(np.uint8)
        Image.fromarray(data).save(path)
    elif bit_depth == 16:
        data = np.round(arr * 65535.0).astype(np.uint16)
        if data.ndim == 2:
            Image.fromarray(data).save(path)
        else:
            # Pillow has no 16-bit RGB mode; write per the PNG spec via raw encoder
            import struct
            import zlib

            h, w = data.shape[:2]
            raw = b"".join(
                b"\x00" + data[r].astype(">u2").tobytes() for r in range(h))
            def chunk(tag, payload):
                return (struct.pack(">I", len(payload)) + tag + payload
                        + struct.pack(">I", zlib.crc32(tag + payload)))
            header = struct.pack(">IIBBBBB", w, h, 16, 2, 0, 0, 0)
            png = (b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", header)
                   + chunk(b"IDAT", zlib.compress(raw, 9)) + chunk(b"IEND", b""))
            Path(path).write_bytes(png)
    else:
        raise ValueError(f"unsupported bit depth {bit_depth}")


def read_png(path) -> np.ndarray:
    """Load a PNG as float in [0, 1]; shape (H, W) or (H, W, 3)."""
    with Image.open(path) as im:
        if im.mode in ("I;16", "I"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        elif im.mode == "RGBA":
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
        elif im.mode in ("RGB", "L"):
            arr = np.asarray(im, dtype=np.float64) / 255.0
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr


def write_exr(path, image: np.ndarray) -> None:
    """Save a float32 HDR image (HxW or HxWx3) as EXR."""
    from .exr import write_exr_file

    write_exr_file(path, image)


def read_exr(path) -> np.ndarray:
    """Load an EXR as float32; RGB images come back as (H, W, 3)."""
    from .exr import read_exr_file

    return read_exr_file(path)
