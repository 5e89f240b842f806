"""Grayscale image I/O: binary PGM (P5, 8- or 16-bit) and a raw float64
container for bit-exact regression dumps.

Pixel values travel as floats in [0, 1]; PGM writing quantizes to the
requested bit depth, reading maps back through the stored maxval.
"""

from __future__ import annotations

import struct

import numpy as np

__all__ = ["read_pgm", "write_pgm", "read_raw_f64", "write_raw_f64", "read_image", "write_image"]

_F64_MAGIC = b"VMPF64\n"


def write_pgm(path, img, bits=16):
    """Write a (height, width) float array in [0, 1] as binary PGM."""
    img = np.asarray(img, dtype=float)
    if img.ndim != 2:
        raise ValueError("expected a 2-D image")
    if bits == 8:
        maxval, dtype = 255, ">u1"
    elif bits == 16:
        maxval, dtype = 65535, ">u2"
    else:
        raise ValueError("bits must be 8 or 16")
    q = np.rint(np.clip(img, 0.0, 1.0) * maxval).astype(dtype)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii"))
        fh.write(q.tobytes())


def read_pgm(path):
    """Read a binary PGM into a (height, width) float array in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise ValueError("not a binary (P5) PGM file")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace byte after maxval
    width, height, maxval = fields
    dtype = ">u1" if maxval < 256 else ">u2"
    raw = np.frombuffer(data, dtype=dtype, count=width * height, offset=pos)
    return raw.reshape(height, width).astype(float) / maxval


def write_raw_f64(path, img):
    """Bit-exact float64 dump with a tiny header (magic, height, width)."""
    img = np.ascontiguousarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("expected a 2-D image")
    with open(path, "wb") as fh:
        fh.write(_F64_MAGIC)
        fh.write(struct.pack("<qq", img.shape[0], img.shape[1]))
        fh.write(img.tobytes())


def read_raw_f64(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(_F64_MAGIC))
        if magic != _F64_MAGIC:
            raise ValueError("not a raw float64 image file")
        h, w = struct.unpack("<qq", fh.read(16))
        data = np.frombuffer(fh.read(8 * h * w), dtype=np.float64)
    return data.reshape(h, w).copy()


def read_image(path):
    """Dispatch on extension: .pgm or .f64."""
    path = str(path)
    if path.endswith(".pgm"):
        return read_pgm(path)
    if path.endswith(".f64"):
        return read_raw_f64(path)
    raise ValueError(f"unsupported image format: {path}")


def write_image(path, img, bits=16):
    path = str(path)
    if path.endswith(".pgm"):
        write_pgm(path, img, bits=bits)
    elif path.endswith(".f64"):
        write_raw_f64(path, img)
    else:
        raise ValueError(f"unsupported image format: {path}")
