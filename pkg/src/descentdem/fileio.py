"""File formats: portable float maps, PNG masks/previews, checkpoints."""

from __future__ import annotations

import struct

import numpy as np
from PIL import Image

CHECKPOINT_MAGIC = b"DDEM"
CHECKPOINT_VERSION = 1


# ------------------------------------------------------------------- PFM ---


def write_pfm(path, image: np.ndarray) -> None:
    """Write a 2-D (grayscale) or HxWx3 (color) float32 PFM, little endian.

    Rows are stored bottom-to-top with scale field -1.0, per the format.
    """
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 2:
        tag = b"Pf"
        h, w = img.shape
    elif img.ndim == 3 and img.shape[2] == 3:
        tag = b"PF"
        h, w = img.shape[:2]
    else:
        raise ValueError(f"unsupported PFM shape {img.shape}")
    with open(path, "wb") as f:
        f.write(tag + b"\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.flipud(img).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    """Read a PFM written by write_pfm (or any standard PFM)."""
    with open(path, "rb") as f:
        tag = f.readline().strip()
        if tag not in (b"Pf", b"PF"):
            raise ValueError(f"not a PFM file: {path}")
        w, h = (int(x) for x in f.readline().split())
        scale = float(f.readline())
        channels = 3 if tag == b"PF" else 1
        data = np.frombuffer(
            f.read(w * h * channels * 4), dtype="<f4" if scale < 0 else ">f4"
        )
    img = data.reshape(h, w, channels) if channels == 3 else data.reshape(h, w)
    return np.flipud(img).copy()


# ------------------------------------------------------------------- PNG ---


def write_mask_png(path, valid: np.ndarray) -> None:
    """8-bit grayscale mask; nonzero means valid."""
    arr = np.where(np.asarray(valid, dtype=bool), 255, 0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def read_mask_png(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("L"))
    return arr > 0


def _srgb_encode(linear: np.ndarray) -> np.ndarray:
    c = np.clip(linear, 0.0, 1.0)
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * c ** (1 / 2.4) - 0.055)


def write_preview_png(path, linear_rgb: np.ndarray) -> None:
    """Gamma-encoded preview of a linear-light image (display only)."""
    srgb = _srgb_encode(np.asarray(linear_rgb, dtype=np.float64))
    arr = np.round(srgb * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def write_gray_preview_png(path, values: np.ndarray) -> None:
    """Normalized grayscale rendering of a scalar field (NaN shown black)."""
    v = np.asarray(values, dtype=np.float64)
    finite = np.isfinite(v)
    if finite.any():
        lo, hi = v[finite].min(), v[finite].max()
        span = hi - lo if hi > lo else 1.0
        norm = np.where(finite, (v - lo) / span, 0.0)
    else:
        norm = np.zeros_like(v)
    Image.fromarray(np.round(norm * 255).astype(np.uint8), mode="L").save(path)


# ------------------------------------------------------------ checkpoint ---


def write_checkpoint(path, tensors: dict) -> None:
    """Versioned binary dump of named parameter arrays as float32.

    Layout (all integers little-endian uint32): magic 'DDEM', version,
    tensor count, then per tensor: name length, utf-8 name, ndim, shape,
    raw little-endian float32 data. Entries are written in sorted name
    order so identical parameters give identical bytes.
    """
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(tensors)))
        for name in sorted(tensors):
            arr = np.asarray(tensors[name], dtype="<f4")
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr).tobytes())


def read_checkpoint(path) -> dict:
    with open(path, "rb") as f:
        if f.read(4) != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file: {path}")
        version, count = struct.unpack("<II", f.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", f.read(4))
            name = f.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            n = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(f.read(4 * n), dtype="<f4").reshape(shape)
            out[name] = data.copy()
    return out
