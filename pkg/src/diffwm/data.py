"""Dataset ingestion: IDX (MNIST-family) files and synthetic desk-scale corpora."""

from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np


class IDXFormatError(ValueError):
    """Base class for malformed IDX files."""


class IDXMagicError(IDXFormatError):
    pass


class IDXTruncatedError(IDXFormatError):
    pass


class IDXDimensionError(IDXFormatError):
    pass


def parse_idx_images(raw: bytes) -> np.ndarray:
    """Decode an unsigned-byte, rank-3 IDX payload into an ``(N, H, W)`` uint8 array."""
    if len(raw) < 4:
        raise IDXTruncatedError(f"IDX header needs 4 bytes, file has {len(raw)}")
    if raw[0] != 0 or raw[1] != 0 or raw[2] != 0x08:
        raise IDXMagicError(f"bad IDX magic {raw[:4].hex()}: expected 00 00 08 03")
    if raw[3] != 3:
        raise IDXDimensionError(f"expected 3 dimensions (N, rows, cols), header says {raw[3]}")
    if len(raw) < 16:
        raise IDXTruncatedError("IDX header truncated inside the dimension sizes")
    dims = tuple(int(d) for d in np.frombuffer(raw, dtype=">u4", count=3, offset=4))
    expected = int(np.prod(dims))
    payload = len(raw) - 16
    if payload < expected:
        raise IDXTruncatedError(f"payload has {payload} bytes, dimensions {dims} need {expected}")
    if payload > expected:
        raise IDXDimensionError(f"payload has {payload} bytes, more than dimensions {dims} allow ({expected})")
    return np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(dims)


def load_idx_dataset(path) -> np.ndarray:
    """Load an IDX image file as ``(N, H, W, 1)`` floats mapped to [-1, 1]."""
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix == ".gz":
        import gzip

        raw = gzip.decompress(raw)
    images = parse_idx_images(raw)
    return (images.astype(np.float64) / 127.5 - 1.0)[..., None]


def _ellipse(rng, size):
    # keep the shape away from the bottom-right corner, where marks usually go
    cx, cy = rng.uniform(0.3, 0.55, 2) * size
    a = rng.uniform(0.18, 0.28) * size
    b = a / rng.uniform(1.7, 2.5)
    theta = rng.uniform(0, 180)
    img = np.zeros((size, size), np.uint8)
    cv2.ellipse(img, (int(round(cx * 16)), int(round(cy * 16))),
                (int(round(a * 16)), int(round(b * 16))), theta, 0, 360, 255, -1,
                lineType=cv2.LINE_8, shift=4)
    return img


def _strokes(rng, size):
    img = np.zeros((size, size), np.uint8)
    n = rng.integers(2, 4)
    pts = (rng.uniform(0.15, 0.7, (n + 1, 2)) * size * 16).round().astype(np.int32)
    thickness = max(1, size // 10)
    cv2.polylines(img, [pts.reshape(-1, 1, 2)], False, 255, thickness, cv2.LINE_8, shift=4)
    return img


def make_synthetic_dataset(n: int, size: int = 16, kind: str = "blobs", seed: int = 0) -> np.ndarray:
    """Deterministic ``(n, size, size, 1)`` corpus with values in {-1, 1}.

    ``blobs`` draws one elongated, randomly rotated ellipse per image;
    ``digits-like`` draws a short random polyline stroke.
    """
    if size < 8:
        raise ValueError("size must be >= 8")
    draw = {"blobs": _ellipse, "digits-like": _strokes}.get(kind)
    if draw is None:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    rng = np.random.default_rng(seed)
    out = np.empty((n, size, size, 1))
    for i in range(n):
        out[i, ..., 0] = np.where(draw(rng, size) > 0, 1.0, -1.0)
    return out
