"""Watermark pattern construction, dynamic amplitude scaling and ``b_t``."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np

Shape = Literal["square", "plus", "cross"]
Position = Literal["bottom_right", "center"]
ScaleMode = Literal["batch", "sample", "static"]


@dataclass(frozen=True)
class WatermarkSpec:
    """Everything needed to embed one watermark.

    ``pattern`` is an ``H x W x C`` image in [0, 1] before dynamic scaling.
    ``scale_mode`` selects how the pattern amplitude follows the noised data:
    ``"batch"`` uses one factor per training batch, ``"sample"`` one per
    element, and ``"static"`` multiplies by ``static_scale`` only (the fixed
    pattern assumed by the closed-form derivation).
    """

    pattern: np.ndarray = field(repr=False)
    gamma: float = 0.8
    t_A: int = 500
    f1_mode: Literal["theorem", "zero"] = "zero"
    shape: Shape | None = "square"
    position: Position | None = "bottom_right"
    scale_mode: ScaleMode = "batch"
    static_scale: float = 1.0

    def __post_init__(self):
        pattern = np.array(self.pattern, dtype=np.float64)
        if pattern.ndim == 2:
            pattern = pattern[..., None]
        if pattern.ndim != 3:
            raise ValueError(f"pattern must be H x W x C, got shape {pattern.shape}")
        if not np.all(np.isfinite(pattern)):
            raise ValueError("pattern must be finite")
        if pattern.min() < 0 or pattern.max() > 1:
            raise ValueError("pattern values must lie in [0, 1]")
        pattern.setflags(write=False)
        object.__setattr__(self, "pattern", pattern)
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.t_A < 1:
            raise ValueError(f"t_A must be >= 1, got {self.t_A}")
        if self.f1_mode not in ("theorem", "zero"):
            raise ValueError(f"unknown f1 mode {self.f1_mode!r}")
        if self.scale_mode not in ("batch", "sample", "static"):
            raise ValueError(f"unknown scale mode {self.scale_mode!r}")

    @property
    def channel_mask(self) -> np.ndarray:
        return np.any(self.pattern > 0, axis=(0, 1))

    @property
    def is_zero(self) -> bool:
        return not np.any(self.pattern)

    def check_schedule(self, T: int) -> None:
        if not 1 <= self.t_A <= T:
            raise ValueError(f"t_A={self.t_A} outside [1, {T}]")

    def zeroed(self) -> "WatermarkSpec":
        return replace(self, pattern=np.zeros_like(self.pattern))


def _mark_mask(shape: str, n: int, stroke: int) -> np.ndarray:
    i, j = np.mgrid[:n, :n]
    if shape == "square":
        return np.ones((n, n), dtype=bool)
    if shape == "plus":
        lo = (n - stroke) // 2
        band_r = (i >= lo) & (i < lo + stroke)
        band_c = (j >= lo) & (j < lo + stroke)
        return band_r | band_c
    if shape == "cross":
        return (np.abs(i - j) < stroke) | (np.abs(i + j - (n - 1)) < stroke)
    raise ValueError(f"unknown watermark shape {shape!r}")


def make_pattern(shape: Shape, position: Position, mark_size: int,
                 canvas: Sequence[int], color: float | Sequence[float] = 1.0,
                 stroke: int | None = None, margin: int = 1) -> np.ndarray:
    """Rasterize a mark on an all-zero ``H x W x C`` canvas.

    ``stroke`` is the bar width of ``plus``/``cross`` marks (default
    ``max(2, mark_size // 4)``, capped at ``mark_size``; one-pixel diagonals
    trace a contour with no area); ``margin`` is the gap to the image border for
    ``bottom_right`` placement.
    """
    if len(canvas) == 2:
        canvas = (*canvas, 1)
    H, W, C = (int(v) for v in canvas)
    color = np.broadcast_to(np.asarray(color, dtype=np.float64), (C,))
    if np.any(color < 0) or np.any(color > 1):
        raise ValueError("color must lie in [0, 1]")
    n = int(mark_size)
    if n < 1:
        raise ValueError("mark_size must be >= 1")
    if stroke is None:
        stroke = min(n, max(2, n // 4))
    if position == "bottom_right":
        r0, c0 = H - margin - n, W - margin - n
    elif position == "center":
        r0, c0 = (H - n) // 2, (W - n) // 2
    else:
        raise ValueError(f"unknown position {position!r}")
    if r0 < 0 or c0 < 0 or r0 + n > H or c0 + n > W:
        raise ValueError(f"a {n}px mark does not fit a {H}x{W} canvas at {position}")
    mask = _mark_mask(shape, n, stroke)
    out = np.zeros((H, W, C))
    out[r0:r0 + n, c0:c0 + n, :] = mask[..., None] * color
    return out


def scale_pattern_dynamic(pattern: np.ndarray, reference_batch: np.ndarray,
                          per_sample: bool = False) -> np.ndarray:
    """Stretch ``pattern`` so its maximum equals the largest ``|x_t|`` seen.

    With ``per_sample`` the first axis of ``reference_batch`` indexes samples
    and one scaled pattern per sample is returned.
    """
    pattern = np.asarray(pattern, dtype=np.float64)
    ref = np.asarray(reference_batch, dtype=np.float64)
    if ref.size == 0:
        raise ValueError("reference batch is empty")
    pmax = pattern.max()
    if pmax <= 0:
        raise ValueError("cannot scale an all-zero pattern")
    if per_sample:
        s = np.abs(ref).reshape(len(ref), -1).max(axis=1) / pmax
        return s.reshape((-1,) + (1,) * pattern.ndim) * pattern
    return pattern * (np.abs(ref).max() / pmax)


def compute_bt(x0: np.ndarray, scaled_pattern: np.ndarray, f1, f2) -> np.ndarray:
    x0 = np.asarray(x0, dtype=np.float64)
    scaled_pattern = np.asarray(scaled_pattern, dtype=np.float64)
    try:
        out_shape = np.broadcast_shapes(x0.shape, scaled_pattern.shape)
    except ValueError as e:
        raise ValueError(f"shape mismatch: {x0.shape} vs {scaled_pattern.shape}") from e
    if out_shape != x0.shape:
        raise ValueError(f"pattern shape {scaled_pattern.shape} does not fit x0 {x0.shape}")
    return f1 * x0 + f2 * scaled_pattern


def load_pattern_png(path) -> np.ndarray:
    """Read a grayscale or RGB PNG as an ``H x W x C`` pattern in [0, 1]."""
    from PIL import Image

    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        a = np.asarray(im, dtype=np.float64) / 255.0
    return a[..., None] if a.ndim == 2 else a
