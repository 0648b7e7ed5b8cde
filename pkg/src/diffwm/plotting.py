"""PNG figures: batch-averaged trajectory strips and sample grids.

Layouts are computed in whole pixels, so a figure with ``r x c`` cells of side
``cell`` separated by ``margin`` is exactly
``(margin + c * (cell + margin)) x (margin + r * (cell + margin))``.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from diffwm.reverse import TrajectoryBatch


def grid_size(rows: int, cols: int, cell: int, margin: int) -> tuple[int, int]:
    """``(width, height)`` in pixels."""
    return margin + cols * (cell + margin), margin + rows * (cell + margin)


def _stretch(img: np.ndarray) -> np.ndarray:
    lo, hi = img.min(), img.max()
    if hi - lo <= 0:
        return np.full(img.shape, 128, np.uint8)
    return np.rint((img - lo) / (hi - lo) * 255).astype(np.uint8)


def _fixed(img: np.ndarray) -> np.ndarray:
    return np.rint((np.clip(img, -1, 1) + 1) * 127.5).astype(np.uint8)


def _tile(u8: np.ndarray, cell: int) -> Image.Image:
    u8 = u8[..., 0] if u8.ndim == 3 and u8.shape[2] == 1 else u8
    im = Image.fromarray(np.ascontiguousarray(u8), "L" if u8.ndim == 2 else "RGB")
    return im.resize((cell, cell), Image.NEAREST).convert("RGB")


def _compose(cells: list[list[np.ndarray]], path, cell: int, margin: int, background: int = 255) -> Path:
    rows, cols = len(cells), max(len(r) for r in cells)
    canvas = Image.new("RGB", grid_size(rows, cols, cell, margin), (background,) * 3)
    for i, row in enumerate(cells):
        for j, u8 in enumerate(row):
            canvas.paste(_tile(u8, cell), (margin + j * (cell + margin), margin + i * (cell + margin)))
    path = Path(path)
    canvas.save(path, format="PNG")
    return path


def emit_trajectory_plot(batches: TrajectoryBatch | Sequence[TrajectoryBatch], steps: Sequence[int],
                         path, cell: int = 64, margin: int = 4) -> Path:
    """One row per batch, one column per step, each cell the batch average.

    Step 0 falls back to the (corrected) finals when no raw ``t = 0``
    snapshot was recorded. Each cell is contrast-stretched on its own.
    """
    if isinstance(batches, TrajectoryBatch):
        batches = [batches]
    if not batches or not steps:
        raise ValueError("need at least one batch and one step")
    rows = []
    for b in batches:
        row = []
        for s in steps:
            if s in b.snapshots:
                data = b.snapshots[s]
            elif s == 0:
                data = b.finals
            else:
                raise KeyError(f"step {s} was not recorded; available: {sorted(b.snapshots)}")
            row.append(_stretch(np.asarray(data, np.float64).mean(axis=0)))
        rows.append(row)
    return _compose(rows, path, cell, margin)


def emit_sample_grid(samples: np.ndarray, path, cols: int = 10, cell: int = 32, margin: int = 2) -> Path:
    """Individual samples in [-1, 1], row-major."""
    samples = np.asarray(samples, np.float64)
    if len(samples) == 0:
        raise ValueError("no samples to plot")
    cells = [_fixed(s) for s in samples]
    return _compose([cells[i:i + cols] for i in range(0, len(cells), cols)], path, cell, margin)


def emit_comparison_grid(sample_sets: Sequence[np.ndarray], path, n: int = 8,
                         cell: int = 32, margin: int = 2) -> Path:
    """One row of the first ``n`` samples per configuration, for side-by-side comparison."""
    if not sample_sets:
        raise ValueError("no sample sets")
    rows = [[_fixed(s) for s in np.asarray(ss, np.float64)[:n]] for ss in sample_sets]
    if any(not r for r in rows):
        raise ValueError("every sample set needs at least one sample")
    return _compose(rows, path, cell, margin)
