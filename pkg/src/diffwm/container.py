"""Byte-reproducible named-array container (readable with ``numpy.load``)."""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np


def _write_array(zf: zipfile.ZipFile, name: str, arr: np.ndarray) -> None:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.require(arr, requirements="C"), allow_pickle=False)
    info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
    info.compress_type = zipfile.ZIP_DEFLATED
    zf.writestr(info, buf.getvalue())


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> Path:
    """``.npz``-compatible container with fixed zip timestamps (byte-reproducible)."""
    path = Path(path)
    with zipfile.ZipFile(path, "w") as zf:
        for name in sorted(arrays):
            _write_array(zf, name, arrays[name])
        if meta is not None:
            _write_array(zf, "__meta__", np.array(json.dumps(meta, sort_keys=True)))
    return path


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict | None]:
    with np.load(path, allow_pickle=False) as z:
        arrays = {k: z[k] for k in z.files}
    meta = arrays.pop("__meta__", None)
    return arrays, (None if meta is None else json.loads(str(meta.reshape(-1)[0])))
