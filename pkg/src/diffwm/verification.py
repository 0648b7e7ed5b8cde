"""Contour-based watermark verification on the averaged ``t_A`` snapshot.

Pipeline: stretch to 8 bit, reduce to luminance, binarize, optionally blur and
run Canny, trace outer contours, then compare every target contour with every
pattern contour through a Hu-moment shape distance.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import cv2
import numpy as np

DEFAULT_THRESHOLD = 0.1
# |Hu invariant| values below this are treated as zero before taking logs;
# symmetric shapes have several invariants that are zero up to rounding
HU_FLOOR = 1e-3


@dataclass
class VerificationReport:
    verdict: bool
    best_similarity: float
    threshold: float
    contour_counts: tuple[int, int]
    stages: list[str] = field(default_factory=list)
    edgesconvert: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["contour_counts"] = list(self.contour_counts)
        if not math.isfinite(self.best_similarity):
            d["best_similarity"] = None
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _to_uint8(image: np.ndarray) -> np.ndarray:
    x = np.asarray(image, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("image contains non-finite values")
    lo, hi = x.min(), x.max()
    if hi - lo <= 0:
        return np.zeros(x.shape, dtype=np.uint8)
    return np.rint((x - lo) / (hi - lo) * 255.0).astype(np.uint8)


def _to_gray(u8: np.ndarray) -> np.ndarray:
    if u8.ndim == 2:
        return u8
    if u8.ndim != 3:
        raise ValueError(f"expected H x W or H x W x C image, got {u8.shape}")
    if u8.shape[2] == 1:
        return u8[..., 0]
    if u8.shape[2] == 3:
        return cv2.cvtColor(np.ascontiguousarray(u8), cv2.COLOR_RGB2GRAY)
    raise ValueError(f"unsupported channel count {u8.shape[2]}")


def preprocess_traced(image, edgesconvert: bool = False, threshold: int = 128,
                      method: str = "fixed", blur_ksize: int = 5, blur_sigma: float = 1.0,
                      canny: tuple[int, int] = (50, 150)) -> tuple[np.ndarray, list[str]]:
    stages = ["uint8", "grayscale"]
    gray = _to_gray(_to_uint8(image))
    if method == "fixed":
        _, binary = cv2.threshold(gray, threshold, 255, cv2.THRESH_BINARY)
        stages.append("threshold")
    elif method == "otsu":
        _, binary = cv2.threshold(gray, 0, 255, cv2.THRESH_BINARY + cv2.THRESH_OTSU)
        stages.append("threshold_otsu")
    else:
        raise ValueError(f"unknown binarization method {method!r}")
    if edgesconvert:
        binary = cv2.GaussianBlur(binary, (blur_ksize, blur_ksize), blur_sigma)
        binary = cv2.Canny(binary, canny[0], canny[1])
        stages += ["gaussian_blur", "canny"]
    return binary, stages


def preprocess(image, edgesconvert: bool = False, **kw) -> np.ndarray:
    """Binary ``uint8`` image (values 0 / 255) ready for contour tracing."""
    return preprocess_traced(image, edgesconvert, **kw)[0]


def _signed_area(c: np.ndarray) -> float:
    x, y = c[:, 0].astype(np.float64), c[:, 1].astype(np.float64)
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def find_contours(binary) -> list[np.ndarray]:
    """Outer boundaries of the foreground components as ``(N, 2)`` ``(x, y)`` arrays.

    Every contour is oriented counterclockwise in ``(x, y)`` pixel coordinates,
    i.e. its shoelace area is non-negative.
    """
    b = np.ascontiguousarray(np.asarray(binary) > 0, dtype=np.uint8)
    found, _ = cv2.findContours(b, cv2.RETR_EXTERNAL, cv2.CHAIN_APPROX_NONE)
    out = []
    for c in found:
        c = c.reshape(-1, 2)
        if _signed_area(c) < 0:
            c = np.concatenate([c[:1], c[:0:-1]])
        out.append(c)
    return out


def polygon_moments(contour) -> dict[str, float]:
    """Raw area moments up to third order of the polygon traced by ``contour``.

    Computed with Green's theorem over the edges. The sign is normalized so
    that ``m00 >= 0`` whatever the orientation.
    """
    p = np.asarray(contour, dtype=np.float64).reshape(-1, 2)
    x1, y1 = p[:, 0], p[:, 1]
    x0, y0 = np.roll(x1, 1), np.roll(y1, 1)
    a = x0 * y1 - x1 * y0
    m = {
        "m00": a.sum() / 2,
        "m10": (a * (x0 + x1)).sum() / 6,
        "m01": (a * (y0 + y1)).sum() / 6,
        "m20": (a * (x0 * x0 + x0 * x1 + x1 * x1)).sum() / 12,
        "m11": (a * (2 * x0 * y0 + x0 * y1 + x1 * y0 + 2 * x1 * y1)).sum() / 24,
        "m02": (a * (y0 * y0 + y0 * y1 + y1 * y1)).sum() / 12,
        "m30": (a * (x0**3 + x0 * x0 * x1 + x0 * x1 * x1 + x1**3)).sum() / 20,
        "m03": (a * (y0**3 + y0 * y0 * y1 + y0 * y1 * y1 + y1**3)).sum() / 20,
        "m21": (a * (x0 * x0 * (3 * y0 + y1) + 2 * x0 * x1 * (y0 + y1) + x1 * x1 * (y0 + 3 * y1))).sum() / 60,
        "m12": (a * (y0 * y0 * (3 * x0 + x1) + 2 * y0 * y1 * (x0 + x1) + y1 * y1 * (x0 + 3 * x1))).sum() / 60,
    }
    if m["m00"] < 0:
        m = {k: -v for k, v in m.items()}
    return {k: float(v) for k, v in m.items()}


def hu_moments(contour) -> np.ndarray | None:
    """The seven Hu invariants of a contour, or ``None`` for a zero-area contour."""
    p = np.asarray(contour).reshape(-1, 2)
    if len(p) < 3:
        return None
    m = polygon_moments(p)
    m00 = m["m00"]
    if m00 <= 1e-12:
        return None
    cx, cy = m["m10"] / m00, m["m01"] / m00
    mu20 = m["m20"] - cx * m["m10"]
    mu11 = m["m11"] - cx * m["m01"]
    mu02 = m["m02"] - cy * m["m01"]
    mu30 = m["m30"] - 3 * cx * m["m20"] + 2 * cx * cx * m["m10"]
    mu21 = m["m21"] - 2 * cx * m["m11"] - cy * m["m20"] + 2 * cx * cx * m["m01"]
    mu12 = m["m12"] - 2 * cy * m["m11"] - cx * m["m02"] + 2 * cy * cy * m["m10"]
    mu03 = m["m03"] - 3 * cy * m["m02"] + 2 * cy * cy * m["m01"]
    s2, s3 = m00**2, m00**2.5
    n20, n11, n02 = mu20 / s2, mu11 / s2, mu02 / s2
    n30, n21, n12, n03 = mu30 / s3, mu21 / s3, mu12 / s3, mu03 / s3
    q0, q1 = n30 + n12, n21 + n03
    d0, d1 = n30 - 3 * n12, 3 * n21 - n03
    return np.array([
        n20 + n02,
        (n20 - n02) ** 2 + 4 * n11**2,
        d0**2 + d1**2,
        q0**2 + q1**2,
        d0 * q0 * (q0**2 - 3 * q1**2) + d1 * q1 * (3 * q0**2 - q1**2),
        (n20 - n02) * (q0**2 - q1**2) + 4 * n11 * q0 * q1,
        d1 * q0 * (q0**2 - 3 * q1**2) - d0 * q1 * (3 * q0**2 - q1**2),
    ])


def _log_hu(h: np.ndarray, floor: float) -> np.ndarray:
    mag = np.maximum(np.abs(h), floor)
    sign = np.where(np.abs(h) < floor, 1.0, np.sign(h))
    return sign * np.log10(mag)


def contour_similarity(contour_a, contour_b, floor: float = HU_FLOOR) -> float | None:
    """Shape distance between two contours; 0 for identical shapes.

    Sum over the seven Hu invariants of ``|m_a - m_b|`` with
    ``m = sign(h) * log10(max(|h|, floor))``. Returns ``None`` when either
    contour encloses no area (the pair is incomparable).
    """
    ha, hb = hu_moments(contour_a), hu_moments(contour_b)
    if ha is None or hb is None:
        return None
    return float(np.abs(_log_hu(ha, floor) - _log_hu(hb, floor)).sum())


def _crop_to_support(pattern: np.ndarray, pad: int = 1) -> np.ndarray:
    p = np.asarray(pattern, dtype=np.float64)
    mask = p.reshape(p.shape[0], p.shape[1], -1).max(axis=2) != p.min()
    if not mask.any():
        return p
    rows, cols = np.flatnonzero(mask.any(axis=1)), np.flatnonzero(mask.any(axis=0))
    r0, r1 = max(rows[0] - pad, 0), min(rows[-1] + pad + 1, p.shape[0])
    c0, c1 = max(cols[0] - pad, 0), min(cols[-1] + pad + 1, p.shape[1])
    return p[r0:r1, c0:c1]


def _touches_frame(c: np.ndarray, shape) -> bool:
    H, W = shape[:2]
    return bool(c[:, 0].min() == 0 or c[:, 1].min() == 0 or c[:, 0].max() == W - 1 or c[:, 1].max() == H - 1)


def verify(x_avg, pattern, threshold: float = DEFAULT_THRESHOLD, edgesconvert: bool = False,
           min_area_ratio: float = 0.25, ignore_frame: bool = True, floor: float = HU_FLOOR,
           **preprocess_kw) -> VerificationReport:
    """Decide whether the watermark's contour shows up in ``x_avg``.

    Two filters keep noise from standing in for the mark: target contours
    enclosing less than ``min_area_ratio`` times the largest pattern contour
    area are skipped, and so are target contours touching the image border
    (a noise cluster spanning the frame traces the rectangular frame itself),
    unless a pattern contour touches its own border too.
    ``best_similarity`` is ``inf`` when nothing is comparable.
    """
    x_avg = np.asarray(x_avg, dtype=np.float64)
    pattern = np.asarray(pattern, dtype=np.float64)
    if pattern.shape[:2] != x_avg.shape[:2]:
        pattern = _crop_to_support(pattern)
    tb, stages = preprocess_traced(x_avg, edgesconvert, **preprocess_kw)
    pb, _ = preprocess_traced(pattern, edgesconvert, **preprocess_kw)
    targets, patterns = find_contours(tb), find_contours(pb)
    p_area = max((abs(_signed_area(c)) for c in patterns), default=0.0)
    min_area = min_area_ratio * p_area
    skip_frame = ignore_frame and not any(_touches_frame(c, pb.shape) for c in patterns)
    best = math.inf
    for tc in targets:
        if abs(_signed_area(tc)) < min_area:
            continue
        if skip_frame and _touches_frame(tc, tb.shape):
            continue
        for pc in patterns:
            s = contour_similarity(tc, pc, floor)
            if s is not None and s < best:
                best = s
    return VerificationReport(
        verdict=bool(best < threshold),
        best_similarity=best,
        threshold=float(threshold),
        contour_counts=(len(targets), len(patterns)),
        stages=stages,
        edgesconvert=bool(edgesconvert),
    )
