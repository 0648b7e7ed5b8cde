"""Sample-quality metrics computed from precomputed features or class probabilities.

Feature extraction is out of scope: callers pass arrays produced by whatever
network they trust (pooled features for FID, spatial ones for sFID).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist


@dataclass
class FeatureSet:
    features: np.ndarray
    source: str = "real"
    extractor_id: str = "unknown"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError(f"features must be N x D, got shape {self.features.shape}")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite rows")
        if self.source not in ("real", "generated"):
            raise ValueError(f"source must be 'real' or 'generated', got {self.source!r}")

    @classmethod
    def load(cls, path, source: str = "real") -> "FeatureSet":
        with np.load(Path(path), allow_pickle=False) as z:
            feats = z["features"]
            extractor = str(z["extractor_id"]) if "extractor_id" in z.files else "unknown"
        return cls(feats, source, extractor)

    def save(self, path) -> None:
        np.savez(path, features=self.features.astype(np.float32), extractor_id=np.array(self.extractor_id))


def load_probs(path) -> np.ndarray:
    with np.load(Path(path), allow_pickle=False) as z:
        return np.asarray(z["probs"], dtype=np.float64)


def _sqrt_psd(a: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(a)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def frechet_distance(mu1, cov1, mu2, cov2, atol: float = 1e-8) -> float:
    """``|mu1 - mu2|^2 + tr(cov1 + cov2 - 2 (cov1 cov2)^(1/2))``.

    The trace of the product's square root is taken as
    ``tr((s1 cov2 s1)^(1/2))`` with ``s1 = cov1^(1/2)``. That matrix is
    symmetric, so an eigendecomposition with negative eigenvalues clipped to
    zero is enough.
    """
    mu1, mu2 = np.atleast_1d(np.asarray(mu1, float)), np.atleast_1d(np.asarray(mu2, float))
    cov1, cov2 = np.atleast_2d(np.asarray(cov1, float)), np.atleast_2d(np.asarray(cov2, float))
    for name, c in (("cov1", cov1), ("cov2", cov2)):
        if c.shape != (len(mu1), len(mu1)):
            raise ValueError(f"{name} has shape {c.shape}, expected {(len(mu1), len(mu1))}")
        if np.max(np.abs(c - c.T)) > atol:
            raise ValueError(f"{name} is not symmetric")
    if mu1.shape != mu2.shape:
        raise ValueError(f"mean shapes differ: {mu1.shape} vs {mu2.shape}")
    s1 = _sqrt_psd((cov1 + cov1.T) / 2)
    inner = s1 @ ((cov2 + cov2.T) / 2) @ s1
    w = np.linalg.eigvalsh((inner + inner.T) / 2)
    tr_sqrt = np.sqrt(np.clip(w, 0, None)).sum()
    diff = mu1 - mu2
    return float(diff @ diff + np.trace(cov1) + np.trace(cov2) - 2 * tr_sqrt)


def _as_features(x) -> np.ndarray:
    return x.features if isinstance(x, FeatureSet) else np.asarray(x, dtype=np.float64)


def fid_from_features(real, gen) -> float:
    a, b = _as_features(real), _as_features(gen)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"feature dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    for f in (a, b):
        if len(f) <= f.shape[1]:
            warnings.warn(f"{len(f)} samples for {f.shape[1]}-D features: covariance is rank deficient",
                          RuntimeWarning, stacklevel=2)
    return frechet_distance(a.mean(0), np.cov(a, rowvar=False, ddof=1),
                            b.mean(0), np.cov(b, rowvar=False, ddof=1))


def sfid_from_features(real, gen) -> float:
    """Same kernel as FID; only the extractor differs (spatial features)."""
    for f in (real, gen):
        if isinstance(f, FeatureSet) and "spatial" not in f.extractor_id.lower():
            warnings.warn(f"extractor {f.extractor_id!r} does not look spatial", RuntimeWarning, stacklevel=2)
    return fid_from_features(real, gen)


def inception_score_from_probs(probs, splits: int = 1, atol: float = 1e-6) -> tuple[float, float]:
    """Mean and standard deviation over splits of ``exp(E[KL(p(y|x) || p(y))])``."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2 or len(p) == 0:
        raise ValueError(f"probs must be a non-empty N x C array, got {p.shape}")
    if np.any(p < 0) or np.any(np.abs(p.sum(1) - 1) > atol):
        raise ValueError("every row must be a probability vector")
    if not 1 <= splits <= len(p):
        raise ValueError(f"splits must lie in [1, {len(p)}]")
    scores = []
    for part in np.array_split(p, splits):
        marginal = part.mean(0)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(part > 0, part * (np.log(part) - np.log(marginal)), 0.0)
        scores.append(np.exp(terms.sum(1).mean()))
    return float(np.mean(scores)), float(np.std(scores))


def _knn_radii(x: np.ndarray, k: int, chunk: int) -> np.ndarray:
    radii = np.empty(len(x))
    for i in range(0, len(x), chunk):
        d = cdist(x[i:i + chunk], x)
        # column k of the sorted row skips the zero self-distance
        radii[i:i + chunk] = np.partition(d, k, axis=1)[:, k]
    return radii


def _coverage(query: np.ndarray, ref: np.ndarray, radii: np.ndarray, chunk: int) -> float:
    inside = np.zeros(len(query), dtype=bool)
    for i in range(0, len(query), chunk):
        d = cdist(query[i:i + chunk], ref)
        inside[i:i + chunk] = np.any(d <= radii[None, :], axis=1)
    return float(inside.mean())


def precision_recall_knn(real, gen, k: int = 3, chunk: int = 1024) -> tuple[float, float]:
    """k-NN manifold precision and recall.

    Each set's manifold is the union of balls around its points, each with
    the radius of that point's k-th nearest neighbour in the same set.
    Precision is the fraction of generated points inside the real manifold,
    recall the fraction of real points inside the generated one.
    """
    a, b = _as_features(real), _as_features(gen)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("both feature sets must be non-empty")
    if k < 1 or k >= len(a) or k >= len(b):
        raise ValueError(f"k={k} must satisfy 1 <= k < N for both sets ({len(a)}, {len(b)})")
    ra, rb = _knn_radii(a, k, chunk), _knn_radii(b, k, chunk)
    return _coverage(b, a, ra, chunk), _coverage(a, b, rb, chunk)
