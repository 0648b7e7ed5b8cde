"""Variance schedule and the coefficient families derived from it.

All per-step arrays are indexed directly by the step ``t`` and have length
``T + 1``. Index 0 holds the conventional values ``beta[0] = 0``,
``alpha[0] = 1`` and ``alpha_bar[0] = 1`` so that formulas evaluated at the
``t = 1`` boundary need no special casing.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

F1Mode = Literal["theorem", "zero"]


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class VarianceSchedule:
    """Immutable DDPM schedule plus the watermark scaling tables.

    Attributes:
        beta: variance increments, ``beta[1..T]`` in (0, 1); ``beta[0] = 0``.
        alpha: ``1 - beta``.
        alpha_bar: cumulative products, ``alpha_bar[0] = 1``.
        K: reciprocal of the peak of the unscaled ``f2`` curve.
        f2_table: ``f2(t)`` for ``t = 0..T``; rises from 0 and peaks at exactly 1.
    """

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    K: float
    f2_table: np.ndarray = field(repr=False)

    @property
    def T(self) -> int:
        return len(self.beta) - 1

    @classmethod
    def from_betas(cls, betas) -> "VarianceSchedule":
        """Build a schedule from ``beta[1..T]`` (a length-T sequence)."""
        betas = np.asarray(betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ValueError("betas must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(betas)):
            raise ValueError("betas must be finite")
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise ValueError("every beta must lie strictly inside (0, 1)")
        beta = np.concatenate([[0.0], betas])
        alpha = 1.0 - beta
        alpha_bar = np.empty_like(alpha)
        alpha_bar[0] = 1.0
        # sequential product so that alpha_bar[t] == alpha_bar[t-1] * alpha[t] exactly
        for t in range(1, len(alpha)):
            alpha_bar[t] = alpha_bar[t - 1] * alpha[t]
        partial = cls(_frozen(beta), _frozen(alpha), _frozen(alpha_bar), math.nan, _frozen([]))
        K = compute_K(partial)
        f2_table = _f2_incremental(partial.alpha, partial.alpha_bar, K)
        return cls(partial.beta, partial.alpha, partial.alpha_bar, K, _frozen(f2_table))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.beta, dtype="<f8").tobytes())
        h.update(repr(float(self.K)).encode())
        return h.hexdigest()

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "beta", "alpha", "alpha_bar", "f1_theorem", "f2"])
            for t in range(self.T + 1):
                w.writerow([
                    t,
                    repr(float(self.beta[t])),
                    repr(float(self.alpha[t])),
                    repr(float(self.alpha_bar[t])),
                    repr(compute_f1(self, t, "theorem")),
                    repr(float(self.f2_table[t])),
                ])
        return path


def default_beta_range(T: int) -> tuple[float, float]:
    """Linear ``1e-4 .. 0.02`` at ``T = 1000``, rescaled by ``1000 / T`` otherwise.

    The rescaling keeps ``alpha_bar[T]`` close to zero for short desk-scale
    chains (T=100 gives ``1e-3 .. 0.2``).
    """
    scale = 1000.0 / T
    return 1e-4 * scale, min(0.02 * scale, 0.999)


def make_linear_schedule(T: int = 1000, beta_start: float | None = None,
                         beta_end: float | None = None) -> VarianceSchedule:
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise ValueError(f"T must be a positive integer, got {T!r}")
    if beta_start is None or beta_end is None:
        d_start, d_end = default_beta_range(int(T))
        beta_start = d_start if beta_start is None else beta_start
        beta_end = d_end if beta_end is None else beta_end
    for name, v in (("beta_start", beta_start), ("beta_end", beta_end)):
        if not math.isfinite(v):
            raise ValueError(f"{name} must be finite, got {v!r}")
    if not 0 < beta_start <= beta_end < 1:
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    return VarianceSchedule.from_betas(np.linspace(beta_start, beta_end, int(T)))


def _peak_curve(alpha: np.ndarray, alpha_bar: np.ndarray) -> np.ndarray:
    """Unscaled f2 curve ``S(t)`` for ``t = 0..T`` (``S(0) = 0``)."""
    one_minus = 1.0 - alpha_bar[1:]
    if np.any(one_minus <= 0):
        raise ValueError("degenerate schedule: 1 - alpha_bar[t] == 0 for some t >= 1")
    terms = (1.0 - alpha[1:]) / (np.sqrt(alpha_bar[1:]) * np.sqrt(one_minus))
    return np.concatenate([[0.0], np.sqrt(alpha_bar[1:]) * np.cumsum(terms)])


def compute_K(schedule: VarianceSchedule) -> float:
    S = _peak_curve(schedule.alpha, schedule.alpha_bar)
    K = 1.0 / S[1:].max()
    if not (math.isfinite(K) and K > 0):
        raise ValueError(f"K is not a positive finite number: {K}")
    return float(K)


def _check_step(schedule: VarianceSchedule, t: int) -> int:
    if not 0 <= t <= schedule.T:
        raise IndexError(f"step {t} outside [0, {schedule.T}]")
    return int(t)


def compute_f1(schedule: VarianceSchedule, t: int, mode: F1Mode = "theorem") -> float:
    t = _check_step(schedule, t)
    if mode == "zero":
        return 0.0
    if mode == "theorem":
        return float(np.sqrt(schedule.alpha_bar[t]))
    raise ValueError(f"unknown f1 mode {mode!r}")


def h_coefficient(schedule: VarianceSchedule, t: int) -> float:
    """Per-step increment ``h(t) = K (1 - alpha_t) / sqrt(1 - alpha_bar_t)``."""
    t = _check_step(schedule, t)
    if t == 0:
        raise IndexError("h(t) is defined for t >= 1")
    return float((1.0 - schedule.alpha[t]) / np.sqrt(1.0 - schedule.alpha_bar[t]) * schedule.K)


def compute_f2(schedule: VarianceSchedule, t: int) -> float:
    """``f2(t)`` evaluated as a direct sum over ``i = 1..t`` (not the cached table)."""
    t = _check_step(schedule, t)
    if t == 0:
        return 0.0
    ab = schedule.alpha_bar
    i = np.arange(1, t + 1)
    if np.any(1.0 - ab[i] <= 0):
        raise ValueError("degenerate schedule: 1 - alpha_bar[t] == 0 for some t >= 1")
    h = (1.0 - schedule.alpha[i]) / np.sqrt(1.0 - ab[i]) * schedule.K
    return float(np.sqrt(ab[t]) * np.sum(h / np.sqrt(ab[i])))


def _f2_incremental(alpha: np.ndarray, alpha_bar: np.ndarray, K: float) -> np.ndarray:
    # f2(t) = sqrt(alpha_t) f2(t-1) + h(t)
    out = np.zeros_like(alpha)
    for t in range(1, len(alpha)):
        h = (1.0 - alpha[t]) / math.sqrt(1.0 - alpha_bar[t]) * K
        out[t] = math.sqrt(alpha[t]) * out[t - 1] + h
    return out
