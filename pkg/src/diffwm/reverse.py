"""Reverse (sampling) process with the watermark-aware posterior."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Literal

import numpy as np

from diffwm.container import load_arrays, save_arrays
from diffwm.schedule import VarianceSchedule
from diffwm.watermark import WatermarkSpec

SigmaMode = Literal["gamma_squared", "vanilla"]
Denoiser = Callable[[np.ndarray, int], np.ndarray]


@dataclass
class TrajectoryBatch:
    """Output of :func:`sample`.

    ``snapshots`` maps a step index ``t`` to a copy of the batch state ``x_t``
    (``t = T`` is the initial noise, ``t = 0`` the raw chain output before any
    gamma correction).
    """

    finals: np.ndarray
    snapshots: dict[int, np.ndarray] = field(default_factory=dict)
    seed: int | None = None
    sigma_mode: SigmaMode = "gamma_squared"


def _check_t(schedule: VarianceSchedule, t: int) -> int:
    if not 1 <= t <= schedule.T:
        raise IndexError(f"step {t} outside [1, {schedule.T}]")
    return int(t)


def posterior_params(x_t_prime, eps_hat, t: int, schedule: VarianceSchedule,
                     gamma: float = 1.0, sigma_mode: SigmaMode = "gamma_squared"):
    """Mean and variance of ``q(x'_{t-1} | x'_t, x'_0)`` given a noise estimate.

    The mean has the vanilla DDPM form. The variance picks up a ``gamma**2``
    factor unless ``sigma_mode == "vanilla"``.
    """
    t = _check_t(schedule, t)
    x = np.asarray(x_t_prime, dtype=np.float64)
    e = np.asarray(eps_hat, dtype=np.float64)
    if x.shape != e.shape:
        raise ValueError(f"eps_hat shape {e.shape} != x_t shape {x.shape}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(e))):
        raise ValueError(f"non-finite input at step {t}")
    a = schedule.alpha[t]
    ab = schedule.alpha_bar[t]
    ab_prev = schedule.alpha_bar[t - 1]
    mu = (1 / np.sqrt(a)) * x - ((1 - a) / (np.sqrt(1 - ab) * np.sqrt(a))) * e
    var = (1 - a) * (1 - ab_prev) / (1 - ab)
    if sigma_mode == "gamma_squared":
        var = gamma**2 * var
    elif sigma_mode != "vanilla":
        raise ValueError(f"unknown sigma mode {sigma_mode!r}")
    return mu, float(var)


def reverse_step(x_t_prime, eps_hat, t: int, schedule: VarianceSchedule, gamma: float,
                 sigma_mode: SigmaMode, rng: np.random.Generator) -> np.ndarray:
    mu, var = posterior_params(x_t_prime, eps_hat, t, schedule, gamma, sigma_mode)
    if var == 0:
        return mu
    return mu + np.sqrt(var) * rng.standard_normal(mu.shape)


def sample(denoiser: Denoiser, schedule: VarianceSchedule, spec: WatermarkSpec,
           batch_size: int, snapshot_steps: Iterable[int] = (),
           sigma_mode: SigmaMode = "gamma_squared", rng=None,
           sample_shape: tuple[int, ...] | None = None, clamp: bool = True) -> TrajectoryBatch:
    """Run the reverse chain from ``x_T ~ N(0, I)`` down to ``t = 0``.

    In zero-f1 mode the chain converges to ``gamma * x0``, so the finals are
    divided by gamma (and clamped to [-1, 1] unless ``clamp`` is off).
    """
    seed = None
    if rng is None or isinstance(rng, (int, np.integer)):
        seed = None if rng is None else int(rng)
        rng = np.random.default_rng(seed)
    steps = {int(s) for s in snapshot_steps}
    bad = [s for s in steps if not 0 <= s <= schedule.T]
    if bad:
        raise ValueError(f"snapshot steps {bad} outside [0, {schedule.T}]")
    shape = (int(batch_size),) + tuple(sample_shape or spec.pattern.shape)
    x = rng.standard_normal(shape)
    snaps: dict[int, np.ndarray] = {}
    if schedule.T in steps:
        snaps[schedule.T] = x.copy()
    for t in range(schedule.T, 0, -1):
        eps_hat = np.asarray(denoiser(x, t))
        if eps_hat.shape != x.shape:
            raise ValueError(f"denoiser returned shape {eps_hat.shape} at step {t}, expected {x.shape}")
        x = reverse_step(x, eps_hat, t, schedule, spec.gamma, sigma_mode, rng)
        if t - 1 in steps:
            snaps[t - 1] = x.copy()
    finals = x
    if spec.f1_mode == "zero":
        finals = finals / spec.gamma
        if clamp:
            finals = np.clip(finals, -1.0, 1.0)
    return TrajectoryBatch(finals, snaps, seed, sigma_mode)


def average_snapshot(batch) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim == 0 or len(batch) == 0:
        raise ValueError("cannot average an empty batch")
    return batch.mean(axis=0)


def save_trajectory(batch: TrajectoryBatch, path):
    arrays = {"finals": batch.finals}
    arrays.update({f"snapshot_{t:06d}": v for t, v in batch.snapshots.items()})
    return save_arrays(path, arrays, {"seed": batch.seed, "sigma_mode": batch.sigma_mode})


def load_trajectory(path) -> TrajectoryBatch:
    arrays, meta = load_arrays(path)
    if "finals" not in arrays:
        raise ValueError(f"{path}: no 'finals' array, not a trajectory file")
    snaps = {int(k[len("snapshot_"):]): v for k, v in arrays.items() if k.startswith("snapshot_")}
    meta = meta or {}
    return TrajectoryBatch(arrays["finals"], snaps, meta.get("seed"), meta.get("sigma_mode", "gamma_squared"))
