"""Watermarked forward process and the regression targets for training.

Steps ``t <= t_A`` belong to the embedding stage, where the noised sequence
drifts toward the watermark. Steps ``t > t_A`` belong to the simulation stage,
which re-noises ``x'_{t_A}`` exactly like vanilla diffusion so ``x'_T`` is
standard normal again.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from diffwm.schedule import VarianceSchedule, compute_f1
from diffwm.watermark import WatermarkSpec, compute_bt, scale_pattern_dynamic


@dataclass
class TrainingPair:
    """Network input ``x_t_prime`` at step ``t`` and its regression target.

    ``t`` and ``stage`` have one entry per batch element. ``eps_prime`` is the
    noise actually injected at step ``t`` (kept for oracle tests).
    """

    x_t_prime: np.ndarray
    t: np.ndarray
    target: np.ndarray
    stage: np.ndarray
    eps_prime: np.ndarray


def _steps(t, schedule: VarianceSchedule, lo: int = 0) -> np.ndarray:
    t = np.asarray(t)
    if not np.issubdtype(t.dtype, np.integer):
        raise TypeError(f"steps must be integers, got {t.dtype}")
    if np.any(t < lo) or np.any(t > schedule.T):
        raise IndexError(f"step(s) {t} outside [{lo}, {schedule.T}]")
    return t


def _coef(values: np.ndarray, t: np.ndarray, ndim: int):
    """Per-step coefficient shaped to broadcast against a batch of rank ``ndim``."""
    v = values[t]
    if np.ndim(v) == 0:
        return float(v)
    return v.reshape(v.shape + (1,) * (ndim - v.ndim))


def _check_same(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def diffuse_vanilla(x0, t, eps, schedule: VarianceSchedule) -> np.ndarray:
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    _check_same(x0, eps, "diffuse_vanilla")
    t = _steps(t, schedule)
    ab = _coef(schedule.alpha_bar, t, x0.ndim)
    return np.sqrt(ab) * x0 + np.sqrt(1 - ab) * eps


def _f1_table(schedule: VarianceSchedule, mode: str) -> np.ndarray:
    if mode == "zero":
        return np.zeros(schedule.T + 1)
    return np.sqrt(schedule.alpha_bar)


def static_pattern(spec: WatermarkSpec) -> np.ndarray:
    return spec.pattern * spec.static_scale


def scaled_pattern_for(spec: WatermarkSpec, reference: np.ndarray) -> np.ndarray:
    """The watermark at the amplitude used for one training batch."""
    if spec.is_zero:
        return np.zeros_like(spec.pattern)
    if spec.scale_mode == "static":
        return static_pattern(spec)
    return scale_pattern_dynamic(spec.pattern, reference, per_sample=spec.scale_mode == "sample")


def diffuse_embedding(x0, t, eps_prime, spec: WatermarkSpec, schedule: VarianceSchedule,
                      scaled_pattern: np.ndarray | None = None) -> TrainingPair:
    """Closed-form ``x'_t`` and target for the embedding stage.

    ``x'_t = sqrt(ab_t) x'_0 + gamma sqrt(1 - ab_t) eps' + (1 - gamma)(b_t - sqrt(ab_t) b_0)``
    with ``x'_0 = gamma x0 + (1 - gamma) b_0``. In theorem mode ``b_0 = x0``
    and ``x'_0 = x0``; in zero mode ``b_0 = 0`` and the chain ends at
    ``gamma x0``.

    When ``scaled_pattern`` is omitted it is derived from the vanilla noised
    batch at the same steps, per ``spec.scale_mode``.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    eps_prime = np.asarray(eps_prime, dtype=np.float64)
    _check_same(x0, eps_prime, "diffuse_embedding")
    t = _steps(t, schedule)
    spec.check_schedule(schedule.T)
    if np.any(t > spec.t_A):
        raise ValueError(f"embedding stage covers t <= t_A={spec.t_A}, got {t}")
    if scaled_pattern is None:
        scaled_pattern = scaled_pattern_for(spec, diffuse_vanilla(x0, t, eps_prime, schedule))
    g = spec.gamma
    nd = x0.ndim
    f1 = _f1_table(schedule, spec.f1_mode)
    ab = _coef(schedule.alpha_bar, t, nd)
    b_t = compute_bt(x0, scaled_pattern, _coef(f1, t, nd), _coef(schedule.f2_table, t, nd))
    b_0 = compute_bt(x0, scaled_pattern, f1[0], schedule.f2_table[0])
    x0_prime = g * x0 + (1 - g) * b_0
    sab = np.sqrt(ab)
    x_t = sab * x0_prime + (g * np.sqrt(1 - ab)) * eps_prime + (1 - g) * (b_t - sab * b_0)
    target = g * eps_prime + (1 - g) * schedule.K * scaled_pattern
    target = np.broadcast_to(target, x0.shape).copy()
    tt = np.broadcast_to(t, x0.shape[:1]).copy()
    return TrainingPair(x_t, tt, target, np.full(tt.shape, "embedding"), eps_prime)


def diffuse_simulation(x_tA_prime, t, eps_prime, spec: WatermarkSpec,
                       schedule: VarianceSchedule) -> TrainingPair:
    x_tA_prime = np.asarray(x_tA_prime, dtype=np.float64)
    eps_prime = np.asarray(eps_prime, dtype=np.float64)
    _check_same(x_tA_prime, eps_prime, "diffuse_simulation")
    t = _steps(t, schedule)
    spec.check_schedule(schedule.T)
    if np.any(t <= spec.t_A):
        raise ValueError(f"simulation stage covers t > t_A={spec.t_A}, got {t}")
    x_t = _simulate(x_tA_prime, t, eps_prime, spec.t_A, schedule)
    tt = np.broadcast_to(t, x_t.shape[:1]).copy()
    return TrainingPair(x_t, tt, eps_prime.copy(), np.full(tt.shape, "simulation"), eps_prime)


def _simulate(x_tA_prime, t, eps, t_A, schedule):
    ratio = _coef(schedule.alpha_bar, t, x_tA_prime.ndim) / schedule.alpha_bar[t_A]
    return np.sqrt(ratio) * x_tA_prime + np.sqrt(1 - ratio) * eps


def build_training_pair(x0, t, spec: WatermarkSpec, schedule: VarianceSchedule,
                        rng: np.random.Generator, eps_prime=None, eps_tA=None) -> TrainingPair:
    """One training pair per batch element (first axis of ``x0``).

    ``t`` is a scalar or one step per element. Noise is drawn from ``rng`` in
    a fixed order: ``eps_prime`` first, then (only if some element is in the
    simulation stage) the noise that builds ``x'_{t_A}``. Either may be
    supplied explicitly instead.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    t = _steps(np.broadcast_to(np.asarray(t), x0.shape[:1]), schedule, lo=1)
    spec.check_schedule(schedule.T)
    if eps_prime is None:
        eps_prime = rng.standard_normal(x0.shape)
    eps_prime = np.asarray(eps_prime, dtype=np.float64)
    reference = diffuse_vanilla(x0, t, eps_prime, schedule)
    xs = scaled_pattern_for(spec, reference)
    embed = t <= spec.t_A
    if embed.all():
        return diffuse_embedding(x0, t, eps_prime, spec, schedule, xs)

    if eps_tA is None:
        eps_tA = rng.standard_normal(x0.shape)
    t_e = np.where(embed, t, spec.t_A)
    at_tA = diffuse_embedding(x0, np.full_like(t, spec.t_A), eps_tA, spec, schedule, xs)
    t_s = np.where(embed, spec.t_A + 1, t)
    sim = diffuse_simulation(at_tA.x_t_prime, t_s, eps_prime, spec, schedule)
    mask = embed.reshape(embed.shape + (1,) * (x0.ndim - 1))
    if embed.any():
        emb = diffuse_embedding(x0, t_e, eps_prime, spec, schedule, xs)
        x_t = np.where(mask, emb.x_t_prime, sim.x_t_prime)
        target = np.where(mask, emb.target, sim.target)
    else:
        x_t, target = sim.x_t_prime, sim.target
    stage = np.where(embed, "embedding", "simulation")
    return TrainingPair(x_t, t.copy(), target, stage, eps_prime)


def recursive_step(x_prev_prime, t, eps, spec: WatermarkSpec, schedule: VarianceSchedule,
                   x0, scaled_pattern: np.ndarray | None = None) -> np.ndarray:
    """One-step form ``x'_t = sqrt(a_t) x'_{t-1} + gamma sqrt(1-a_t) eps + (1-gamma)(b_t - sqrt(a_t) b_{t-1})``."""
    x_prev_prime = np.asarray(x_prev_prime, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    _check_same(x_prev_prime, eps, "recursive_step")
    _check_same(x_prev_prime, x0, "recursive_step")
    t = _steps(t, schedule, lo=1)
    if scaled_pattern is None:
        scaled_pattern = static_pattern(spec)
    g = spec.gamma
    nd = x0.ndim
    f1 = _f1_table(schedule, spec.f1_mode)
    a = _coef(schedule.alpha, t, nd)
    b_t = compute_bt(x0, scaled_pattern, _coef(f1, t, nd), _coef(schedule.f2_table, t, nd))
    b_prev = compute_bt(x0, scaled_pattern, _coef(f1, t - 1, nd), _coef(schedule.f2_table, t - 1, nd))
    sa = np.sqrt(a)
    return sa * x_prev_prime + (g * np.sqrt(1 - a)) * eps + (1 - g) * (b_t - sa * b_prev)


def initial_state(x0, spec: WatermarkSpec, scaled_pattern: np.ndarray | None = None) -> np.ndarray:
    """``x'_0 = gamma x0 + (1 - gamma) b_0``: ``x0`` in theorem mode, ``gamma x0`` in zero mode."""
    x0 = np.asarray(x0, dtype=np.float64)
    if scaled_pattern is None:
        scaled_pattern = static_pattern(spec)
    f1_0 = 1.0 if spec.f1_mode == "theorem" else 0.0
    b_0 = compute_bt(x0, scaled_pattern, f1_0, 0.0)
    return spec.gamma * x0 + (1 - spec.gamma) * b_0
