"""Analytic and Monte-Carlo checks of the process math, independent of any trained network.

Each ``check_*`` function returns a plain dict with a boolean ``passed`` and
the numbers it compared, so the suite can be dumped to JSON as-is.
"""

from __future__ import annotations

import math
import time

import numpy as np

from diffwm.forward import (
    build_training_pair,
    diffuse_embedding,
    initial_state,
    recursive_step,
    static_pattern,
)
from diffwm.reverse import posterior_params, sample
from diffwm.schedule import VarianceSchedule, make_linear_schedule
from diffwm.watermark import WatermarkSpec

T4_BETAS = (0.1, 0.2, 0.3, 0.4)


def _scalar_spec(gamma, t_A, f1_mode, mark=1.0, scale_mode="static"):
    return WatermarkSpec(np.full((1, 1, 1), mark), gamma=gamma, t_A=t_A, f1_mode=f1_mode,
                         shape=None, position=None, scale_mode=scale_mode)


# --- reference vanilla DDPM, written out independently of the watermark code ---

def vanilla_pair(x0, t, schedule: VarianceSchedule, rng):
    eps = rng.standard_normal(np.shape(x0))
    ab = schedule.alpha_bar[t].reshape((-1,) + (1,) * (np.ndim(x0) - 1))
    return np.sqrt(ab) * x0 + np.sqrt(1 - ab) * eps, eps


def vanilla_sampler(denoiser, schedule: VarianceSchedule, shape, rng):
    x = rng.standard_normal(shape)
    for t in range(schedule.T, 0, -1):
        e = denoiser(x, t)
        a, ab, ab_prev = schedule.alpha[t], schedule.alpha_bar[t], schedule.alpha_bar[t - 1]
        mu = (1 / np.sqrt(a)) * x - ((1 - a) / (np.sqrt(1 - ab) * np.sqrt(a))) * e
        var = (1 - a) * (1 - ab_prev) / (1 - ab)
        x = mu if var == 0 else mu + np.sqrt(var) * rng.standard_normal(shape)
    return x


def check_reduction(T: int = 100, size: int = 16, batch: int = 8, seed: int = 0) -> dict:
    """gamma=1 and a zero mark must reproduce vanilla DDPM bit for bit."""
    start = time.perf_counter()
    sch = make_linear_schedule(T)
    spec = WatermarkSpec(np.zeros((size, size, 1)), gamma=1.0, t_A=T, f1_mode="theorem")
    data_rng = np.random.default_rng(seed)
    x0 = np.clip(data_rng.normal(size=(batch, size, size, 1)), -1, 1)
    t = data_rng.integers(1, T + 1, batch)
    pair = build_training_pair(x0, t, spec, sch, np.random.default_rng(seed + 1))
    ref_x, ref_eps = vanilla_pair(x0, t, sch, np.random.default_rng(seed + 1))
    pairs_equal = bool(np.array_equal(pair.x_t_prime, ref_x) and np.array_equal(pair.target, ref_eps))

    w = data_rng.normal(size=(size, size, 1)) * 0.1

    def denoiser(x, step):
        return np.tanh(x * w + step / T)

    ours = sample(denoiser, sch, spec, batch, sigma_mode="vanilla", rng=np.random.default_rng(seed + 2))
    ref = vanilla_sampler(denoiser, sch, (batch, size, size, 1), np.random.default_rng(seed + 2))
    sampler_equal = bool(np.array_equal(ours.finals, ref))
    elapsed = time.perf_counter() - start
    return {"passed": pairs_equal and sampler_equal and elapsed < 60, "pairs_equal": pairs_equal,
            "sampler_equal": sampler_equal, "seconds": elapsed}


def _moments_agree(a: np.ndarray, b: np.ndarray, n_se: float = 3.0) -> dict:
    n, m = len(a), len(b)
    ma, mb, va, vb = a.mean(), b.mean(), a.var(ddof=1), b.var(ddof=1)
    se_mean = math.sqrt(va / n + vb / m)
    se_var = math.sqrt(2 * va**2 / (n - 1) + 2 * vb**2 / (m - 1))
    return {"mean": [ma, mb], "var": [va, vb], "mean_z": abs(ma - mb) / se_mean,
            "var_z": abs(va - vb) / se_var,
            "passed": bool(abs(ma - mb) <= n_se * se_mean and abs(va - vb) <= n_se * se_var)}


def check_closed_vs_recursive(T: int = 10, n: int = 100_000, gamma: float = 0.8,
                              steps=(5, 10), seed: int = 0) -> dict:
    """Closed-form ``x'_t`` against step-by-step composition with fresh noise per step."""
    sch = make_linear_schedule(T, 0.05, 0.3)
    rng = np.random.default_rng(seed)
    x0 = np.full((n, 1, 1, 1), 0.5)
    results = {}
    for mode in ("theorem", "zero"):
        spec = _scalar_spec(gamma, T, mode)
        xs = static_pattern(spec)
        x = initial_state(x0, spec)
        for t in range(1, max(steps) + 1):
            x = recursive_step(x, t, rng.standard_normal(x0.shape), spec, sch, x0, xs)
            if t in steps:
                closed = diffuse_embedding(x0, t, rng.standard_normal(x0.shape), spec, sch, xs).x_t_prime
                results[f"{mode}_t{t}"] = _moments_agree(x.ravel(), closed.ravel())
    return {"passed": all(r["passed"] for r in results.values()), "comparisons": results}


def _binned_regression(x: np.ndarray, y: np.ndarray, n_bins: int):
    """Local linear fit of ``y`` on ``x`` per quantile bin, evaluated at the bin median.

    Returns ``(x_eval, y_hat, se)`` arrays, one entry per bin.
    """
    edges = np.quantile(x, np.linspace(0, 1, n_bins + 1))
    which = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, n_bins - 1)
    xe, yh, se = [], [], []
    for k in range(n_bins):
        xs, ys = x[which == k], y[which == k]
        x_mid = float(np.median(xs))
        design = np.stack([np.ones_like(xs), xs - x_mid], axis=1)
        coef, *_ = np.linalg.lstsq(design, ys, rcond=None)
        resid = ys - design @ coef
        s2 = resid @ resid / (len(xs) - 2)
        cov = s2 * np.linalg.inv(design.T @ design)
        xe.append(x_mid)
        yh.append(coef[0])
        se.append(math.sqrt(cov[0, 0]))
    return np.array(xe), np.array(yh), np.array(se)


def check_posterior(n: int = 1_000_000, gamma: float = 0.8, n_bins: int = 8,
                    seed: int = 0, mode: str = "theorem") -> dict:
    """Monte-Carlo conditioning on the four-step schedule.

    Joint draws of ``(x'_{t-1}, x'_t)`` come from the one-step recursion at a
    fixed ``x'_0``. In each quantile bin of ``x'_t`` a local linear regression
    estimates ``E[x'_{t-1} | x'_t]`` at the bin median, which must match the
    analytic posterior mean within 3 standard errors. The residual variance
    must match the ``gamma**2``-scaled posterior variance within 5%. Two
    negative controls must fail: the unscaled variance, and a mean whose noise
    coefficient is multiplied by ``gamma``.
    """
    sch = VarianceSchedule.from_betas(T4_BETAS)
    spec = _scalar_spec(gamma, sch.T, mode)
    xs = static_pattern(spec)
    rng = np.random.default_rng(seed)
    x0v = 0.3
    x0 = np.full((n, 1, 1, 1), x0v)
    x0p = initial_state(x0, spec).ravel()[0]
    f1 = np.sqrt(sch.alpha_bar) if mode == "theorem" else np.zeros(sch.T + 1)
    b = f1 * x0v + sch.f2_table * xs.ravel()[0]

    def eps2_of(x, t):
        ab = sch.alpha_bar[t]
        agg = (x - np.sqrt(ab) * x0p - (1 - gamma) * (b[t] - np.sqrt(ab) * b[0])) / (gamma * np.sqrt(1 - ab))
        return gamma * agg + (1 - gamma) * sch.K * xs.ravel()[0]

    prev = initial_state(x0, spec)
    out = {}
    for t in range(1, sch.T + 1):
        cur = recursive_step(prev, t, rng.standard_normal(x0.shape), spec, sch, x0, xs)
        xc, xp = cur.ravel(), prev.ravel()
        mu, var = posterior_params(xc, eps2_of(xc, t), t, sch, gamma, "gamma_squared")
        _, var_vanilla = posterior_params(xc, eps2_of(xc, t), t, sch, gamma, "vanilla")
        emp_var = float((xp - mu).var(ddof=1))
        if var == 0:
            # x'_0 is fixed, so the last step is deterministic
            ok = bool(np.max(np.abs(xp - mu)) < 1e-9)
            out[f"t{t}"] = {"max_abs_error": float(np.max(np.abs(xp - mu))), "passed": ok}
        else:
            xe, yh, se = _binned_regression(xc, xp, n_bins)
            mu_e, _ = posterior_params(xe, eps2_of(xe, t), t, sch, gamma)
            a, ab = sch.alpha[t], sch.alpha_bar[t]
            wrong = (xe - gamma * (1 - a) / np.sqrt(1 - ab) * eps2_of(xe, t)) / np.sqrt(a)
            z = np.abs(yh - mu_e) / se
            z_wrong = np.abs(yh - wrong) / se
            var_ok = abs(emp_var / var - 1) < 0.05
            vanilla_rejected = abs(emp_var / var_vanilla - 1) >= 0.05
            out[f"t{t}"] = {"worst_bin_z": float(z.max()), "gamma_in_mean_worst_z": float(z_wrong.max()),
                            "empirical_var": emp_var, "sigma_sq": float(var),
                            "sigma_sq_vanilla": float(var_vanilla),
                            "passed": bool(z.max() <= 3.0 and var_ok and vanilla_rejected
                                           and z_wrong.max() > 3.0)}
        prev = cur
    return {"passed": all(v["passed"] for v in out.values()), "steps": out}


def check_normalization(T: int = 1000) -> dict:
    sch = make_linear_schedule(T)
    f2 = sch.f2_table
    one = VarianceSchedule.from_betas([0.1])
    k1_err = abs(one.K - 1 / math.sqrt(0.1))
    ok = f2[0] == 0 and abs(f2.max() - 1) <= 1e-9 and k1_err <= 1e-12
    return {"passed": bool(ok), "f2_0": float(f2[0]), "f2_max": float(f2.max()),
            "argmax": int(np.argmax(f2)), "K": sch.K, "K_T1_error": k1_err}


def check_terminal_gaussianity(T: int = 1000, n: int = 100_000, gamma: float = 0.8,
                               t_A_fraction: float = 0.5, chunk: int = 256, seed: int = 0) -> dict:
    """Moments of ``x'_T`` for scalar trajectories through a watermarked pixel.

    Data values are uniform on [-1, 1]; the watermark pixel has value 1 and is
    rescaled per chunk of ``chunk`` trajectories (one training batch).
    """
    sch = make_linear_schedule(T)
    spec = _scalar_spec(gamma, round(t_A_fraction * T), "zero", scale_mode="batch")
    rng = np.random.default_rng(seed)
    xs = []
    for start in range(0, n, chunk):
        m = min(chunk, n - start)
        x0 = rng.uniform(-1, 1, (m, 1, 1, 1))
        xs.append(build_training_pair(x0, T, spec, sch, rng).x_t_prime.ravel())
    x = np.concatenate(xs)
    mean, var = float(x.mean()), float(x.var(ddof=1))
    return {"passed": bool(abs(mean) < 0.02 and abs(var - 1) < 0.03), "mean": mean, "var": var,
            "t_A": spec.t_A}


class MemorizationDenoiser:
    """Bayes-optimal noise predictor when the corpus is the single image ``x0``.

    The mark amplitude is frozen at ``scaled_pattern`` (no per-batch
    rescaling), so every ``x'_t`` is Gaussian with a known mean and the
    optimal prediction of the training target is available in closed form.
    """

    def __init__(self, x0, scaled_pattern, spec: WatermarkSpec, schedule: VarianceSchedule):
        self.x0 = np.asarray(x0, dtype=np.float64)
        self.xs = np.broadcast_to(np.asarray(scaled_pattern, dtype=np.float64), self.x0.shape)
        self.spec, self.schedule = spec, schedule
        g, ab = spec.gamma, schedule.alpha_bar
        f1 = np.sqrt(ab) if spec.f1_mode == "theorem" else np.zeros_like(ab)
        b0 = f1[0] * self.x0
        x0p = g * self.x0 + (1 - g) * b0
        self._mean = lambda t: (np.sqrt(ab[t]) * x0p
                                + (1 - g) * (f1[t] * self.x0 + schedule.f2_table[t] * self.xs - np.sqrt(ab[t]) * b0))
        self.mean_tA = self._mean(spec.t_A)
        self.var_tA = g**2 * (1 - ab[spec.t_A])

    def __call__(self, x, t):
        g, ab, t_A = self.spec.gamma, self.schedule.alpha_bar, self.spec.t_A
        if t <= t_A:
            return (x - self._mean(t)) / np.sqrt(1 - ab[t]) + (1 - g) * self.schedule.K * self.xs
        r = ab[t] / ab[t_A]
        return np.sqrt(1 - r) * (x - np.sqrt(r) * self.mean_tA) / (r * self.var_tA + 1 - r)


def run_all(quick: bool = False) -> dict:
    scale = 10 if quick else 1
    suite = {
        "normalization": check_normalization(),
        "reduction": check_reduction(),
        "closed_vs_recursive": check_closed_vs_recursive(n=100_000 // scale),
        "posterior": check_posterior(n=1_000_000 // scale),
        "terminal_gaussianity": check_terminal_gaussianity(n=100_000 // scale),
    }
    suite["passed"] = all(v["passed"] for v in suite.values())
    return suite
