import numpy as np
import pytest

from diffwm.forward import build_training_pair, static_pattern
from diffwm.oracles import (
    MemorizationDenoiser,
    check_normalization,
    check_reduction,
    check_terminal_gaussianity,
    run_all,
)
from diffwm.schedule import make_linear_schedule
from diffwm.watermark import WatermarkSpec, make_pattern


def test_normalization_check():
    r = check_normalization()
    assert r["passed"] and r["f2_0"] == 0.0 and abs(r["f2_max"] - 1) < 1e-9


def test_reduction_check():
    r = check_reduction(T=30, size=8, batch=4)
    assert r["passed"] and r["pairs_equal"]


def test_terminal_gaussianity_check():
    r = check_terminal_gaussianity()
    assert r["passed"], r
    assert r["t_A"] == 500


def test_quick_suite_passes():
    suite = run_all(quick=True)
    assert suite["passed"]
    assert set(suite) == {"normalization", "reduction", "closed_vs_recursive", "posterior",
                          "terminal_gaussianity", "passed"}


@pytest.mark.parametrize("mode", ["zero", "theorem"])
def test_memorization_denoiser_recovers_embedding_target(mode):
    sch = make_linear_schedule(40)
    pattern = make_pattern("square", "bottom_right", 3, (8, 8, 1))
    spec = WatermarkSpec(pattern, gamma=0.7, t_A=20, f1_mode=mode, scale_mode="static", static_scale=2.5)
    x0 = np.where(np.random.default_rng(0).random((8, 8, 1)) > 0.5, 1.0, -1.0)
    den = MemorizationDenoiser(x0, static_pattern(spec), spec, sch)
    rng = np.random.default_rng(1)
    for t in (1, 7, 20):
        pair = build_training_pair(np.repeat(x0[None], 6, 0), t, spec, sch, rng)
        np.testing.assert_allclose(den(pair.x_t_prime, t), pair.target, atol=1e-9)


def test_memorization_denoiser_simulation_stage_is_unbiased():
    sch = make_linear_schedule(40)
    spec = WatermarkSpec(np.zeros((1, 1, 1)), gamma=0.7, t_A=20, scale_mode="static")
    x0 = np.full((1, 1, 1), 0.5)
    den = MemorizationDenoiser(x0, np.zeros((1, 1, 1)), spec, sch)
    pair = build_training_pair(np.repeat(x0[None], 200_000, 0), 35, spec, sch, np.random.default_rng(2))
    resid = (pair.target - den(pair.x_t_prime, 35)).ravel()
    x = pair.x_t_prime.ravel()
    # conditional mean is exact: residual has zero mean and is orthogonal to x
    se = resid.std() / np.sqrt(len(resid))
    assert abs(resid.mean()) < 4 * se
    assert abs(np.mean(resid * (x - x.mean()))) < 4 * np.std(resid * x) / np.sqrt(len(x))
