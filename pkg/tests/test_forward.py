import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from diffwm.forward import (
    _simulate,
    build_training_pair,
    diffuse_embedding,
    diffuse_simulation,
    diffuse_vanilla,
    initial_state,
    recursive_step,
    static_pattern,
)
from diffwm.oracles import check_closed_vs_recursive, vanilla_pair
from diffwm.schedule import VarianceSchedule, make_linear_schedule
from diffwm.watermark import WatermarkSpec

# 50-digit hand evaluation of the closed forms on the four-step schedule
VANILLA_T4_T2 = 0.95341433092484663274
EMBED_THEOREM_T4_T2 = 0.65808995726232971289
EMBED_TARGET_T4 = 0.40166565371270824137
EMBED_ZERO_T4_T2 = 0.57323714351994400996
SQRT_RATIO_T1000 = 0.022661590803407577604

T4 = VarianceSchedule.from_betas([0.1, 0.2, 0.3, 0.4])


def scalar_spec(gamma=0.8, t_A=4, mode="theorem", mark=1.0):
    return WatermarkSpec(np.full((1, 1, 1), mark), gamma=gamma, t_A=t_A, f1_mode=mode,
                         shape=None, position=None, scale_mode="static")


def one(v):
    return np.full((1, 1, 1, 1), v)


def test_vanilla_examples():
    x0 = np.linspace(-1, 1, 6).reshape(2, 3)
    np.testing.assert_array_equal(diffuse_vanilla(x0, 0, np.ones_like(x0), T4), x0)
    np.testing.assert_allclose(diffuse_vanilla(x0, 3, np.zeros_like(x0), T4), np.sqrt(T4.alpha_bar[3]) * x0)
    assert diffuse_vanilla(0.5, 2, 1.0, T4) == pytest.approx(VANILLA_T4_T2, rel=1e-14)
    with pytest.raises(ValueError):
        diffuse_vanilla(np.zeros(3), 1, np.zeros(2), T4)
    with pytest.raises(IndexError):
        diffuse_vanilla(0.5, 5, 1.0, T4)


def test_embedding_scalar_oracle():
    pair = diffuse_embedding(one(0.5), 2, one(0.3), scalar_spec(), T4)
    assert pair.x_t_prime.item() == pytest.approx(EMBED_THEOREM_T4_T2, rel=1e-14)
    assert pair.target.item() == pytest.approx(EMBED_TARGET_T4, rel=1e-14)
    assert pair.stage.tolist() == ["embedding"]
    zero = diffuse_embedding(one(0.5), 2, one(0.3), scalar_spec(mode="zero"), T4)
    assert zero.x_t_prime.item() == pytest.approx(EMBED_ZERO_T4_T2, rel=1e-14)


def test_embedding_gamma_one_is_vanilla():
    rng = np.random.default_rng(0)
    x0, eps = rng.uniform(-1, 1, (4, 5, 5, 1)), rng.standard_normal((4, 5, 5, 1))
    spec = WatermarkSpec(rng.uniform(0, 1, (5, 5, 1)), gamma=1.0, t_A=4, f1_mode="theorem")
    t = np.array([1, 2, 3, 4])
    pair = diffuse_embedding(x0, t, eps, spec, T4)
    np.testing.assert_allclose(pair.x_t_prime, diffuse_vanilla(x0, t, eps, T4), rtol=1e-14)
    np.testing.assert_array_equal(pair.target, eps)


def test_embedding_zero_mark_zero_mode():
    # zero mode starts the chain at x'_0 = gamma x0, so the data term carries gamma too
    rng = np.random.default_rng(1)
    x0, eps = rng.uniform(-1, 1, (3, 4, 4, 1)), rng.standard_normal((3, 4, 4, 1))
    spec = WatermarkSpec(np.zeros((4, 4, 1)), gamma=0.8, t_A=4, f1_mode="zero")
    pair = diffuse_embedding(x0, 3, eps, spec, T4)
    ab = T4.alpha_bar[3]
    np.testing.assert_allclose(pair.x_t_prime, np.sqrt(ab) * 0.8 * x0 + 0.8 * np.sqrt(1 - ab) * eps, rtol=1e-14)
    np.testing.assert_allclose(pair.target, 0.8 * eps, rtol=1e-15)


def test_embedding_rejects_simulation_steps():
    with pytest.raises(ValueError):
        diffuse_embedding(one(0.5), 3, one(0.1), scalar_spec(t_A=2), T4)


def test_simulation_examples():
    spec = scalar_spec(t_A=2)
    x = np.full((2, 1, 1, 1), 0.7)
    np.testing.assert_array_equal(_simulate(x, np.array(2), np.ones_like(x), 2, T4), x)
    pair = diffuse_simulation(x, 4, np.zeros_like(x), spec, T4)
    np.testing.assert_allclose(pair.x_t_prime, np.sqrt(T4.alpha_bar[4] / T4.alpha_bar[2]) * x)
    np.testing.assert_array_equal(pair.target, np.zeros_like(x))
    assert set(pair.stage) == {"simulation"}
    with pytest.raises(ValueError):
        diffuse_simulation(x, 2, np.zeros_like(x), spec, T4)


def test_terminal_shrink_coefficient_from_csv(tmp_path):
    sch = make_linear_schedule(1000, 1e-4, 0.02)
    rows = list(csv.DictReader(sch.to_csv(tmp_path / "s.csv").open()))
    from_csv = np.sqrt(float(rows[1000]["alpha_bar"]) / float(rows[500]["alpha_bar"]))
    spec = scalar_spec(t_A=500)
    got = diffuse_simulation(one(1.0), 1000, one(0.0), spec, sch).x_t_prime.item()
    assert got == pytest.approx(from_csv, rel=1e-15)
    assert got == pytest.approx(SQRT_RATIO_T1000, rel=1e-13)


def test_pair_reduces_to_vanilla_bitwise():
    sch = make_linear_schedule(100)
    spec = WatermarkSpec(np.zeros((8, 8, 1)), gamma=1.0, t_A=100, f1_mode="theorem")
    x0 = np.random.default_rng(0).uniform(-1, 1, (64, 8, 8, 1))
    t = np.arange(1, 65)
    pair = build_training_pair(x0, t, spec, sch, np.random.default_rng(5))
    ref_x, ref_eps = vanilla_pair(x0, t, sch, np.random.default_rng(5))
    assert np.array_equal(pair.x_t_prime, ref_x)
    assert np.array_equal(pair.target, ref_eps)


def test_pair_beyond_t_A_is_vanilla_in_distribution():
    # past t_A the reduced pipeline re-noises x'_{t_A}, so equality is only distributional
    sch = make_linear_schedule(100)
    spec = WatermarkSpec(np.zeros((1, 1, 1)), gamma=1.0, t_A=50, f1_mode="theorem")
    n = 100_000
    x0 = np.full((n, 1, 1, 1), 0.6)
    ours = build_training_pair(x0, 80, spec, sch, np.random.default_rng(2)).x_t_prime.ravel()
    ab = sch.alpha_bar[80]
    se_mean = np.sqrt((1 - ab) / n)
    assert abs(ours.mean() - np.sqrt(ab) * 0.6) < 4 * se_mean
    assert abs(ours.var() - (1 - ab)) < 4 * (1 - ab) * np.sqrt(2 / n)


def test_stage_boundary_belongs_to_embedding():
    spec = scalar_spec(t_A=2)
    x0 = np.full((4, 1, 1, 1), 0.1)
    pair = build_training_pair(x0, np.array([1, 2, 3, 4]), spec, T4, np.random.default_rng(0))
    assert pair.stage.tolist() == ["embedding", "embedding", "simulation", "simulation"]


def test_simulation_pair_is_two_step_composition():
    spec = scalar_spec(t_A=2)
    x0 = np.full((3, 1, 1, 1), -0.4)
    eps = np.random.default_rng(3).standard_normal(x0.shape)
    zero = np.zeros_like(x0)
    pair = build_training_pair(x0, 4, spec, T4, None, eps_prime=eps, eps_tA=zero)
    at_tA = diffuse_embedding(x0, 2, zero, spec, T4)
    expected = diffuse_simulation(at_tA.x_t_prime, 4, eps, spec, T4)
    np.testing.assert_array_equal(pair.x_t_prime, expected.x_t_prime)
    np.testing.assert_array_equal(pair.target, eps)


@given(st.integers(1, 30), st.integers(1, 30), st.integers(0, 2**32 - 1),
       st.sampled_from(["theorem", "zero"]), st.sampled_from(["batch", "sample", "static"]))
def test_pair_invariants(t_A, t, seed, mode, scale_mode):
    sch = make_linear_schedule(30)
    rng = np.random.default_rng(seed)
    spec = WatermarkSpec(rng.uniform(0, 1, (3, 3, 1)), gamma=0.7, t_A=t_A, f1_mode=mode, scale_mode=scale_mode)
    pair = build_training_pair(rng.uniform(-1, 1, (2, 3, 3, 1)), t, spec, sch, rng)
    assert pair.target.shape == pair.x_t_prime.shape
    assert (pair.stage == "embedding").tolist() == [t <= t_A] * 2
    assert np.all(np.isfinite(pair.x_t_prime))


def test_initial_state_endpoints():
    x0 = np.random.default_rng(0).uniform(-1, 1, (2, 3, 3, 1))
    mark = np.ones((3, 3, 1))
    theorem = WatermarkSpec(mark, gamma=0.6, t_A=2, f1_mode="theorem")
    zero = WatermarkSpec(mark, gamma=0.6, t_A=2, f1_mode="zero")
    np.testing.assert_allclose(initial_state(x0, theorem), x0, rtol=1e-15)
    np.testing.assert_allclose(initial_state(x0, zero), 0.6 * x0, rtol=1e-15)


def test_recursive_step_reductions():
    rng = np.random.default_rng(4)
    x, eps, x0 = (rng.standard_normal((2, 3, 3, 1)) for _ in range(3))
    a = T4.alpha[3]
    vanilla = WatermarkSpec(rng.uniform(0, 1, (3, 3, 1)), gamma=1.0, t_A=4)
    np.testing.assert_allclose(recursive_step(x, 3, eps, vanilla, T4, x0),
                               np.sqrt(a) * x + np.sqrt(1 - a) * eps, rtol=1e-14)
    damped = WatermarkSpec(np.zeros((3, 3, 1)), gamma=0.5, t_A=4, f1_mode="zero")
    np.testing.assert_allclose(recursive_step(x, 3, eps, damped, T4, x0),
                               np.sqrt(a) * x + 0.5 * np.sqrt(1 - a) * eps, rtol=1e-14)
    with pytest.raises(ValueError):
        recursive_step(x, 3, eps[:1], damped, T4, x0)


def test_recursion_without_noise_tracks_closed_form():
    # with zero noise both forms are deterministic, so they must agree exactly
    for mode in ("theorem", "zero"):
        spec = scalar_spec(mode=mode)
        xs = static_pattern(spec)
        x0 = one(0.25)
        x = initial_state(x0, spec)
        for t in range(1, 5):
            x = recursive_step(x, t, one(0.0), spec, T4, x0, xs)
            closed = diffuse_embedding(x0, t, one(0.0), spec, T4, xs).x_t_prime
            np.testing.assert_allclose(x, closed, rtol=1e-13, atol=1e-15)


def test_closed_form_matches_recursion_in_distribution():
    r = check_closed_vs_recursive(T=10, n=100_000, steps=(1, 5), seed=11)
    assert r["passed"], r


def test_terminal_gaussianity_off_mark_pixel():
    sch = make_linear_schedule(1000)
    spec = WatermarkSpec(np.array([[[1.0], [0.0]]]), gamma=0.8, t_A=500, f1_mode="zero")
    rng = np.random.default_rng(8)
    xs = []
    for _ in range(200):
        x0 = rng.uniform(-1, 1, (256, 1, 2, 1))
        xs.append(build_training_pair(x0, 1000, spec, sch, rng).x_t_prime[:, 0, 1, 0])
    x = np.concatenate(xs)
    assert abs(x.mean()) < 0.02 and abs(x.var() - 1) < 0.03
