import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from diffwm.schedule import (
    VarianceSchedule,
    compute_f1,
    compute_f2,
    compute_K,
    default_beta_range,
    h_coefficient,
    make_linear_schedule,
)

# 50-digit mpmath double loops (product accumulation and direct S(t) sums), rounded
K_T1000 = 0.50213476560857275643
ALPHA_BAR_T1000 = 0.000040358297653756833148
F2_500_T1000 = 0.95855694051405555047
F2_100_T1000 = 0.31189162467630160186
ARGMAX_T1000 = 883
K_CONST10 = 0.75442626887723050027
F2_5_CONST10 = 0.71138484760380669164
K_T4 = 0.80832826856354120686
F2_T4 = [0.0, 0.25561584257610724229, 0.53414912809650424952, 0.79122592825170172451, 1.0]


@pytest.fixture(scope="module")
def default():
    return make_linear_schedule(1000, 1e-4, 0.02)


def betas_strategy(max_len=40):
    return st.lists(st.floats(1e-4, 0.5, allow_nan=False), min_size=1, max_size=max_len)


def test_default_schedule_shape(default):
    assert default.T == 1000
    assert default.beta[1] == 1e-4 and default.beta[1000] == 0.02
    assert np.all(default.alpha == 1 - default.beta)


def test_alpha_bar_matches_extended_precision(default):
    assert default.alpha_bar[1000] == pytest.approx(ALPHA_BAR_T1000, rel=1e-12)


def test_K_default_golden(default):
    assert default.K == pytest.approx(K_T1000, rel=1e-13)
    assert compute_K(default) == default.K
    assert int(np.argmax(default.f2_table)) == ARGMAX_T1000


def test_f2_default_golden(default):
    assert default.f2_table[500] == pytest.approx(F2_500_T1000, rel=1e-12)
    assert default.f2_table[100] == pytest.approx(F2_100_T1000, rel=1e-12)


def test_K_single_step():
    s = VarianceSchedule.from_betas([0.1])
    assert abs(s.K - 1 / math.sqrt(0.1)) < 1e-12
    assert s.K == pytest.approx(3.16228, abs=1e-5)


def test_constant_schedule_golden():
    s = VarianceSchedule.from_betas([0.1] * 10)
    assert s.K == pytest.approx(K_CONST10, rel=1e-13)
    assert compute_f2(s, 5) == pytest.approx(F2_5_CONST10, rel=1e-13)


def test_four_step_golden():
    s = VarianceSchedule.from_betas([0.1, 0.2, 0.3, 0.4])
    assert s.K == pytest.approx(K_T4, rel=1e-13)
    np.testing.assert_allclose(s.f2_table, F2_T4, rtol=1e-13, atol=0)


def test_f1_modes():
    s = VarianceSchedule.from_betas([0.1])
    assert compute_f1(s, 0, "theorem") == 1.0
    assert compute_f1(s, 1, "theorem") == pytest.approx(math.sqrt(0.9))
    assert compute_f1(s, 1, "theorem") == pytest.approx(0.94868, abs=1e-5)
    assert compute_f1(s, 0, "zero") == 0.0 and compute_f1(s, 1, "zero") == 0.0
    with pytest.raises(IndexError):
        compute_f1(s, 2)
    with pytest.raises(ValueError):
        compute_f1(s, 1, "other")


def test_f2_endpoints(default):
    assert compute_f2(default, 0) == 0.0
    assert default.f2_table[0] == 0.0
    assert abs(compute_f2(default, ARGMAX_T1000) - 1.0) < 1e-9
    assert abs(default.f2_table.max() - 1.0) < 1e-9


def test_f2_rises_to_peak_then_falls(default):
    # the curve peaks before T on the default schedule, so it is only monotone up to the peak
    f2 = default.f2_table
    assert np.all(np.diff(f2[:ARGMAX_T1000 + 1]) > 0)
    assert f2[1000] < 1.0


def test_h_recursion(default):
    for t in (1, 2, 17, 500, 1000):
        assert default.f2_table[t] == pytest.approx(
            math.sqrt(default.alpha[t]) * default.f2_table[t - 1] + h_coefficient(default, t), rel=1e-14)
    with pytest.raises(IndexError):
        h_coefficient(default, 0)


@given(betas_strategy())
def test_incremental_table_matches_direct_sum(betas):
    s = VarianceSchedule.from_betas(betas)
    for t in range(s.T + 1):
        assert s.f2_table[t] == pytest.approx(compute_f2(s, t), rel=1e-12, abs=1e-15)


@given(betas_strategy())
def test_schedule_invariants(betas):
    s = VarianceSchedule.from_betas(betas)
    assert s.alpha_bar[0] == 1.0
    assert np.all(np.diff(s.alpha_bar) < 0)
    assert np.all(s.alpha_bar[1:] == s.alpha_bar[:-1] * s.alpha[1:])
    assert np.all(s.alpha[1:] == 1 - s.beta[1:])
    assert s.f2_table[0] == 0.0
    assert abs(s.f2_table.max() - 1.0) < 1e-9
    assert np.all(s.f2_table >= 0)


@given(betas_strategy(20), st.floats(0.1, 10))
def test_f2_linear_in_K(betas, factor):
    s = VarianceSchedule.from_betas(betas)
    scaled = VarianceSchedule(s.beta, s.alpha, s.alpha_bar, s.K * factor, s.f2_table)
    for t in range(s.T + 1):
        assert compute_f2(scaled, t) == pytest.approx(factor * compute_f2(s, t), rel=1e-12, abs=1e-15)


def test_rejects_bad_bounds():
    for args in [(0, 0.1, 0.2), (10, 0.0, 0.2), (10, 0.3, 0.2), (10, 0.1, 1.0),
                 (10, math.nan, 0.2), (10, 0.1, math.inf)]:
        with pytest.raises(ValueError):
            make_linear_schedule(*args)
    with pytest.raises(ValueError):
        VarianceSchedule.from_betas([0.1, 1.0])
    with pytest.raises(ValueError):
        VarianceSchedule.from_betas([])


def test_default_range_scales_with_T():
    assert default_beta_range(1000) == pytest.approx((1e-4, 0.02))
    assert default_beta_range(100) == pytest.approx((1e-3, 0.2))
    assert make_linear_schedule(100).alpha_bar[100] < 1e-4


def test_immutable(default):
    with pytest.raises(ValueError):
        default.beta[3] = 0.5
    with pytest.raises(AttributeError):
        default.K = 2.0


def test_fingerprint(default):
    same = make_linear_schedule(1000, 1e-4, 0.02)
    other = make_linear_schedule(1000, 1e-4, 0.021)
    assert default.fingerprint() == same.fingerprint() != other.fingerprint()


def test_csv_dump(default, tmp_path):
    import csv

    path = default.to_csv(tmp_path / "s.csv")
    rows = list(csv.DictReader(path.open()))
    assert list(rows[0]) == ["t", "beta", "alpha", "alpha_bar", "f1_theorem", "f2"]
    assert len(rows) == 1001
    assert float(rows[1000]["alpha_bar"]) == default.alpha_bar[1000]
    assert float(rows[0]["f1_theorem"]) == 1.0
