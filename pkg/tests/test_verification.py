import json

import cv2
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import ndimage

from diffwm.data import make_synthetic_dataset
from diffwm.verification import (
    DEFAULT_THRESHOLD,
    contour_similarity,
    find_contours,
    hu_moments,
    polygon_moments,
    preprocess,
    verify,
)
from diffwm.watermark import make_pattern


def largest(img):
    return max(find_contours(preprocess(img)), key=lambda c: abs(cv2.contourArea(c)))


def square_img(size, side, r0=None, c0=None):
    img = np.zeros((size, size))
    r0 = (size - side) // 2 if r0 is None else r0
    c0 = r0 if c0 is None else c0
    img[r0:r0 + side, c0:c0 + side] = 1
    return img


def test_preprocess_examples():
    assert not preprocess(np.zeros((8, 8))).any()
    b = (np.random.default_rng(0).random((10, 10)) > 0.5).astype(np.uint8) * 255
    np.testing.assert_array_equal(preprocess(b), b)
    labels, n = ndimage.label(preprocess(square_img(28, 7)) > 0)
    assert n == 1 and (labels == 1).sum() == 49


def test_luminance_weights():
    rgb = np.zeros((2, 2, 3))
    rgb[0, 0] = [1, 0, 0]
    rgb[1, 1] = [0, 1, 0]
    # after range stretch, red maps to 76 and green to 150 on the gray scale
    out = preprocess(rgb)
    assert out[1, 1] == 255 and out[0, 0] == 0


def test_edges_mode_traces_and_records_stages():
    r = verify(square_img(28, 9), square_img(28, 9), edgesconvert=True)
    assert r.stages[-2:] == ["gaussian_blur", "canny"] and r.edgesconvert
    assert r.contour_counts[0] >= 1


def test_find_contours_examples():
    assert find_contours(np.zeros((5, 5), np.uint8)) == []
    (c,) = find_contours(preprocess(square_img(12, 5)))
    assert len(c) == 4 * (5 - 1)
    two = square_img(20, 4, 2) + square_img(20, 4, 12)
    assert len(find_contours(preprocess(two))) == 2


def test_contours_counterclockwise():
    for img in make_synthetic_dataset(5, 16, seed=2):
        for c in find_contours(preprocess(img)):
            assert polygon_moments(c)["m00"] == pytest.approx(cv2.contourArea(c.astype(np.int32)))
            x, y = c[:, 0].astype(float), c[:, 1].astype(float)
            assert np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y) >= 0


def test_hand_moments_match_opencv():
    # opencv is used here only as the second route; the library computes moments itself
    n = 0
    for img in make_synthetic_dataset(8, 16, seed=5):
        for c in find_contours(preprocess(img)):
            if len(c) < 3 or cv2.contourArea(c) == 0:
                continue
            ref = cv2.moments(c.reshape(-1, 1, 2).astype(np.int32))
            mine = polygon_moments(c)
            for k, v in mine.items():
                assert v == pytest.approx(ref[k], rel=1e-12, abs=1e-9)
            np.testing.assert_allclose(hu_moments(c), cv2.HuMoments(ref).ravel(), rtol=1e-9, atol=1e-15)
            n += 1
    assert n >= 8


def test_similarity_examples():
    c = largest(make_synthetic_dataset(1, 16, seed=3)[0])
    assert contour_similarity(c, c) == 0.0
    poly = np.array([[0, 0], [4, 0], [4, 4], [0, 4]])
    assert contour_similarity(poly, poly * 2 + 7) < 1e-6
    assert contour_similarity(np.array([[0, 0], [1, 1], [2, 2]]), poly) is None


def test_cross_is_far_from_square():
    sq_a = largest(make_pattern("square", "center", 7, (28, 28, 1)))
    sq_b = largest(make_pattern("square", "bottom_right", 10, (28, 28, 1)))
    cross = largest(make_pattern("cross", "center", 9, (28, 28, 1)))
    same = contour_similarity(sq_a, sq_b)
    diff = contour_similarity(sq_a, cross)
    assert diff >= 10 * max(same, 1e-6)
    assert same < DEFAULT_THRESHOLD < diff


def test_verify_identical_and_empty():
    p = make_pattern("square", "bottom_right", 4, (16, 16, 1))
    r = verify(p, p)
    assert r.verdict and r.best_similarity == 0.0
    r = verify(np.zeros((16, 16)), p)
    assert not r.verdict and r.best_similarity == float("inf") and r.contour_counts[0] == 0


def test_verify_crops_pattern_to_support():
    p = make_pattern("square", "center", 6, (28, 28, 1))
    x = np.zeros((12, 12))
    x[3:9, 3:9] = 1
    assert verify(x, p).verdict


@pytest.mark.parametrize("size,side", [(16, 4), (28, 7)])
def test_noise_false_positive_rate(size, side):
    p = make_pattern("square", "bottom_right", side, (size, size, 1))
    rng = np.random.default_rng(0)
    fp = sum(verify(rng.standard_normal((size, size)), p).verdict for _ in range(100))
    assert fp <= 5


@given(st.floats(0.01, 100), st.floats(-50, 50), st.integers(0, 2**31))
def test_affine_intensity_invariance(a, b, seed):
    rng = np.random.default_rng(seed)
    p = make_pattern("square", "bottom_right", 4, (16, 16, 1))
    x = 0.5 * rng.standard_normal((16, 16, 1)) + 2 * p
    r1, r2 = verify(x, p), verify(a * x + b, p)
    assert r1.verdict == r2.verdict
    assert r1.best_similarity == pytest.approx(r2.best_similarity, rel=1e-9)


@given(st.integers(0, 2**31), st.floats(1e-6, 5), st.floats(1e-6, 5))
def test_threshold_monotone(seed, t1, t2):
    lo, hi = sorted((t1, t2))
    p = make_pattern("square", "bottom_right", 4, (16, 16, 1))
    x = np.random.default_rng(seed).standard_normal((16, 16)) + 1.5 * p[..., 0]
    if verify(x, p, lo).verdict:
        assert verify(x, p, hi).verdict


@given(st.floats(1e-9, 10), st.booleans(), st.sampled_from(["square", "plus", "cross"]))
def test_pattern_verifies_against_itself(eps, edges, shape):
    p = make_pattern(shape, "center", 9, (28, 28, 1))
    assert verify(p, p, eps, edges).verdict


def test_report_json_fields():
    p = make_pattern("square", "bottom_right", 4, (16, 16, 1))
    d = json.loads(verify(p, p).to_json())
    assert list(d) == ["verdict", "best_similarity", "threshold", "contour_counts", "stages", "edgesconvert"]
    assert d["contour_counts"] == [1, 1] and d["stages"] == ["uint8", "grayscale", "threshold"]
    assert json.loads(verify(np.zeros((16, 16)), p).to_json())["best_similarity"] is None


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        preprocess(np.array([[np.nan, 1.0]]))
