import numpy as np
import pytest

from nlm_oracle import direct_smooth, quadruple_loop_smooth
from dect.regularizers import (NlmParams, NlmWeights, apply_difference, apply_difference_adjoint,
                               laplacian, nlm_penalty_and_gradient, nlm_smooth, nlm_weight,
                               soft_threshold, tv_penalty)


def test_difference_examples():
    assert np.all(apply_difference(np.full((5, 6), 2.0)) == 0)
    ramp = np.tile(np.arange(6.0), (5, 1))
    g = apply_difference(ramp)
    np.testing.assert_array_equal(g[0, :, :-1], 1.0)
    np.testing.assert_array_equal(g[0, :, -1], 0.0)
    assert np.all(g[1] == 0)


def test_difference_adjoint_identity():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(9, 7))
    y = rng.normal(size=(2, 9, 7))
    assert abs(np.sum(apply_difference(x) * y) - np.sum(x * apply_difference_adjoint(y))) < 1e-12
    np.testing.assert_allclose(laplacian(x), apply_difference_adjoint(apply_difference(x)))


def test_soft_threshold_examples():
    assert soft_threshold(3.0, 1.0) == 2.0
    assert soft_threshold(-0.5, 1.0) == 0.0
    x = np.random.default_rng(1).normal(size=20)
    np.testing.assert_array_equal(soft_threshold(x, 0.0), x)
    with pytest.raises(ValueError):
        soft_threshold(x, -1.0)


def test_soft_threshold_scalar_prox_oracle():
    # argmin_v kappa|v| + 0.5 (v - x)^2 by dense grid search.
    grid = np.linspace(-6, 6, 240001)
    for x in (-4.3, -0.7, 0.0, 0.2, 2.5):
        obj = 0.8 * np.abs(grid) + 0.5 * (grid - x) ** 2
        assert abs(soft_threshold(x, 0.8) - grid[np.argmin(obj)]) < 1e-4


def test_tv_penalty_examples():
    assert tv_penalty(np.ones((4, 4)), 0.5) == 0
    step = np.zeros((6, 8))
    step[:, 4:] = 2.5
    assert tv_penalty(step, 0.01) == pytest.approx(0.01 * 2.5 * 6)
    rng = np.random.default_rng(2)
    x = rng.normal(size=(5, 5))
    assert tv_penalty(x + 3.0, 1.0) == pytest.approx(tv_penalty(x, 1.0), rel=1e-12)


def test_nlm_weight_examples():
    ref = np.random.default_rng(3).normal(size=(12, 12))
    p = NlmParams(0.5, 1, 3)
    assert nlm_weight(ref, (5, 5), (5, 5), p) == 1.0
    assert nlm_weight(np.full((6, 6), 4.0), (1, 2), (4, 4), p) == 1.0
    base = np.zeros((9, 9))
    last = 1.0
    for s in (0.5, 1.0, 2.0, 4.0):
        img = base.copy()
        img[5:8, 5:8] = s  # patch around (6, 6) moves away from the one around (2, 2)
        w = nlm_weight(img, (2, 2), (6, 6), p)
        assert w < last
        last = w


def test_nlm_matches_literal_quadruple_loop():
    rng = np.random.default_rng(4)
    img, ref = rng.normal(size=(2, 12, 12))
    params = NlmParams(0.6, 1, 3)
    expect = quadruple_loop_smooth(img, ref, 0.6, 1, 3)
    assert np.abs(nlm_smooth(img, ref, params) - expect).max() <= 1e-10


def test_nlm_matches_direct_oracle_default_windows():
    rng = np.random.default_rng(5)
    img, ref = rng.uniform(size=(2, 32, 32))
    params = NlmParams(0.15, 3, 9)
    expect, _ = direct_smooth(img, ref, 0.15, 3, 9)
    assert np.abs(nlm_smooth(img, ref, params) - expect).max() <= 1e-10


def test_nlm_constant_reference_gives_window_mean():
    rng = np.random.default_rng(6)
    img = rng.normal(size=(10, 11))
    out = nlm_smooth(img, np.ones_like(img), NlmParams(1.0, 1, 2))
    for (r, c) in ((0, 0), (5, 5), (9, 10), (3, 0)):
        win = img[max(0, r - 2):r + 3, max(0, c - 2):c + 3]
        assert out[r, c] == pytest.approx(win.mean(), rel=1e-12)


def test_nlm_small_beta_is_identity():
    rng = np.random.default_rng(7)
    img, ref = rng.normal(size=(2, 10, 10))
    np.testing.assert_allclose(nlm_smooth(img, ref, NlmParams(1e-4, 1, 3)), img, atol=1e-12)


def test_nlm_average_properties():
    rng = np.random.default_rng(8)
    x, y, ref = rng.normal(size=(3, 14, 14))
    p = NlmParams(0.5, 2, 4)
    W = NlmWeights(ref, p)
    np.testing.assert_allclose(W.smooth(2 * x - 3 * y), 2 * W.smooth(x) - 3 * W.smooth(y), atol=1e-12)
    np.testing.assert_allclose(W.smooth(np.full((14, 14), 7.0)), 7.0, atol=1e-12)
    out = W.smooth(x)
    assert out.min() >= x.min() - 1e-12 and out.max() <= x.max() + 1e-12


def test_nlm_adjoint_and_gram_diagonal():
    rng = np.random.default_rng(9)
    ref = rng.normal(size=(9, 8))
    params = NlmParams(0.7, 1, 3)
    W = NlmWeights(ref, params)
    x, y = rng.normal(size=(2, 9, 8))
    assert abs(np.sum(W.smooth(x) * y) - np.sum(x * W.smooth_adjoint(y))) < 1e-12
    _, K = direct_smooth(x, ref, 0.7, 1, 3)
    S = K / K.sum(1, keepdims=True)
    R = np.eye(S.shape[0]) - S
    np.testing.assert_allclose(W.gram_diagonal().ravel(), np.diag(R.T @ R), atol=1e-12)


def test_kernel_symmetry_interior():
    ref = np.random.default_rng(10).normal(size=(15, 15))
    p = NlmParams(0.4, 2, 4)
    for k, l in (((5, 5), (7, 9)), ((6, 8), (9, 6))):
        assert nlm_weight(ref, k, l, p) == pytest.approx(nlm_weight(ref, l, k, p), rel=1e-14)


def fd_nlm_errors(seed, shape=(16, 16)):
    rng = np.random.default_rng(seed)
    p_img, ref = rng.normal(size=(2,) + shape)
    params = NlmParams(0.8, 1, 3)
    W = NlmWeights(ref, params)
    _, grad = nlm_penalty_and_gradient(p_img, W, lambda_nlm=0.7)
    h = 1e-4
    fd = np.zeros(p_img.size)
    for k in range(p_img.size):
        e = np.zeros(p_img.size)
        e[k] = h
        e = e.reshape(shape)
        fd[k] = (nlm_penalty_and_gradient(p_img + e, W, lambda_nlm=0.7)[0]
                 - nlm_penalty_and_gradient(p_img - e, W, lambda_nlm=0.7)[0]) / (2 * h)
    return np.linalg.norm(grad.ravel() - fd) / np.linalg.norm(fd)


def test_nlm_gradient_fd():
    for seed in range(10):
        assert fd_nlm_errors(seed) <= 1e-6


def test_nlm_penalty_examples():
    ref = np.random.default_rng(11).normal(size=(8, 8))
    v, g = nlm_penalty_and_gradient(np.full((8, 8), 3.0), ref, NlmParams(0.5, 1, 2))
    assert v == pytest.approx(0.0, abs=1e-24) and np.abs(g).max() < 1e-12
    x = np.random.default_rng(12).normal(size=(8, 8))
    v1, g1 = nlm_penalty_and_gradient(x, ref, NlmParams(0.5, 1, 2))
    v2, g2 = nlm_penalty_and_gradient(2.5 * x, ref, NlmParams(0.5, 1, 2))
    assert v2 == pytest.approx(6.25 * v1, rel=1e-12)
    np.testing.assert_allclose(g2, 2.5 * g1, rtol=1e-12, atol=1e-14)


def test_nlm_penalty_convex():
    rng = np.random.default_rng(13)
    ref = rng.normal(size=(8, 8))
    W = NlmWeights(ref, NlmParams(0.5, 1, 2))
    for _ in range(5):
        a, b = rng.normal(size=(2, 8, 8))
        f = lambda z: nlm_penalty_and_gradient(z, W)[0]
        assert f(0.5 * (a + b)) <= 0.5 * (f(a) + f(b)) + 1e-12


def test_nlm_params_validation():
    with pytest.raises(ValueError):
        NlmParams(0.0)
    with pytest.raises(ValueError):
        NlmParams(1.0, 3, 2)
    with pytest.raises(ValueError):
        nlm_smooth(np.zeros((4, 4)), np.zeros((5, 5)), NlmParams())
