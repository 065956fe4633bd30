import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from ganvert import tensor as T
from ganvert.loss import (FeatureExtractor, LossConfig, l1_penalty, latent_prior_penalty,
                          loss_mse_feat, mse, relative_mse, soft_threshold)

pixel = FeatureExtractor("pixel")


def _conv_same(x, w):
    c_out, c_in, k, _ = w.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    out = np.zeros((c_out,) + x.shape[1:])
    for o in range(c_out):
        for i in range(x.shape[1]):
            for j in range(x.shape[2]):
                out[o, i, j] = np.sum(xp[:, i:i + k, j:j + k] * w[o])
    return out


def _pool(x):
    c, h, w = x.shape
    return x.reshape(c, h // 2, 2, w // 2, 2).max(axis=(2, 4))


def _features(x, weights):
    for w in weights:
        x = np.maximum(_pool(_conv_same(x, w)), 0.0)
    return x.ravel()


def test_mse_hand_values():
    x = np.array([1.0, 2.0])
    assert mse(x, x) == 0
    assert mse(x, np.zeros(2)) == 5.0
    y = np.array([-0.5, 4.0])
    assert mse(x, y) == mse(y, x)


def test_mse_shape_mismatch():
    with pytest.raises(T.ShapeError):
        mse(np.zeros(3), np.zeros(4))


def test_lambda_feat_zero_is_plain_mse(rng):
    x, y = rng.normal(size=(3, 8, 8)), rng.normal(size=(3, 8, 8))
    ext = FeatureExtractor("randconv", seed=1)
    assert loss_mse_feat(x, y, ext, 0.0) == mse(x, y)


def test_pixel_extractor_doubles_mse(rng):
    x, y = rng.normal(size=(3, 4, 4)), rng.normal(size=(3, 4, 4))
    np.testing.assert_allclose(loss_mse_feat(x, y, pixel, 1.0), 2 * mse(x, y), rtol=1e-15)
    assert pixel(x) is x


def test_randconv_matches_straight_line_formula():
    r = np.random.default_rng(99)
    x, y = np.tanh(r.normal(size=(3, 16, 16))), np.tanh(r.normal(size=(3, 16, 16)))
    ext = FeatureExtractor("randconv", seed=3)
    w1, w2 = ext.weights
    assert w1.shape == (8, 3, 3, 3) and w2.shape == (16, 8, 3, 3)
    fx, fy = _features(x, ext.weights), _features(y, ext.weights)
    expected = np.sum((x - y) ** 2) + 0.7 * np.sum((fx - fy) ** 2)
    np.testing.assert_allclose(loss_mse_feat(x, y, ext, 0.7), expected, rtol=1e-12)


def test_randconv_deterministic_per_seed():
    a, b, c = (FeatureExtractor("randconv", seed=s) for s in (5, 5, 6))
    assert all(np.array_equal(u, v) for u, v in zip(a.weights, b.weights))
    assert not np.array_equal(a.weights[0], c.weights[0])


def test_randconv_shape_check():
    with pytest.raises(T.ShapeError):
        FeatureExtractor("randconv")(np.zeros((3, 6, 6)))
    with pytest.raises(ValueError):
        FeatureExtractor("vgg")


def test_batched_loss_matches_per_sample(rng):
    ext = FeatureExtractor("randconv")
    x = rng.normal(size=(3, 8, 8))
    ys = rng.normal(size=(4, 3, 8, 8))
    batch = loss_mse_feat(x, ys, ext, 0.5, batch=True)
    for i in range(4):
        np.testing.assert_allclose(batch[i], loss_mse_feat(x, ys[i], ext, 0.5), rtol=1e-13)


def test_latent_prior_penalty():
    assert latent_prior_penalty(np.zeros(4)) == 0
    assert latent_prior_penalty(np.array([3.0, 4.0])) == 25.0
    z = np.array([1.0, -2.0, 0.5])
    assert latent_prior_penalty(z) == latent_prior_penalty(z[[2, 0, 1]])


def test_l1_penalty():
    assert l1_penalty(np.zeros(3)) == 0
    d = np.array([1.0, -2.0, 0.5])
    assert l1_penalty(d) == 3.5
    assert l1_penalty(-d) == l1_penalty(d)


def test_soft_threshold():
    out = soft_threshold(np.array([-3.0, -0.5, 0.0, 0.2, 2.0]), 1.0)
    np.testing.assert_array_equal(out, [-2.0, 0.0, 0.0, 0.0, 1.0])
    assert not np.signbit(out[1])


def test_relative_mse():
    t = np.array([1.0, 1.0])
    assert relative_mse(t, t) == 0
    assert relative_mse(np.zeros(2), t) == 1.0


@pytest.mark.parametrize("bad", [dict(lambda_feat=-1), dict(lambda1=float("nan")), dict(lambda2=float("inf"))])
def test_loss_config_validation(bad):
    with pytest.raises(ValueError):
        LossConfig(**bad)


def test_loss_gradient_wrt_reconstruction(rng):
    ext = FeatureExtractor("randconv", seed=2)
    x = np.tanh(rng.normal(size=(3, 8, 8)))
    g = T.Graph()
    y = g.leaf(np.tanh(rng.normal(size=(3, 8, 8))))
    loss_mse_feat(x, y, ext, 1.3)
    assert T.grad_check(g, y).max_rel < 1e-6


arrays = hnp.arrays(np.float64, st.integers(1, 12), elements=st.floats(-5, 5))


@settings(max_examples=80, deadline=None)
@given(arrays, st.data())
def test_pixel_loss_nonnegative_zero_iff_equal(x, data):
    y = data.draw(hnp.arrays(np.float64, x.shape, elements=st.floats(-5, 5)))
    v = loss_mse_feat(x, y, pixel, 1.0)
    assert v >= 0
    assert (v == 0) == np.array_equal(x, y)


@settings(max_examples=80, deadline=None)
@given(arrays, st.data())
def test_prior_strictly_convex(a, data):
    b = data.draw(hnp.arrays(np.float64, a.shape, elements=st.floats(-5, 5)))
    if np.max(np.abs(a - b)) < 1e-3:
        return
    mid = latent_prior_penalty((a + b) / 2)
    assert mid < (latent_prior_penalty(a) + latent_prior_penalty(b)) / 2
