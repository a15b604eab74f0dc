"""NNinv-style and RBF inverse projection baselines."""

import numpy as np
import pytest

from lcip import baselines, data, model


def small_hyper(**kw):
    base = dict(z_dim=4, batch_size=32, epochs=3, seed=5)
    base.update(kw)
    return model.LcipHyperparams(**base)


def test_nninv_zero_epochs_is_initialization():
    rng = np.random.default_rng(0)
    X = rng.uniform(0, 1, (64, 3)).astype(np.float32)
    Y = data.pca_project(X)
    a = baselines.train_nninv(X, Y, small_hyper(epochs=0))
    b = baselines.train_nninv(X, Y, small_hyper(epochs=0))
    for p, q in zip(a.net.parameters(), b.net.parameters()):
        np.testing.assert_array_equal(p, q)


def test_nninv_learns_constant_dataset():
    c = np.array([0.2, 0.7, 0.4], np.float32)
    X = np.tile(c, (80, 1))
    rng = np.random.default_rng(1)
    Y = rng.standard_normal((80, 2)).astype(np.float32)
    m = baselines.train_nninv(X, Y, small_hyper(epochs=2))
    out = baselines.invert_nninv(m, Y[:10])
    assert np.abs(out - c).max() < 1e-2


def test_nninv_output_shape_and_row_mismatch():
    rng = np.random.default_rng(2)
    X = rng.uniform(0, 1, (40, 5)).astype(np.float32)
    Y = data.pca_project(X)
    m = baselines.train_nninv(X, Y, small_hyper(epochs=1))
    assert baselines.invert_nninv(m, Y[:7]).shape == (7, 5)
    with pytest.raises(ValueError):
        baselines.train_nninv(X[:-1], Y, small_hyper())


def test_rbf_reproduces_anchors_at_zero_smoothing():
    rng = np.random.default_rng(3)
    Y = rng.uniform(-2, 2, (30, 2)).astype(np.float32)
    X = rng.uniform(0, 1, (30, 4)).astype(np.float32)
    m = baselines.fit_rbf_inverse(X, Y, smoothing=0.0)
    out = baselines.invert_rbf(m, Y)
    np.testing.assert_allclose(out, X, atol=1e-5)


def test_rbf_exact_on_linear_map_held_out():
    rng = np.random.default_rng(4)
    A = rng.standard_normal((2, 6))
    Y = rng.uniform(-2, 2, (60, 2)).astype(np.float32)
    X = (Y @ A).astype(np.float32)
    m = baselines.fit_rbf_inverse(X, Y, smoothing=0.0)
    held = rng.uniform(-2, 2, (25, 2)).astype(np.float32)
    np.testing.assert_allclose(baselines.invert_rbf(m, held), held @ A, atol=1e-3)


def test_rbf_default_smoothing_positive():
    rng = np.random.default_rng(5)
    Y = rng.uniform(-2, 2, (20, 2)).astype(np.float32)
    X = rng.uniform(0, 1, (20, 3)).astype(np.float32)
    m = baselines.fit_rbf_inverse(X, Y)
    assert m.smoothing > 0
