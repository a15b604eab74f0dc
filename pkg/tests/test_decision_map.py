"""Classifier training and decision-map rendering."""

import json

import numpy as np
import pytest

from lcip import data, decision_map, metrics, model


@pytest.fixture(scope="module")
def blob_clf():
    ds = data.make_blobs(per_class=120, seed=7)
    ds = data.split(ds, 600, 120, seed=7)
    hyper = model.LcipHyperparams(batch_size=64, epochs=60, seed=7)
    clf, report = decision_map.train_classifier(
        ds.X_train, ds.labels_train, hyper, ds.X_test, ds.labels_test)
    return clf, report, ds


def test_blob_classifier_accuracy(blob_clf):
    clf, report, ds = blob_clf
    assert report["test_accuracy"] > 0.95


def test_untrained_classifier_near_chance():
    ds = data.make_blobs(per_class=100, seed=3)
    hyper = model.LcipHyperparams(epochs=0, seed=3)
    clf, report = decision_map.train_classifier(ds.X, ds.labels, hyper)
    assert abs(report["train_accuracy"] - 1 / 6) <= 0.1


def test_single_class_rejected():
    X = np.zeros((10, 3), np.float32)
    with pytest.raises(ValueError):
        decision_map.train_classifier(X, np.zeros(10, np.int64))


def test_label_permutation_equivariance(blob_clf):
    clf, _, ds = blob_clf
    grid = metrics.GridSpec(-3, 3, -3, 3, 12, 12)
    invert = lambda p: np.hstack([p, np.zeros((len(p), 1), np.float32)])
    base = decision_map.render_decision_map(clf, invert, grid)

    perm = np.array([2, 0, 1, 4, 5, 3])  # sigma: new j holds old perm[j]
    permuted = decision_map.Classifier(
        net=clf.net.copy(), classes=clf.classes, x_min=clf.x_min, x_max=clf.x_max)
    out = permuted.net.layers[-1]
    out.weight[...] = out.weight[:, perm]
    out.bias[...] = out.bias[perm]
    remapped = decision_map.render_decision_map(permuted, invert, grid)

    # argmax index i in the permuted net corresponds to old class perm[i]
    np.testing.assert_array_equal(perm[remapped.labels], base.labels)
    np.testing.assert_allclose(remapped.confidence, base.confidence, atol=1e-6)


def test_constant_classifier_single_color(blob_clf):
    clf, _, ds = blob_clf
    const = decision_map.Classifier(
        net=clf.net.copy(), classes=clf.classes, x_min=clf.x_min, x_max=clf.x_max)
    for layer in const.net.layers:
        layer.weight[...] = 0.0
        layer.bias[...] = 0.0
    const.net.layers[-1].bias[2] = 5.0
    grid = metrics.GridSpec(-3, 3, -3, 3, 8, 8)
    invert = lambda p: np.hstack([p, np.zeros((len(p), 1), np.float32)])
    dmap = decision_map.render_decision_map(const, invert, grid)
    assert set(np.unique(dmap.labels)) == {2}


def test_map_determinism(blob_clf):
    clf, _, ds = blob_clf
    grid = metrics.GridSpec(-3, 3, -3, 3, 10, 10)
    invert = lambda p: np.hstack([p, 0.3 * np.ones((len(p), 1), np.float32)])
    a = decision_map.render_decision_map(clf, invert, grid)
    b = decision_map.render_decision_map(clf, invert, grid)
    assert a.labels.tobytes() == b.labels.tobytes()
    assert a.confidence.tobytes() == b.confidence.tobytes()


def test_ppm_and_csv_export(tmp_path, blob_clf):
    clf, _, ds = blob_clf
    grid = metrics.GridSpec(-3, 3, -3, 3, 6, 4)
    invert = lambda p: np.hstack([p, np.zeros((len(p), 1), np.float32)])
    dmap = decision_map.render_decision_map(clf, invert, grid)
    ppm = tmp_path / "map.ppm"
    decision_map.decision_map_to_ppm(dmap, str(ppm))
    raw = ppm.read_bytes()
    assert raw.startswith(b"P6\n6 4\n255\n")
    assert len(raw) == len(b"P6\n6 4\n255\n") + 6 * 4 * 3
    palette = json.loads((tmp_path / "map.ppm.json").read_text())
    assert set(palette["palette"]) <= {str(c) for c in clf.classes}
    csv = tmp_path / "map.csv"
    decision_map.decision_map_to_csv(dmap, str(csv))
    assert len(csv.read_text().strip().split("\n")) == 4


def test_surface_point_cloud_export(tmp_path):
    grid = metrics.GridSpec(0, 1, 0, 1, 4, 3)
    invert = lambda p: np.hstack([p * 2, np.ones((len(p), 1), np.float32)])
    out = tmp_path / "surface.csv"
    decision_map.surface_to_csv(invert, grid, str(out))
    arr = np.loadtxt(out, delimiter=",")
    assert arr.shape == (12, 5)
    np.testing.assert_allclose(arr[:, 2:4], arr[:, :2] * 2, atol=1e-6)
