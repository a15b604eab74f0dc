"""Classifier training and decision-map rendering over the projection plane.

A decision map colors each grid pixel by the classifier's label for that
pixel's inverse projection; rendering through a control session shows how the
labeled surface sweeps the data space as the pull factor changes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import nn
from .data import minmax_apply, minmax_fit
from .metrics import GridSpec, as_inverter
from .model import LcipHyperparams
from .nn import MlpModel, as_matrix

CLF_HIDDEN = (512, 256, 128)

# distinguishable default palette (RGB), cycled past 10 classes
PALETTE = [
    (31, 119, 180), (255, 127, 14), (44, 160, 44), (214, 39, 40),
    (148, 103, 189), (140, 86, 75), (227, 119, 194), (127, 127, 127),
    (188, 189, 34), (23, 190, 207),
]


@dataclass
class Classifier:
    net: MlpModel  # n -> hiddens -> |classes|, identity output + argmax
    classes: np.ndarray  # original label ids, ascending
    x_min: np.ndarray
    x_max: np.ndarray


def train_classifier(X_T: np.ndarray, labels: np.ndarray,
                     hyper: LcipHyperparams | None = None,
                     X_test: np.ndarray | None = None,
                     labels_test: np.ndarray | None = None,
                     ) -> tuple[Classifier, dict]:
    """Cross-entropy training with Adam; returns the classifier and an
    accuracy report (train, plus test when a test split is supplied)."""
    hyper = hyper or LcipHyperparams()
    X_T = as_matrix(X_T, "X_T")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != X_T.shape[0]:
        raise ValueError("train_classifier: label row mismatch")
    classes = np.unique(labels)
    if classes.size < 2:
        raise ValueError("train_classifier: need at least 2 classes")
    index_of = {c: i for i, c in enumerate(classes)}
    targets = np.array([index_of[c] for c in labels], dtype=np.int64)

    x_min, x_max = minmax_fit(X_T)
    Xn = minmax_apply(X_T, x_min, x_max)
    rng = np.random.default_rng(hyper.seed)
    net = nn.init_mlp([X_T.shape[1], *CLF_HIDDEN, classes.size], "relu",
                      "identity", rng=rng)
    clf = Classifier(net, classes, x_min, x_max)
    params = net.parameters()
    opt = nn.adam_init(params, hyper.learning_rate)
    shuffle = np.random.default_rng(hyper.seed + 1)
    n = Xn.shape[0]
    for _ in range(hyper.epochs):
        perm = shuffle.permutation(n)
        for start in range(0, n, hyper.batch_size):
            idx = perm[start:start + hyper.batch_size]
            logits, tape = nn.forward(net, Xn[idx], train=True)
            loss, g = nn.softmax_cross_entropy(logits, targets[idx])
            if not np.isfinite(loss):
                raise FloatingPointError(f"classifier diverged: loss={loss}")
            grads, _ = nn.backward(tape, g)
            nn.adam_step(params, grads, opt)

    report = {"train_accuracy": accuracy(clf, X_T, labels)}
    if X_test is not None and labels_test is not None and len(X_test):
        report["test_accuracy"] = accuracy(clf, X_test, labels_test)
    return clf, report


def predict(clf: Classifier, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(labels in original ids, max-softmax confidence) per row."""
    X = as_matrix(X, "X", cols=clf.net.in_dim)
    logits, _ = nn.forward(clf.net, minmax_apply(X, clf.x_min, clf.x_max),
                           train=False)
    probs = nn.softmax(logits)
    idx = probs.argmax(axis=1)
    return clf.classes[idx], probs[np.arange(len(idx)), idx]


def accuracy(clf: Classifier, X: np.ndarray, labels: np.ndarray) -> float:
    pred, _ = predict(clf, X)
    return float(np.mean(pred == np.asarray(labels)))


@dataclass
class DecisionMap:
    grid: GridSpec
    labels: np.ndarray  # (height, width) original label ids
    confidence: np.ndarray  # (height, width) max softmax


def render_decision_map(clf: Classifier, invert, grid: GridSpec) -> DecisionMap:
    """Label every grid pixel by classifying its inverse projection; pass a
    control session as ``invert`` to render the controlled variant."""
    q = as_inverter(invert)(grid.points())
    labels, conf = predict(clf, q)
    return DecisionMap(grid, labels.reshape(grid.height, grid.width),
                       conf.reshape(grid.height, grid.width))


def decision_map_to_ppm(dmap: DecisionMap, path: str) -> None:
    """Binary PPM (top row = highest y) plus a label->color palette JSON."""
    classes = np.unique(dmap.labels)
    colors = {int(c): PALETTE[i % len(PALETTE)] for i, c in enumerate(classes)}
    h, w = dmap.labels.shape
    img = np.zeros((h, w, 3), dtype=np.uint8)
    for c, rgb in colors.items():
        img[dmap.labels == c] = rgb
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(img[::-1].tobytes())
    with open(path + ".json", "w") as f:
        json.dump({"palette": {str(c): list(rgb) for c, rgb in colors.items()},
                   "width": w, "height": h,
                   "orientation": "top_row_is_max_y"}, f, indent=1)


def decision_map_to_csv(dmap: DecisionMap, path: str) -> None:
    np.savetxt(path, dmap.labels, delimiter=",", fmt="%d")


def surface_to_csv(invert, grid: GridSpec, path: str) -> None:
    """Point cloud of the inversely projected grid for external 3D viewers:
    columns px, py, then the data-space vector."""
    pts = grid.points()
    q = as_inverter(invert)(pts)
    np.savetxt(path, np.hstack([pts, q]), delimiter=",", fmt="%.9g")
