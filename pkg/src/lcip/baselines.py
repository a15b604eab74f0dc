"""Reference inverse projections: a supervised 2D->data network and a direct
thin-plate RBF map. Both expose the same batch-invert surface as the fixed
LCIP inverse, so the whole metrics suite runs unmodified over any of them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .data import (minmax_apply, minmax_fit, minmax_invert, standardize_apply,
                   standardize_fit)
from .model import DEC_HIDDEN, LcipHyperparams
from .nn import MlpModel, as_matrix
from .zfield import ThinPlateSpline2D, fit_thin_plate, mean_squared_spacing


@dataclass
class NNinvModel:
    net: MlpModel  # 2 -> decoder-shaped hiddens -> n, sigmoid output
    x_min: np.ndarray
    x_max: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray


def train_nninv(X_T: np.ndarray, Y_T: np.ndarray,
                hyper: LcipHyperparams | None = None) -> NNinvModel:
    """Supervised MSE regression from projection coords to data vectors,
    run with the same optimizer budget fields as the LCIP trainer."""
    hyper = hyper or LcipHyperparams()
    X_T = as_matrix(X_T, "X_T")
    Y_T = as_matrix(Y_T, "Y_T", cols=2)
    if X_T.shape[0] != Y_T.shape[0]:
        raise ValueError("train_nninv: X_T/Y_T row mismatch")
    rng = np.random.default_rng(hyper.seed)
    net = nn.init_mlp([2, *DEC_HIDDEN, X_T.shape[1]], "relu", "sigmoid", rng=rng)
    x_min, x_max = minmax_fit(X_T)
    y_mean, y_std = standardize_fit(Y_T)
    model = NNinvModel(net, x_min, x_max, y_mean, y_std)

    Xn = minmax_apply(X_T, x_min, x_max)
    Ys = standardize_apply(Y_T, y_mean, y_std)
    params = net.parameters()
    opt = nn.adam_init(params, hyper.learning_rate)
    shuffle = np.random.default_rng(hyper.seed + 1)
    n = Xn.shape[0]
    for _ in range(hyper.epochs):
        perm = shuffle.permutation(n)
        for start in range(0, n, hyper.batch_size):
            idx = perm[start:start + hyper.batch_size]
            out, tape = nn.forward(net, Ys[idx], train=True)
            loss, g = nn.mse_loss(out, Xn[idx])
            if not np.isfinite(loss):
                raise FloatingPointError(f"nninv training diverged: loss={loss}")
            grads, _ = nn.backward(tape, g)
            nn.adam_step(params, grads, opt)
    return model


def invert_nninv(model: NNinvModel, points: np.ndarray) -> np.ndarray:
    points = as_matrix(points, "points", cols=2)
    ys = standardize_apply(points, model.y_mean, model.y_std)
    u, _ = nn.forward(model.net, ys, train=False)
    return minmax_invert(u, model.x_min, model.x_max)


@dataclass
class RbfInverse:
    anchors_y: np.ndarray  # (N, 2) f32
    anchors_x: np.ndarray  # (N, n) f32
    smoothing: float
    tps: ThinPlateSpline2D


def fit_rbf_inverse(X_T: np.ndarray, Y_T: np.ndarray,
                    smoothing: float | None = None) -> RbfInverse:
    """Thin-plate interpolant from projection coords straight to data space."""
    X_T = as_matrix(X_T, "X_T")
    Y_T = as_matrix(Y_T, "Y_T", cols=2)
    if smoothing is None:
        smoothing = 1e-3 * mean_squared_spacing(Y_T)
    tps = fit_thin_plate(Y_T, X_T, smoothing=smoothing)
    return RbfInverse(Y_T, X_T, smoothing, tps)


def invert_rbf(model: RbfInverse, points: np.ndarray) -> np.ndarray:
    points = as_matrix(points, "points", cols=2)
    return model.tps(points).astype(np.float32)
