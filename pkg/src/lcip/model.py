"""Encoder/decoder/discriminator assembly and the adversarial training loop.

The encoder compresses each sample into a latent code z holding what the 2D
projection loses; the decoder maps (projection coords, z) back to data space;
the discriminator tries to predict the projection coords from z alone, and
the encoder is trained to defeat it, which disentangles z from the coords.
Per batch the discriminator takes ``dis_steps_per_iter`` Adam steps, then the
encoder+decoder take one joint step on J = L_rec - lambda * L_adv.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data import (minmax_apply, minmax_fit, minmax_invert, standardize_apply,
                   standardize_fit)
from .nn import MlpModel, as_matrix
from .zfield import ZField

ENC_HIDDEN = (512, 256, 128)
DEC_HIDDEN = (128, 256, 512, 1024)
DIS_HIDDEN = (128, 128)


@dataclass
class LcipHyperparams:
    z_dim: int = 16
    lam: float = 0.1  # reconstruction-vs-adversarial balance
    learning_rate: float = 0.001
    dis_steps_per_iter: int = 5
    batch_size: int = 128
    epochs: int = 200
    seed: int = 7
    use_adversarial: bool = True  # False trains the NoDis ablation

    def __post_init__(self):
        if self.z_dim < 1:
            raise ValueError("z_dim must be >= 1")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.dis_steps_per_iter < 1:
            raise ValueError("dis_steps_per_iter must be >= 1")


@dataclass
class TrainReport:
    l_rec: list[float] = field(default_factory=list)
    l_adv: list[float] = field(default_factory=list)
    j: list[float] = field(default_factory=list)
    dis_loss: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    final_test_l_rec: float | None = None


@dataclass
class LcipModel:
    enc: MlpModel
    dec: MlpModel
    dis: MlpModel
    x_min: np.ndarray
    x_max: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray
    hyper: LcipHyperparams
    zfield: ZField | None = None

    @property
    def n_dims(self) -> int:
        return self.enc.in_dim

    @property
    def z_dim(self) -> int:
        return self.enc.out_dim


def initialize(X_T: np.ndarray, Y_T: np.ndarray, hyper: LcipHyperparams) -> LcipModel:
    """Untrained model with normalization statistics fitted on the training set."""
    X_T = as_matrix(X_T, "X_T")
    Y_T = as_matrix(Y_T, "Y_T", cols=2)
    if X_T.shape[0] != Y_T.shape[0]:
        raise ValueError("train: X_T/Y_T row mismatch")
    n = X_T.shape[1]
    rng = np.random.default_rng(hyper.seed)
    enc = nn.init_mlp([n, *ENC_HIDDEN, hyper.z_dim], "relu", "identity", rng=rng)
    dec = nn.init_mlp([2 + hyper.z_dim, *DEC_HIDDEN, n], "relu", "sigmoid", rng=rng)
    dis = nn.init_mlp([hyper.z_dim, *DIS_HIDDEN, 2], "relu", "identity",
                      batch_norm=True, rng=rng)
    x_min, x_max = minmax_fit(X_T)
    y_mean, y_std = standardize_fit(Y_T)
    return LcipModel(enc, dec, dis, x_min, x_max, y_mean, y_std, hyper)


def encode(model: LcipModel, X: np.ndarray) -> np.ndarray:
    """Latent codes for raw data-space samples."""
    X = as_matrix(X, "X", cols=model.n_dims)
    Xn = minmax_apply(X, model.x_min, model.x_max)
    z, _ = nn.forward(model.enc, Xn, train=False)
    return z


def decode(model: LcipModel, Y: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Inverse projection of (projection coords, latent codes) to data units."""
    Y = as_matrix(Y, "Y", cols=2)
    Z = as_matrix(Z, "Z", cols=model.z_dim)
    if Y.shape[0] != Z.shape[0]:
        raise ValueError("decode: Y/Z row mismatch")
    Ys = standardize_apply(Y, model.y_mean, model.y_std)
    u, _ = nn.forward(model.dec, np.hstack([Ys, Z]), train=False)
    return minmax_invert(u, model.x_min, model.x_max)


def train(X_T: np.ndarray, Y_T: np.ndarray, hyper: LcipHyperparams | None = None,
          X_v: np.ndarray | None = None, Y_v: np.ndarray | None = None,
          ) -> tuple[LcipModel, TrainReport]:
    """Adversarial training per the 5:1 schedule; returns model and loss series.

    When hyper.use_adversarial is False (or lambda is 0) the encoder/decoder
    update is plain reconstruction training; the discriminator is still
    stepped on the same schedule so runs stay bitwise comparable.
    """
    hyper = hyper or LcipHyperparams()
    model = initialize(X_T, Y_T, hyper)
    X_T = as_matrix(X_T, "X_T")
    Y_T = as_matrix(Y_T, "Y_T", cols=2)
    Xn = minmax_apply(X_T, model.x_min, model.x_max)
    Ys = standardize_apply(Y_T, model.y_mean, model.y_std)

    adversarial = hyper.use_adversarial and hyper.lam != 0.0
    lam = np.float32(hyper.lam)
    dis_params = model.dis.parameters()
    encdec_params = model.enc.parameters() + model.dec.parameters()
    dis_opt = nn.adam_init(dis_params, hyper.learning_rate)
    encdec_opt = nn.adam_init(encdec_params, hyper.learning_rate)
    n_enc_params = len(model.enc.parameters())

    rng = np.random.default_rng(hyper.seed + 1)
    n = Xn.shape[0]
    report = TrainReport()
    for _ in range(hyper.epochs):
        t0 = time.perf_counter()
        perm = rng.permutation(n)
        sums = np.zeros(4)
        batches = 0
        for start in range(0, n, hyper.batch_size):
            idx = perm[start:start + hyper.batch_size]
            if idx.size < 2:
                continue  # batch norm needs batch statistics
            xb, yb = Xn[idx], Ys[idx]

            # discriminator phase: Enc frozen, Dis in train mode
            zb, _ = nn.forward(model.enc, xb, train=False)
            dis_loss = 0.0
            for _ in range(hyper.dis_steps_per_iter):
                yp, dis_tape = nn.forward(model.dis, zb, train=True)
                dis_loss, g = nn.mse_loss(yp, yb)
                dgrads, _ = nn.backward(dis_tape, g)
                nn.adam_step(dis_params, dgrads, dis_opt)

            # joint encoder/decoder phase: Dis frozen (eval-mode batch norm)
            zb, enc_tape = nn.forward(model.enc, xb, train=True)
            xr, dec_tape = nn.forward(model.dec, np.hstack([yb, zb]), train=True)
            l_rec, gx = nn.mse_loss(xr, xb)
            dec_grads, d_dec_in = nn.backward(dec_tape, gx)
            dz = d_dec_in[:, 2:]
            l_adv = 0.0
            if adversarial:
                # batch-statistics mode: scale changes in z cannot game the
                # frozen Dis via stale running stats (params still frozen)
                ya, adv_tape = nn.forward(model.dis, zb, train=True)
                l_adv, gy = nn.mse_loss(ya, yb)
                _, dz_adv = nn.backward(adv_tape, -lam * gy, param_grads=False)
                dz = dz + dz_adv
            enc_grads, _ = nn.backward(enc_tape, dz)
            nn.adam_step(encdec_params, enc_grads + dec_grads, encdec_opt)

            j = l_rec - hyper.lam * l_adv
            if not np.isfinite(j) or not np.isfinite(dis_loss):
                raise FloatingPointError(
                    f"training diverged: L_rec={l_rec}, L_adv={l_adv}, Dis={dis_loss}")
            sums += (l_rec, l_adv, j, dis_loss)
            batches += 1
        means = sums / max(batches, 1)
        report.l_rec.append(float(means[0]))
        report.l_adv.append(float(means[1]))
        report.j.append(float(means[2]))
        report.dis_loss.append(float(means[3]))
        report.epoch_seconds.append(time.perf_counter() - t0)

    if X_v is not None and Y_v is not None and len(X_v):
        xr = decode(model, Y_v, encode(model, X_v))
        xn_v = minmax_apply(as_matrix(X_v), model.x_min, model.x_max)
        xr_n = minmax_apply(xr, model.x_min, model.x_max)
        report.final_test_l_rec = nn.mse_loss(xr_n, xn_v)[0]
    return model, report


def fit_zfield(model: LcipModel, X_T: np.ndarray, Y_T: np.ndarray,
               method: str = "rbf", k: int = 10,
               smoothing: float | None = None) -> ZField:
    """Fit the latent-code field on the training anchors and attach it."""
    from . import zfield as zf
    Z_T = encode(model, X_T)
    field = zf.fit(as_matrix(Y_T, "Y_T", cols=2), Z_T, method=method, k=k,
                   smoothing=smoothing)
    model.zfield = field
    return field


def invert_fixed(model: LcipModel, points: np.ndarray) -> np.ndarray:
    """Uncontrolled inverse projection: decode with the interpolated z-field."""
    from . import zfield as zf
    if model.zfield is None:
        raise ValueError("invert_fixed: model has no fitted zfield")
    points = as_matrix(points, "points", cols=2)
    z = zf.query_many(model.zfield, points)
    return decode(model, points, z)
