"""Evaluation suite: inverse-projection MSE, disentanglement probe, gradient
maps, intrinsic-dimensionality maps, variance maps, difference maps, timing.

Map computations take a batch inverter ``invert(points (M,2)) -> (M,n)``;
``as_inverter`` adapts the model/baseline/session types to that surface.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import nn
from .baselines import NNinvModel, RbfInverse, invert_nninv, invert_rbf
from .data import standardize_apply, standardize_fit, standardize_invert
from .model import LcipModel, decode, encode, invert_fixed


@dataclass
class GridSpec:
    """Pixel grid over a projection-space rectangle; values live at pixel
    centers, row-major with the y index outermost (row 0 = lowest y)."""
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    width: int = 100
    height: int = 100

    def __post_init__(self):
        if self.width < 2 or self.height < 2:
            raise ValueError("grid resolution must be at least 2x2")
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError("grid bounds must be non-degenerate")

    @classmethod
    def from_points(cls, Y: np.ndarray, width: int = 100, height: int = 100,
                    margin: float = 0.05) -> "GridSpec":
        Y = np.asarray(Y)
        lo, hi = Y.min(axis=0), Y.max(axis=0)
        pad = (hi - lo) * margin
        return cls(float(lo[0] - pad[0]), float(hi[0] + pad[0]),
                   float(lo[1] - pad[1]), float(hi[1] + pad[1]), width, height)

    @property
    def pitch(self) -> tuple[float, float]:
        return ((self.x_max - self.x_min) / self.width,
                (self.y_max - self.y_min) / self.height)

    def points(self) -> np.ndarray:
        """All pixel centers, shape (height*width, 2) float32."""
        hx, hy = self.pitch
        xs = self.x_min + (np.arange(self.width) + 0.5) * hx
        ys = self.y_min + (np.arange(self.height) + 0.5) * hy
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx.ravel(), gy.ravel()], axis=1).astype(np.float32)


@dataclass
class ScalarMap:
    grid: GridSpec
    values: np.ndarray  # (height, width) float64, finite everywhere
    mask: np.ndarray  # (height, width) bool, True where defined

    def __post_init__(self):
        if self.values.shape != (self.grid.height, self.grid.width):
            raise ValueError("value shape does not match grid resolution")
        if not np.isfinite(self.values[self.mask]).all():
            raise ValueError("defined map values must be finite")

    @property
    def stats(self) -> dict:
        vals = self.values[self.mask]
        return {"min": float(vals.min()), "max": float(vals.max()),
                "mean": float(vals.mean()), "defined": int(self.mask.sum())}


def as_inverter(obj):
    """Adapt a model/baseline/session/callable to ``points -> data vectors``."""
    from .control import ControlSession, invert_controlled
    if isinstance(obj, LcipModel):
        return lambda p: invert_fixed(obj, p)
    if isinstance(obj, NNinvModel):
        return lambda p: invert_nninv(obj, p)
    if isinstance(obj, RbfInverse):
        return lambda p: invert_rbf(obj, p)
    if isinstance(obj, ControlSession):
        return lambda p: invert_controlled(obj, p)
    if callable(obj):
        return obj
    raise TypeError(f"no inverter adapter for {type(obj)!r}")


# --- inverse-projection error -------------------------------------------------

def inverse_mse(invert, X_v: np.ndarray, Y_v: np.ndarray) -> float:
    """Mean over test pairs of the squared Euclidean reconstruction error."""
    X_v = np.asarray(X_v, dtype=np.float32)
    Y_v = np.asarray(Y_v, dtype=np.float32)
    if X_v.shape[0] == 0:
        raise ValueError("inverse_mse: empty test set")
    q = as_inverter(invert)(Y_v)
    diff = q.astype(np.float64) - X_v
    return float(np.mean((diff * diff).sum(axis=1)))


def lcip_star_mse(model: LcipModel, X_v: np.ndarray, Y_v: np.ndarray) -> float:
    """Inverse MSE in the exact-code mode: z = Enc(x) instead of interpolated."""
    if np.asarray(X_v).shape[0] == 0:
        raise ValueError("lcip_star_mse: empty test set")
    q = decode(model, Y_v, encode(model, X_v))
    diff = q.astype(np.float64) - np.asarray(X_v, dtype=np.float64)
    return float(np.mean((diff * diff).sum(axis=1)))


# --- disentanglement probe ----------------------------------------------------

def disentanglement_probe(Z_T, Y_T, Z_v, Y_v, epochs: int = 200,
                          batch_size: int = 128, seed: int = 0,
                          hidden: int = 100) -> tuple[float, float]:
    """Train a one-hidden-layer regression probe Z -> Y; report hold-out
    (MSE, R^2). MSE is the mean squared Euclidean error in raw projection
    units; R^2 is computed per axis and averaged."""
    Z_T = np.asarray(Z_T, dtype=np.float32)
    Y_T = np.asarray(Y_T, dtype=np.float32)
    Z_v = np.asarray(Z_v, dtype=np.float32)
    Y_v = np.asarray(Y_v, dtype=np.float32)
    var = Y_v.var(axis=0)
    if np.any(var <= 0):
        raise ValueError("disentanglement_probe: degenerate Y variance")

    mean, std = standardize_fit(Y_T)
    Ys = standardize_apply(Y_T, mean, std)
    rng = np.random.default_rng(seed)
    probe = nn.init_mlp([Z_T.shape[1], hidden, Y_T.shape[1]], "relu", "identity",
                        rng=rng)
    params = probe.parameters()
    opt = nn.adam_init(params, 0.001)
    n = Z_T.shape[0]
    for _ in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = perm[start:start + batch_size]
            out, tape = nn.forward(probe, Z_T[idx], train=True)
            _, g = nn.mse_loss(out, Ys[idx])
            grads, _ = nn.backward(tape, g)
            nn.adam_step(params, grads, opt)

    pred_s, _ = nn.forward(probe, Z_v, train=False)
    pred = standardize_invert(pred_s, mean, std).astype(np.float64)
    diff = pred - Y_v
    mse = float(np.mean((diff * diff).sum(axis=1)))
    ss_res = (diff * diff).sum(axis=0)
    ss_tot = ((Y_v - Y_v.mean(axis=0)) ** 2).sum(axis=0)
    r2 = float(np.mean(1.0 - ss_res / ss_tot))
    return mse, r2


# --- gradient map ---------------------------------------------------------------

def gradient_map(invert, grid: GridSpec) -> ScalarMap:
    """Frobenius norm of the finite-difference Jacobian at every pixel.

    The step is one pixel pitch: central differences between neighbor pixels,
    one-sided at the borders.
    """
    q = as_inverter(invert)(grid.points()).astype(np.float64)
    q = q.reshape(grid.height, grid.width, -1)
    hx, hy = grid.pitch
    dqy, dqx = np.gradient(q, hy, hx, axis=(0, 1))
    norms = np.sqrt((dqx * dqx).sum(axis=2) + (dqy * dqy).sum(axis=2))
    return ScalarMap(grid, norms, np.ones_like(norms, dtype=bool))


# --- intrinsic dimensionality ---------------------------------------------------

def max_pairwise_distance(Q: np.ndarray, exact_limit: int = 16384) -> float:
    """Data-set diameter; exact (chunked) up to exact_limit points, otherwise
    iterated farthest-point search from several deterministic starts."""
    Q = np.asarray(Q, dtype=np.float64)
    n = Q.shape[0]
    if n <= exact_limit:
        best = 0.0
        step = max(1, int(2**25 // max(n, 1)))
        for s in range(0, n, step):
            block = Q[s:s + step]
            d2 = ((block[:, None] - Q[None]) ** 2).sum(-1)
            best = max(best, float(d2.max()))
        return float(np.sqrt(best))
    best = 0.0
    starts = np.linspace(0, n - 1, 8, dtype=int)
    for s in starts:
        a = Q[s]
        for _ in range(4):
            d2 = ((Q - a) ** 2).sum(axis=1)
            j = int(d2.argmax())
            best = max(best, float(d2[j]))
            a = Q[j]
    return float(np.sqrt(best))


def _neighborhood_id(points: np.ndarray, theta: float) -> int:
    """Count principal directions holding at least a theta fraction of the
    neighborhood's total variance."""
    m, d = points.shape
    centered = points - points.mean(axis=0)
    if m >= d:
        cov = centered.T @ centered / m
        eig = np.linalg.eigvalsh(cov)
    else:
        s = np.linalg.svd(centered, compute_uv=False)
        eig = (s * s) / m
    total = eig.sum()
    if total <= 0:
        return 0
    return int(np.sum(eig / total >= theta))


def id_map(invert, grid: GridSpec, theta: float = 0.05, sweep_batches=None,
           r_scale: float = 0.1) -> tuple[ScalarMap, float]:
    """Per-pixel intrinsic dimensionality of the inverse projection.

    The grid's fixed inverses anchor each query; the neighborhood set is the
    fixed inverses alone, or the union of all sweep batches when given (the
    controlled-sweep protocol). Pixels with fewer than 3 neighbors inside the
    fixed radius are masked out. Returns (map, mean over defined pixels).
    """
    q0 = as_inverter(invert)(grid.points()).astype(np.float64)
    if sweep_batches is not None:
        Q = np.vstack([np.asarray(b, dtype=np.float64) for b in sweep_batches])
    else:
        Q = q0
    r = r_scale * max_pairwise_distance(Q)
    tree = cKDTree(Q)
    neighbor_lists = tree.query_ball_point(q0, r, workers=-1)
    values = np.zeros(q0.shape[0])
    mask = np.zeros(q0.shape[0], dtype=bool)
    for i, neighbors in enumerate(neighbor_lists):
        if len(neighbors) < 3:
            continue
        values[i] = _neighborhood_id(Q[neighbors], theta)
        mask[i] = True
    vmap = ScalarMap(grid, values.reshape(grid.height, grid.width),
                     mask.reshape(grid.height, grid.width))
    mean_id = float(values[mask].mean()) if mask.any() else float("nan")
    return vmap, mean_id


# --- variance map ---------------------------------------------------------------

def variance_map(model: LcipModel, Z_T: np.ndarray, X_T: np.ndarray,
                 grid: GridSpec, max_anchors: int = 512,
                 seed: int = 0) -> ScalarMap:
    """Sensitivity of the inverse projection to swapping in different anchor
    codes: per pixel, total (population) variance of Dec(p, z_i) over anchors,
    normalized by the training set's total variance.

    Anchors are subsampled deterministically beyond max_anchors; the full
    anchor set at paper resolution is GPU-scale work.
    """
    X_T = np.asarray(X_T, dtype=np.float64)
    denom = X_T.var(axis=0).sum()
    if denom <= 0:
        raise ValueError("variance_map: training set has zero variance")
    Z = np.asarray(Z_T, dtype=np.float32)
    if Z.shape[0] > max_anchors:
        sel = np.random.default_rng(seed).choice(Z.shape[0], max_anchors, replace=False)
        Z = Z[sel]
    m = Z.shape[0]
    pts = grid.points()
    values = np.empty(pts.shape[0])
    chunk = max(1, 8192 // m)
    for start in range(0, pts.shape[0], chunk):
        block = pts[start:start + chunk]
        rep_p = np.repeat(block, m, axis=0)
        rep_z = np.tile(Z, (block.shape[0], 1))
        out = decode(model, rep_p, rep_z).astype(np.float64)
        out = out.reshape(block.shape[0], m, -1)
        values[start:start + chunk] = out.var(axis=1).sum(axis=1) / denom
    return ScalarMap(grid, values.reshape(grid.height, grid.width),
                     np.ones((grid.height, grid.width), dtype=bool))


# --- difference map (controlled vs fixed) ---------------------------------------

def difference_map(invert_a, invert_b, grid: GridSpec) -> ScalarMap:
    """Per-pixel distance between two inverse projections (e.g. with and
    without control), the smoothness-under-control picture."""
    qa = as_inverter(invert_a)(grid.points()).astype(np.float64)
    qb = as_inverter(invert_b)(grid.points()).astype(np.float64)
    d = np.linalg.norm(qa - qb, axis=1).reshape(grid.height, grid.width)
    return ScalarMap(grid, d, np.ones_like(d, dtype=bool))


# --- timing ----------------------------------------------------------------------

def timing_curve(train_fn, sample_counts, point_sampler) -> list[dict]:
    """Train once, then time inference at each count; rows of
    {count, train_seconds, infer_seconds, total_seconds}."""
    t0 = time.perf_counter()
    invert = as_inverter(train_fn())
    train_s = time.perf_counter() - t0
    rows = []
    for count in sample_counts:
        pts = point_sampler(int(count))
        t1 = time.perf_counter()
        if len(pts):
            invert(pts)
        infer_s = time.perf_counter() - t1
        rows.append({"count": int(count), "train_seconds": train_s,
                     "infer_seconds": infer_s,
                     "total_seconds": train_s + infer_s})
    return rows


def timing_to_csv(rows: list[dict], path: str) -> None:
    with open(path, "w") as f:
        f.write("count,train_seconds,infer_seconds,total_seconds\n")
        for r in rows:
            f.write(f"{r['count']},{r['train_seconds']:.6f},"
                    f"{r['infer_seconds']:.6f},{r['total_seconds']:.6f}\n")


# --- map export -------------------------------------------------------------------

def scalar_map_to_csv(smap: ScalarMap, path: str) -> None:
    """Row-per-pixel-row CSV; undefined pixels export as empty cells."""
    with open(path, "w") as f:
        for j in range(smap.grid.height):
            cells = [f"{smap.values[j, i]:.9g}" if smap.mask[j, i] else ""
                     for i in range(smap.grid.width)]
            f.write(",".join(cells) + "\n")


def scalar_map_to_pgm(smap: ScalarMap, path: str) -> None:
    """8-bit binary PGM (top row = highest y) with min/max sidecar JSON."""
    stats = smap.stats
    lo, hi = stats["min"], stats["max"]
    span = (hi - lo) or 1.0
    scaled = np.clip((smap.values - lo) / span * 255.0, 0, 255)
    raster = np.where(smap.mask, scaled, 0.0).astype(np.uint8)[::-1]
    with open(path, "wb") as f:
        f.write(f"P5\n{smap.grid.width} {smap.grid.height}\n255\n".encode())
        f.write(raster.tobytes())
    sidecar = {"min": lo, "max": hi, "mean": stats["mean"],
               "width": smap.grid.width, "height": smap.grid.height,
               "undefined_pixels": int((~smap.mask).sum()),
               "orientation": "top_row_is_max_y"}
    with open(path + ".json", "w") as f:
        json.dump(sidecar, f, indent=1)
