"""Latent-code field over the 2D projection plane.

Interpolates the training anchors {(y_i, z_i)} at arbitrary 2D points with
either weighted k-nearest-neighbors or a smoothed thin-plate-spline RBF.
The thin-plate machinery is generic over output dimension, so it also backs
the direct RBF inverse-projection baseline (2D -> n).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

KNN_EPS = 1e-8  # inverse-distance weight floor
_CHUNK = 2048  # query rows per distance-matrix block


def _tps_kernel(r2: np.ndarray) -> np.ndarray:
    # phi(r) = r^2 log r = 0.5 * r^2 * log(r^2); 0 at r = 0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 0.5 * r2 * np.log(r2)
    return np.where(r2 > 0, out, 0.0)


def mean_squared_spacing(points: np.ndarray) -> float:
    """Mean over pairs of ||a-b||^2, via 2N/(N-1) * mean||a-mean||^2."""
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    if n < 2:
        return 1.0
    dev = pts - pts.mean(axis=0)
    return float(2.0 * n / (n - 1) * np.mean((dev * dev).sum(axis=1)))


@dataclass
class ThinPlateSpline2D:
    """Fitted thin-plate interpolant mapping R^2 -> R^m."""
    centers: np.ndarray  # (N, 2) f64
    weights: np.ndarray  # (N, m) f64
    affine: np.ndarray  # (3, m) f64, rows: const, x, y
    smoothing: float = 0.0

    def __call__(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        out = np.empty((p.shape[0], self.weights.shape[1]))
        for start in range(0, p.shape[0], _CHUNK):
            block = p[start:start + _CHUNK]
            g = _tps_kernel(cdist(block, self.centers, "sqeuclidean"))
            out[start:start + _CHUNK] = (
                g @ self.weights
                + self.affine[0] + block[:, :1] * self.affine[1] + block[:, 1:2] * self.affine[2]
            )
        return out


def _dedupe_average(points: np.ndarray, values: np.ndarray):
    uniq, inverse = np.unique(points, axis=0, return_inverse=True)
    if uniq.shape[0] == points.shape[0]:
        return points, values
    summed = np.zeros((uniq.shape[0], values.shape[1]))
    counts = np.zeros(uniq.shape[0])
    np.add.at(summed, inverse, values)
    np.add.at(counts, inverse, 1.0)
    return uniq, summed / counts[:, None]


def fit_thin_plate(points: np.ndarray, values: np.ndarray, smoothing: float = 0.0,
                   residual_tol: float = 1e-5) -> ThinPlateSpline2D:
    """Solve the bordered thin-plate system with a ridge term on the kernel
    diagonal; duplicate sites are first merged by averaging."""
    pts = np.asarray(points, dtype=np.float64)
    vals = np.atleast_2d(np.asarray(values, dtype=np.float64))
    if vals.shape[0] != pts.shape[0]:
        raise ValueError("fit_thin_plate: point/value row mismatch")
    if smoothing == 0.0:
        pts, vals = _dedupe_average(pts, vals)
    n = pts.shape[0]
    if n < 3:
        raise ValueError("fit_thin_plate: need at least 3 anchor sites")
    poly = np.hstack([np.ones((n, 1)), pts])
    scale = max(float(np.abs(pts).max()), 1.0)
    if np.linalg.matrix_rank(poly / scale, tol=1e-9) < 3:
        raise ValueError("fit_thin_plate: anchors are collinear; system singular")
    k = _tps_kernel(cdist(pts, pts, "sqeuclidean"))
    k[np.diag_indices(n)] += smoothing
    p = np.hstack([np.ones((n, 1)), pts])
    lhs = np.block([[k, p], [p.T, np.zeros((3, 3))]])
    rhs = np.vstack([vals, np.zeros((3, vals.shape[1]))])
    try:
        sol = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError as e:
        raise ValueError(f"fit_thin_plate: singular system ({e}); "
                         "anchors likely collinear") from e
    residual = np.abs(lhs @ sol - rhs).max()
    if not np.isfinite(residual) or (smoothing == 0.0 and residual > residual_tol):
        raise ValueError(f"fit_thin_plate: solve residual {residual:.3g} too large")
    return ThinPlateSpline2D(centers=pts, weights=sol[:n], affine=sol[n:],
                             smoothing=smoothing)


@dataclass
class ZField:
    """Anchors plus a fitted interpolator answering z at any 2D point."""
    anchors_y: np.ndarray  # (N, 2) f32
    anchors_z: np.ndarray  # (N, z_dim) f32
    method: str = "rbf"  # "rbf" | "knn"
    k: int = 10
    smoothing: float = 0.0
    tps: ThinPlateSpline2D | None = field(default=None, repr=False)

    @property
    def z_dim(self) -> int:
        return self.anchors_z.shape[1]


def fit(Y: np.ndarray, Z: np.ndarray, method: str = "rbf", k: int = 10,
        smoothing: float | None = None) -> ZField:
    """Build the z-field. smoothing=None picks 1e-3 x mean squared anchor
    spacing for rbf; pass 0.0 for exact interpolation."""
    Y = np.ascontiguousarray(Y, dtype=np.float32)
    Z = np.ascontiguousarray(Z, dtype=np.float32)
    if Y.ndim != 2 or Y.shape[1] != 2:
        raise ValueError("fit: Y must be (N, 2)")
    if Z.shape[0] != Y.shape[0]:
        raise ValueError("fit: Y/Z row mismatch")
    if method == "knn":
        if Y.shape[0] < k:
            raise ValueError(f"fit: need at least k={k} anchors")
        return ZField(Y, Z, "knn", k=k)
    if method == "rbf":
        if smoothing is None:
            smoothing = 1e-3 * mean_squared_spacing(Y)
        tps = fit_thin_plate(Y, Z, smoothing=smoothing)
        return ZField(Y, Z, "rbf", smoothing=smoothing, tps=tps)
    raise ValueError(f"fit: unknown method {method!r}")


def knn_select(field: ZField, points: np.ndarray):
    """k nearest anchors per query: (indices (M,k), weights (M,k)).

    Ties on the kth distance break toward the lowest anchor index (stable
    sort). An exact hit (distance 0) takes all the weight.
    """
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    d = cdist(p, np.asarray(field.anchors_y, dtype=np.float64))
    order = np.argsort(d, axis=1, kind="stable")[:, :field.k]
    dsel = np.take_along_axis(d, order, axis=1)
    w = 1.0 / (dsel + KNN_EPS)
    exact = dsel == 0.0
    hit_rows = exact.any(axis=1)
    if hit_rows.any():
        w[hit_rows] = 0.0
        first_hit = exact[hit_rows].argmax(axis=1)
        w[hit_rows, first_hit] = 1.0
    w /= w.sum(axis=1, keepdims=True)
    return order, w


def query_many(field: ZField, points: np.ndarray) -> np.ndarray:
    """z estimates at a batch of 2D points, (M, z_dim) float32."""
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if field.method == "knn":
        out = np.empty((p.shape[0], field.z_dim))
        z = np.asarray(field.anchors_z, dtype=np.float64)
        for start in range(0, p.shape[0], _CHUNK):
            idx, w = knn_select(field, p[start:start + _CHUNK])
            out[start:start + _CHUNK] = (z[idx] * w[..., None]).sum(axis=1)
        return out.astype(np.float32)
    if field.tps is None:
        raise ValueError("query: rbf field not fitted")
    return field.tps(p).astype(np.float32)


def query(field: ZField, point) -> np.ndarray:
    """z at a single 2D point, shape (z_dim,)."""
    return query_many(field, np.asarray(point, dtype=np.float64).reshape(1, 2))[0]
