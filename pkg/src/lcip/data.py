"""Dataset ingestion, splits, synthetic blobs, PCA projection, normalization."""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .nn import as_matrix

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class FormatError(ValueError):
    """Malformed external file (bad magic, truncation, non-numeric cells)."""


@dataclass
class Dataset:
    X: np.ndarray  # (N, n) float32
    labels: np.ndarray | None = None  # (N,) int64
    Y: np.ndarray | None = None  # (N, 2) float32
    provenance: str = ""
    train_idx: np.ndarray | None = None
    test_idx: np.ndarray | None = None

    def __post_init__(self):
        n = self.X.shape[0]
        if self.labels is not None and self.labels.shape[0] != n:
            raise ValueError("labels row count mismatch")
        if self.Y is not None and self.Y.shape[0] != n:
            raise ValueError("projection row count mismatch")

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def n_dims(self) -> int:
        return self.X.shape[1]

    def _take(self, arr, idx):
        return None if arr is None else arr[idx]

    @property
    def X_train(self):
        return self.X[self.train_idx]

    @property
    def X_test(self):
        return self.X[self.test_idx]

    @property
    def Y_train(self):
        return self._take(self.Y, self.train_idx)

    @property
    def Y_test(self):
        return self._take(self.Y, self.test_idx)

    @property
    def labels_train(self):
        return self._take(self.labels, self.train_idx)

    @property
    def labels_test(self):
        return self._take(self.labels, self.test_idx)


def _read_be32(buf: bytes, offset: int, path: str) -> int:
    if offset + 4 > len(buf):
        raise FormatError(f"{path}: truncated header")
    return struct.unpack_from(">i", buf, offset)[0]


def load_idx(path_images: str, path_labels: str | None = None) -> Dataset:
    """Load IDX image (and optional label) files; pixels scaled to [0,1]."""
    with open(path_images, "rb") as f:
        buf = f.read()
    magic = _read_be32(buf, 0, path_images)
    if magic != IDX_IMAGE_MAGIC:
        raise FormatError(f"{path_images}: bad magic 0x{magic & 0xffffffff:08x}, "
                          f"expected 0x{IDX_IMAGE_MAGIC:08x}")
    count = _read_be32(buf, 4, path_images)
    rows = _read_be32(buf, 8, path_images)
    cols = _read_be32(buf, 12, path_images)
    expected = 16 + count * rows * cols
    if len(buf) < expected:
        raise FormatError(f"{path_images}: truncated payload "
                          f"({len(buf)} bytes, expected {expected})")
    pixels = np.frombuffer(buf, dtype=np.uint8, count=count * rows * cols, offset=16)
    X = (pixels.reshape(count, rows * cols).astype(np.float32)) / 255.0

    labels = None
    if path_labels is not None:
        with open(path_labels, "rb") as f:
            lbuf = f.read()
        lmagic = _read_be32(lbuf, 0, path_labels)
        if lmagic != IDX_LABEL_MAGIC:
            raise FormatError(f"{path_labels}: bad magic 0x{lmagic & 0xffffffff:08x}")
        lcount = _read_be32(lbuf, 4, path_labels)
        if lcount != count:
            raise FormatError(f"label count {lcount} != image count {count}")
        if len(lbuf) < 8 + lcount:
            raise FormatError(f"{path_labels}: truncated payload")
        labels = np.frombuffer(lbuf, dtype=np.uint8, count=lcount, offset=8).astype(np.int64)
    return Dataset(X=X, labels=labels, provenance=f"idx:{path_images}")


def _read_csv_rows(path: str) -> np.ndarray:
    with open(path) as f:
        first = f.readline()

    def numeric(line: str) -> bool:
        for cell in line.strip().split(","):
            try:
                float(cell)
            except ValueError:
                return False
        return bool(line.strip())

    skip = 0 if numeric(first) else 1
    try:
        arr = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2, dtype=np.float64)
    except ValueError as e:
        raise FormatError(f"{path}: non-numeric cell ({e})") from e
    return arr


def load_csv(path: str, has_labels: bool = False) -> Dataset:
    """Numeric CSV, one row per sample; with has_labels the last column holds
    integer class ids. A non-numeric first line is treated as a header."""
    arr = _read_csv_rows(path)
    labels = None
    if has_labels:
        if arr.shape[1] < 2:
            raise FormatError(f"{path}: need at least 2 columns with labels")
        labels = arr[:, -1].astype(np.int64)
        arr = arr[:, :-1]
    X = as_matrix(arr, name=path)
    return Dataset(X=X, labels=labels, provenance=f"csv:{path}")


def load_projection_csv(dataset: Dataset, path: str) -> Dataset:
    """Attach externally computed 2D coordinates to a dataset."""
    arr = _read_csv_rows(path)
    if arr.shape[1] != 2:
        raise FormatError(f"{path}: projection CSV must have 2 columns, got {arr.shape[1]}")
    if arr.shape[0] != dataset.n_samples:
        raise FormatError(f"{path}: {arr.shape[0]} rows vs {dataset.n_samples} samples")
    Y = as_matrix(arr, name=path, cols=2)
    return replace(dataset, Y=Y)


def save_csv(dataset: Dataset, path: str) -> None:
    cols = [dataset.X]
    if dataset.labels is not None:
        cols.append(dataset.labels[:, None].astype(np.float64))
    np.savetxt(path, np.hstack([np.asarray(c, dtype=np.float64) for c in cols]),
               delimiter=",", fmt="%.9g")


def save_projection_csv(Y: np.ndarray, path: str) -> None:
    np.savetxt(path, np.asarray(Y, dtype=np.float64), delimiter=",", fmt="%.9g")


def pca_fit(X: np.ndarray, out_dim: int = 2):
    """Mean-centered PCA; returns (mean, components (n,k), explained_fracs).

    Sign convention: the largest-magnitude loading of each component is made
    positive, so results are deterministic across eigensolver quirks.
    """
    X64 = np.asarray(X, dtype=np.float64)
    if X64.shape[0] < 2:
        raise ValueError("pca: need at least 2 samples")
    mean = X64.mean(axis=0)
    centered = X64 - mean
    total_var = centered.var(axis=0).sum()
    if total_var == 0:
        raise ValueError("pca: zero-variance data")
    # SVD of the centered matrix; right singular vectors are the axes
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:out_dim].T.copy()
    for k in range(comps.shape[1]):
        j = np.argmax(np.abs(comps[:, k]))
        if comps[j, k] < 0:
            comps[:, k] = -comps[:, k]
    explained = (s[:out_dim] ** 2) / (s**2).sum()
    return mean, comps, explained


def pca_project(X: np.ndarray, out_dim: int = 2) -> np.ndarray:
    mean, comps, _ = pca_fit(X, out_dim)
    Y = (np.asarray(X, dtype=np.float64) - mean) @ comps
    return Y.astype(np.float32)


def blob_centers(classes: int, dim: int, sigma: float) -> np.ndarray:
    """Cross-polytope vertices (+-c e_i) scaled to min pairwise distance 6*sigma.

    6 sigma keeps the nearest-center (Bayes) accuracy above 99%, so a trained
    classifier can clear a 95% bar; at 4 sigma the clusters overlap too much
    (Bayes accuracy ~93%).
    """
    if classes > 2 * dim:
        raise ValueError(f"at most {2 * dim} blob classes supported in {dim}D")
    c = 6.0 * sigma / np.sqrt(2.0)
    centers = np.zeros((classes, dim))
    for k in range(classes):
        axis, side = divmod(k, 2)
        centers[k, axis] = c if side == 0 else -c
    return centers


def make_blobs(classes: int = 6, dim: int = 3, per_class: int = 500,
               sigma: float = 1.0, seed: int = 7) -> Dataset:
    """Isotropic Gaussian clusters around cross-polytope centers; seeded."""
    rng = np.random.default_rng(seed)
    centers = blob_centers(classes, dim, sigma)
    X = np.empty((classes * per_class, dim), dtype=np.float32)
    labels = np.empty(classes * per_class, dtype=np.int64)
    for k in range(classes):
        sl = slice(k * per_class, (k + 1) * per_class)
        X[sl] = (centers[k] + sigma * rng.standard_normal((per_class, dim))).astype(np.float32)
        labels[sl] = k
    return Dataset(X=X, labels=labels,
                   provenance=f"blobs(classes={classes},dim={dim},per_class={per_class},"
                              f"sigma={sigma},seed={seed})")


def split(dataset: Dataset, train_n: int, test_n: int, seed: int = 0) -> Dataset:
    """Seeded shuffle into disjoint train/test index lists."""
    n = dataset.n_samples
    if train_n + test_n > n:
        raise ValueError(f"split: {train_n}+{test_n} exceeds {n} rows")
    perm = np.random.default_rng(seed).permutation(n)
    return replace(dataset, train_idx=perm[:train_n],
                   test_idx=perm[train_n:train_n + test_n])


# --- normalization -----------------------------------------------------------

def minmax_fit(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return X.min(axis=0).astype(np.float32), X.max(axis=0).astype(np.float32)


def minmax_apply(X: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Per-dimension min-max to [0,1]; constant dimensions map to 0.5."""
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    out = (X - lo) / safe
    return np.where(span > 0, out, 0.5).astype(np.float32)


def minmax_invert(U: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    span = hi - lo
    mid = (lo + hi) * 0.5
    out = lo + U * span
    return np.where(span > 0, out, mid).astype(np.float32)


def standardize_fit(Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = Y.mean(axis=0).astype(np.float32)
    std = Y.std(axis=0).astype(np.float32)
    std = np.where(std > 1e-8, std, 1.0).astype(np.float32)
    return mean, std


def standardize_apply(Y: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return ((Y - mean) / std).astype(np.float32)


def standardize_invert(S: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return (S * std + mean).astype(np.float32)
