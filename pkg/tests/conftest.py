"""Shared fixtures for the test suite.

Trained models used by the acceptance criteria are cached as checkpoints
under tests/.cache so reruns are fast; builders record their wall-clock cost
in a sidecar JSON, which the runtime-budget assertions read. Delete the
cache directory to force a cold, fully honest rebuild.
"""

import json
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lcip import baselines, checkpoint, data, decision_map, model  # noqa: E402

CACHE = Path(__file__).parent / ".cache"

# desk-scale protocol constants (see notes in the decisions ledger);
# z_dim 3 for blobs: the adversarial scrub rate is set by the pinned Adam
# learning rate, so fewer latent directions to clean is the one honest
# accelerator; 16 stays the package default
BLOB_HYPER = dict(z_dim=3, lam=2.0, epochs=320, batch_size=128)
BLOB_NODIS_EPOCHS = 60
BLOB_TRAIN_N, BLOB_TEST_N = 1000, 500
DIGITS_HYPER = dict(z_dim=16, lam=0.1, epochs=55, batch_size=128)
DIGITS_NODIS_EPOCHS = 25
DIGITS_TRAIN_N, DIGITS_TEST_N = 2500, 2500
ACCEPTANCE_SEEDS = (7, 13, 42)


def cfg_key(**kw) -> str:
    import hashlib
    blob = json.dumps(kw, sort_keys=True).encode()
    return hashlib.md5(blob).hexdigest()[:8]


def cache_path(name: str, suffix: str = ".lcip") -> Path:
    CACHE.mkdir(exist_ok=True)
    return CACHE / f"{name}{suffix}"


def record_build_seconds(name: str, seconds: float) -> None:
    meta = cache_path(name, ".json")
    meta.write_text(json.dumps({"build_seconds": seconds}))


def build_seconds(name: str) -> float:
    meta = cache_path(name, ".json")
    return json.loads(meta.read_text())["build_seconds"]


def cached_checkpoint(name: str, builder):
    """Round-tripped checkpoint cache: always returns the loaded form so
    cached and fresh runs see identical float32 tensors."""
    path = cache_path(name)
    if path.exists():
        try:
            return checkpoint.load_checkpoint(str(path))
        except checkpoint.CheckpointError:
            path.unlink()
    t0 = time.perf_counter()
    obj = builder()
    record_build_seconds(name, time.perf_counter() - t0)
    checkpoint.save_checkpoint(obj, str(path))
    return checkpoint.load_checkpoint(str(path))


@pytest.fixture(scope="session")
def blob_base():
    ds = data.make_blobs(6, 3, 500, seed=7)
    Y = data.pca_project(ds.X)
    return data.Dataset(X=ds.X, labels=ds.labels, Y=Y, provenance=ds.provenance)


def blob_split(blob_base, seed: int) -> data.Dataset:
    return data.split(blob_base, BLOB_TRAIN_N, BLOB_TEST_N, seed=seed)


@pytest.fixture(scope="session")
def digits_base():
    """784-dim digit images with imported t-SNE coords (CSV import path)."""
    from desk_datasets import compute_tsne, load_desk_digits
    x_path = cache_path("digits_X_seed7", ".npy")
    l_path = cache_path("digits_labels_seed7", ".npy")
    csv_path = cache_path("digits_tsne_seed7", ".csv")
    if not (x_path.exists() and csv_path.exists()):
        t0 = time.perf_counter()
        ds = load_desk_digits(5000, seed=7)
        np.save(x_path, ds.X)
        np.save(l_path, ds.labels)
        data.save_projection_csv(compute_tsne(ds.X, seed=7), str(csv_path))
        record_build_seconds("digits_tsne_seed7", time.perf_counter() - t0)
    ds = data.Dataset(X=np.load(x_path), labels=np.load(l_path),
                      provenance="desk-digits")
    return data.load_projection_csv(ds, str(csv_path))


def digits_split(digits_base, seed: int) -> data.Dataset:
    return data.split(digits_base, DIGITS_TRAIN_N, DIGITS_TEST_N, seed=seed)


def build_blob_lcip(ds: data.Dataset, seed: int, lam: float, epochs: int):
    hyper = model.LcipHyperparams(lam=lam, epochs=epochs, seed=seed,
                                  **{k: v for k, v in BLOB_HYPER.items()
                                     if k not in ("lam", "epochs")})
    m, _ = model.train(ds.X_train, ds.Y_train, hyper)
    model.fit_zfield(m, ds.X_train, ds.Y_train, method="rbf")
    return m


def build_digits_lcip(ds: data.Dataset, seed: int, lam: float, epochs: int):
    hyper = model.LcipHyperparams(lam=lam, epochs=epochs, seed=seed,
                                  **{k: v for k, v in DIGITS_HYPER.items()
                                     if k not in ("lam", "epochs")})
    m, _ = model.train(ds.X_train, ds.Y_train, hyper)
    model.fit_zfield(m, ds.X_train, ds.Y_train, method="rbf")
    return m


@pytest.fixture(scope="session")
def blob_model(blob_base):
    """The trained blob model (WithDis, seed 7) shared across criteria."""
    ds = blob_split(blob_base, 7)
    name = f"blob_withdis_s7_{cfg_key(**BLOB_HYPER)}"
    m = cached_checkpoint(name, lambda: build_blob_lcip(
        ds, 7, BLOB_HYPER["lam"], BLOB_HYPER["epochs"]))
    return m, ds


@pytest.fixture(scope="session")
def blob_nninv(blob_base):
    ds = blob_split(blob_base, 7)
    hyper = model.LcipHyperparams(seed=7, **BLOB_HYPER)

    def build():
        return baselines.train_nninv(ds.X_train, ds.Y_train, hyper)

    return cached_checkpoint(f"blob_nninv_s7_{cfg_key(**BLOB_HYPER)}", build), ds


@pytest.fixture(scope="session")
def digits_model(digits_base):
    ds = digits_split(digits_base, 7)
    name = f"digits_withdis_s7_{cfg_key(**DIGITS_HYPER)}"
    m = cached_checkpoint(name, lambda: build_digits_lcip(
        ds, 7, DIGITS_HYPER["lam"], DIGITS_HYPER["epochs"]))
    return m, ds


@pytest.fixture(scope="session")
def digits_nninv(digits_base):
    ds = digits_split(digits_base, 7)
    hyper = model.LcipHyperparams(seed=7, **DIGITS_HYPER)

    def build():
        return baselines.train_nninv(ds.X_train, ds.Y_train, hyper)

    return cached_checkpoint(f"digits_nninv_s7_{cfg_key(**DIGITS_HYPER)}", build), ds


@pytest.fixture(scope="session")
def blob_classifier(blob_base):
    ds = blob_split(blob_base, 7)

    def build():
        clf, _ = decision_map.train_classifier(
            ds.X_train, ds.labels_train,
            model.LcipHyperparams(epochs=60, batch_size=64, seed=7))
        return clf

    clf = cached_checkpoint("blob_classifier_seed7", build)
    return clf, ds
