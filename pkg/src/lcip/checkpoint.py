"""Binary checkpoint container shared by all model kinds.

Layout: magic "LCIP1" (5 bytes), little-endian u32 header length, UTF-8 JSON
header describing layer shapes / normalization / hyperparameters and the
ordered tensor directory, then raw little-endian float32 tensor payloads in
directory order. Round-trips are bit-exact at the file level.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict

import numpy as np

from .baselines import NNinvModel, RbfInverse
from .decision_map import Classifier
from .model import LcipHyperparams, LcipModel
from .nn import BatchNormState, DenseLayer, MlpModel
from .zfield import ThinPlateSpline2D, ZField

MAGIC = b"LCIP1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Malformed checkpoint: bad magic, version, header, or truncation."""


def _f32(arr) -> np.ndarray:
    return np.ascontiguousarray(arr, dtype=np.float32)


def _mlp_spec(m: MlpModel) -> list[dict]:
    spec = []
    for layer in m.layers:
        entry = {"in": layer.weight.shape[0], "out": layer.weight.shape[1],
                 "activation": layer.activation,
                 "batch_norm": layer.batch_norm is not None}
        if layer.batch_norm is not None:
            entry["bn_momentum"] = layer.batch_norm.momentum
            entry["bn_epsilon"] = layer.batch_norm.epsilon
        spec.append(entry)
    return spec


def _mlp_tensors(prefix: str, m: MlpModel) -> list[tuple[str, np.ndarray]]:
    out = []
    for i, layer in enumerate(m.layers):
        out.append((f"{prefix}.{i}.weight", layer.weight))
        out.append((f"{prefix}.{i}.bias", layer.bias))
        if layer.batch_norm is not None:
            bn = layer.batch_norm
            out += [(f"{prefix}.{i}.gamma", bn.gamma),
                    (f"{prefix}.{i}.beta", bn.beta),
                    (f"{prefix}.{i}.running_mean", bn.running_mean),
                    (f"{prefix}.{i}.running_var", bn.running_var)]
    return out


def _mlp_restore(prefix: str, spec: list[dict], tensors: dict) -> MlpModel:
    layers = []
    for i, entry in enumerate(spec):
        bn = None
        if entry["batch_norm"]:
            bn = BatchNormState(
                gamma=tensors[f"{prefix}.{i}.gamma"],
                beta=tensors[f"{prefix}.{i}.beta"],
                running_mean=tensors[f"{prefix}.{i}.running_mean"],
                running_var=tensors[f"{prefix}.{i}.running_var"],
                momentum=entry.get("bn_momentum", 0.1),
                epsilon=entry.get("bn_epsilon", 1e-5),
            )
        layers.append(DenseLayer(tensors[f"{prefix}.{i}.weight"],
                                 tensors[f"{prefix}.{i}.bias"],
                                 entry["activation"], bn))
    return MlpModel(layers)


def _zfield_entries(field: ZField):
    header = {"method": field.method, "k": field.k, "smoothing": field.smoothing}
    tensors = [("zfield.anchors_y", field.anchors_y),
               ("zfield.anchors_z", field.anchors_z)]
    if field.method == "rbf" and field.tps is not None:
        tensors += [("zfield.rbf_centers", field.tps.centers),
                    ("zfield.rbf_weights", field.tps.weights),
                    ("zfield.rbf_affine", field.tps.affine)]
    return header, tensors


def _zfield_restore(header: dict, tensors: dict) -> ZField:
    field = ZField(anchors_y=tensors["zfield.anchors_y"],
                   anchors_z=tensors["zfield.anchors_z"],
                   method=header["method"], k=int(header["k"]),
                   smoothing=float(header["smoothing"]))
    if field.method == "rbf":
        field.tps = ThinPlateSpline2D(
            centers=tensors["zfield.rbf_centers"].astype(np.float64),
            weights=tensors["zfield.rbf_weights"].astype(np.float64),
            affine=tensors["zfield.rbf_affine"].astype(np.float64),
            smoothing=field.smoothing)
    return field


def _norm_tensors(obj) -> list[tuple[str, np.ndarray]]:
    return [("x_min", obj.x_min), ("x_max", obj.x_max),
            ("y_mean", obj.y_mean), ("y_std", obj.y_std)]


def _collect(obj) -> tuple[dict, list[tuple[str, np.ndarray]]]:
    if isinstance(obj, LcipModel):
        header = {"kind": "lcip", "hyper": asdict(obj.hyper),
                  "enc": _mlp_spec(obj.enc), "dec": _mlp_spec(obj.dec),
                  "dis": _mlp_spec(obj.dis), "zfield": None}
        tensors = (_mlp_tensors("enc", obj.enc) + _mlp_tensors("dec", obj.dec)
                   + _mlp_tensors("dis", obj.dis) + _norm_tensors(obj))
        if obj.zfield is not None:
            zheader, ztensors = _zfield_entries(obj.zfield)
            header["zfield"] = zheader
            tensors += ztensors
        return header, tensors
    if isinstance(obj, NNinvModel):
        return ({"kind": "nninv", "net": _mlp_spec(obj.net)},
                _mlp_tensors("net", obj.net) + _norm_tensors(obj))
    if isinstance(obj, RbfInverse):
        return ({"kind": "rbf", "smoothing": obj.smoothing},
                [("rbf.anchors_y", obj.anchors_y), ("rbf.anchors_x", obj.anchors_x),
                 ("rbf.centers", obj.tps.centers), ("rbf.weights", obj.tps.weights),
                 ("rbf.affine", obj.tps.affine)])
    if isinstance(obj, Classifier):
        return ({"kind": "classifier", "net": _mlp_spec(obj.net),
                 "classes": [int(c) for c in obj.classes]},
                _mlp_tensors("net", obj.net)
                + [("x_min", obj.x_min), ("x_max", obj.x_max)])
    raise TypeError(f"cannot checkpoint object of type {type(obj)!r}")


def save_checkpoint(obj, path: str) -> None:
    """Write any supported model kind; the JSON header carries a kind tag."""
    header, named = _collect(obj)
    payload = [_f32(arr) for _, arr in named]
    header["format_version"] = FORMAT_VERSION
    header["tensors"] = [{"name": name, "shape": list(arr.shape)}
                         for (name, _), arr in zip(named, payload)]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for arr in payload:
            f.write(arr.tobytes(order="C"))


def load_checkpoint(path: str):
    """Read a checkpoint back into its model kind; malformed files raise
    CheckpointError rather than crashing."""
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < len(MAGIC) + 4:
        raise CheckpointError(f"{path}: file too short for header")
    if buf[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:len(MAGIC)]!r}")
    (hlen,) = struct.unpack_from("<I", buf, len(MAGIC))
    start = len(MAGIC) + 4
    if start + hlen > len(buf):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(buf[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable header ({e})") from e
    if not isinstance(header, dict) or header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version "
                              f"{header.get('format_version') if isinstance(header, dict) else header!r}")

    offset = start + hlen
    tensors: dict[str, np.ndarray] = {}
    try:
        directory = [(t["name"], tuple(int(s) for s in t["shape"]))
                     for t in header["tensors"]]
    except (KeyError, TypeError) as e:
        raise CheckpointError(f"{path}: malformed tensor directory ({e})") from e
    for name, shape in directory:
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * 4
        if offset + nbytes > len(buf):
            raise CheckpointError(f"{path}: truncated payload at tensor {name!r}")
        arr = np.frombuffer(buf, dtype="<f4", count=count, offset=offset).reshape(shape)
        if not np.isfinite(arr).all():
            raise CheckpointError(f"{path}: non-finite values in tensor {name!r}")
        tensors[name] = arr.copy()
        offset += nbytes
    if offset != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - offset} trailing bytes")

    try:
        return _restore(header, tensors)
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{path}: inconsistent checkpoint ({e})") from e


def _restore(header: dict, tensors: dict):
    kind = header.get("kind")
    if kind == "lcip":
        model = LcipModel(
            enc=_mlp_restore("enc", header["enc"], tensors),
            dec=_mlp_restore("dec", header["dec"], tensors),
            dis=_mlp_restore("dis", header["dis"], tensors),
            x_min=tensors["x_min"], x_max=tensors["x_max"],
            y_mean=tensors["y_mean"], y_std=tensors["y_std"],
            hyper=LcipHyperparams(**header["hyper"]))
        if header.get("zfield"):
            model.zfield = _zfield_restore(header["zfield"], tensors)
        return model
    if kind == "nninv":
        return NNinvModel(net=_mlp_restore("net", header["net"], tensors),
                          x_min=tensors["x_min"], x_max=tensors["x_max"],
                          y_mean=tensors["y_mean"], y_std=tensors["y_std"])
    if kind == "rbf":
        smoothing = float(header["smoothing"])
        tps = ThinPlateSpline2D(centers=tensors["rbf.centers"].astype(np.float64),
                                weights=tensors["rbf.weights"].astype(np.float64),
                                affine=tensors["rbf.affine"].astype(np.float64),
                                smoothing=smoothing)
        return RbfInverse(anchors_y=tensors["rbf.anchors_y"],
                          anchors_x=tensors["rbf.anchors_x"],
                          smoothing=smoothing, tps=tps)
    if kind == "classifier":
        return Classifier(net=_mlp_restore("net", header["net"], tensors),
                          classes=np.asarray(header["classes"], dtype=np.int64),
                          x_min=tensors["x_min"], x_max=tensors["x_max"])
    raise CheckpointError(f"unknown checkpoint kind {kind!r}")
