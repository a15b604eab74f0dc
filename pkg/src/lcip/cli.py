"""Batch command-line entry points for the full pipeline.

Subcommands: blobs, pca, train, train-baseline, train-classifier, eval,
decision-map, serve. Flag values override an optional JSON config file,
which overrides built-in defaults. Exit codes: 0 success, 2 usage error,
1 runtime failure (with a single-line JSON error on stderr).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import baselines, checkpoint, control, data, decision_map, metrics, model
from .model import LcipHyperparams


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path) as f:
        cfg = json.load(f)
    if not isinstance(cfg, dict):
        raise ValueError("config file must hold a JSON object")
    return cfg


def _pick(args, cfg: dict, name: str, default):
    """flags > config file > defaults."""
    value = getattr(args, name.replace("-", "_"), None)
    if value is not None:
        return value
    if name in cfg:
        return cfg[name]
    return default


def _load_dataset(args, cfg) -> data.Dataset:
    path = _pick(args, cfg, "data", None)
    if path is None:
        raise ValueError("--data is required")
    labels_path = _pick(args, cfg, "labels", None)
    if path.endswith(".csv"):
        ds = data.load_csv(path, has_labels=bool(_pick(args, cfg, "has-labels", False)))
    else:
        ds = data.load_idx(path, labels_path)
    proj = _pick(args, cfg, "proj", None)
    if proj == "pca":
        ds = data.Dataset(X=ds.X, labels=ds.labels, Y=data.pca_project(ds.X),
                          provenance=ds.provenance)
    elif proj is not None:
        ds = data.load_projection_csv(ds, proj)
    train_n = _pick(args, cfg, "train-n", None)
    test_n = _pick(args, cfg, "test-n", None)
    if train_n is not None:
        ds = data.split(ds, int(train_n), int(test_n or 0),
                        seed=int(_pick(args, cfg, "seed", 7)))
    else:
        ds = data.split(ds, ds.n_samples, 0, seed=int(_pick(args, cfg, "seed", 7)))
    return ds


def _hyper(args, cfg) -> LcipHyperparams:
    return LcipHyperparams(
        z_dim=int(_pick(args, cfg, "zdim", 16)),
        lam=float(_pick(args, cfg, "lambda", 0.1)),
        learning_rate=float(_pick(args, cfg, "lr", 0.001)),
        dis_steps_per_iter=int(_pick(args, cfg, "dis-steps", 5)),
        batch_size=int(_pick(args, cfg, "batch", 128)),
        epochs=int(_pick(args, cfg, "epochs", 200)),
        seed=int(_pick(args, cfg, "seed", 7)),
        use_adversarial=not bool(getattr(args, "no_adversarial", False)),
    )


def _require_lcip(m) -> model.LcipModel:
    if not isinstance(m, model.LcipModel):
        raise ValueError(f"this suite needs an lcip checkpoint, got {type(m).__name__}")
    return m


def cmd_blobs(args, cfg) -> int:
    ds = data.make_blobs(classes=int(_pick(args, cfg, "classes", 6)),
                         dim=int(_pick(args, cfg, "dim", 3)),
                         per_class=int(_pick(args, cfg, "per-class", 500)),
                         sigma=float(_pick(args, cfg, "sigma", 1.0)),
                         seed=int(_pick(args, cfg, "seed", 7)))
    data.save_csv(ds, args.out)
    print(json.dumps({"out": args.out, "rows": ds.n_samples, "dims": ds.n_dims}))
    return 0


def cmd_pca(args, cfg) -> int:
    ds = data.load_csv(args.data, has_labels=bool(_pick(args, cfg, "has-labels", False)))
    Y = data.pca_project(ds.X)
    data.save_projection_csv(Y, args.out)
    print(json.dumps({"out": args.out, "rows": int(Y.shape[0])}))
    return 0


def cmd_train(args, cfg) -> int:
    ds = _load_dataset(args, cfg)
    if ds.Y is None:
        raise ValueError("no projection: pass --proj <csv path> or --proj pca")
    hyper = _hyper(args, cfg)
    m, report = model.train(ds.X_train, ds.Y_train, hyper,
                            X_v=ds.X_test, Y_v=ds.Y_test)
    method = _pick(args, cfg, "zfield", "rbf")
    smoothing = _pick(args, cfg, "smoothing", None)
    model.fit_zfield(m, ds.X_train, ds.Y_train, method=method,
                     k=int(_pick(args, cfg, "k", 10)),
                     smoothing=float(smoothing) if smoothing is not None else None)
    checkpoint.save_checkpoint(m, args.out)
    print(json.dumps({"out": args.out,
                      "final_l_rec": report.l_rec[-1] if report.l_rec else None,
                      "final_test_l_rec": report.final_test_l_rec,
                      "epochs": hyper.epochs, "lambda": hyper.lam,
                      "adversarial": hyper.use_adversarial}))
    return 0


def cmd_train_baseline(args, cfg) -> int:
    ds = _load_dataset(args, cfg)
    if ds.Y is None:
        raise ValueError("no projection: pass --proj <csv path> or --proj pca")
    if args.method == "nninv":
        m = baselines.train_nninv(ds.X_train, ds.Y_train, _hyper(args, cfg))
    elif args.method == "rbf":
        smoothing = _pick(args, cfg, "smoothing", None)
        m = baselines.fit_rbf_inverse(
            ds.X_train, ds.Y_train,
            smoothing=float(smoothing) if smoothing is not None else None)
    else:
        raise ValueError(f"unknown baseline method {args.method!r}")
    checkpoint.save_checkpoint(m, args.out)
    print(json.dumps({"out": args.out, "method": args.method}))
    return 0


def cmd_train_classifier(args, cfg) -> int:
    ds = _load_dataset(args, cfg)
    if ds.labels is None:
        raise ValueError("classifier training needs labels")
    clf, report = decision_map.train_classifier(
        ds.X_train, ds.labels_train, _hyper(args, cfg),
        ds.X_test, ds.labels_test)
    checkpoint.save_checkpoint(clf, args.out)
    print(json.dumps({"out": args.out, **report}))
    return 0


def _grid_for(m: model.LcipModel, resolution: str) -> metrics.GridSpec:
    w, h = (int(v) for v in resolution.lower().split("x"))
    return metrics.GridSpec.from_points(m.zfield.anchors_y, width=w, height=h)


def cmd_eval(args, cfg) -> int:
    loaded = checkpoint.load_checkpoint(args.model)
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)
    resolution = _pick(args, cfg, "resolution", "100x100")
    summary: dict = {"suite": args.suite, "model": args.model}

    if args.suite == "mse":
        ds = _load_dataset(args, cfg)
        X_v, Y_v = ds.X_test, ds.Y_test
        if X_v is None or not len(X_v):
            raise ValueError("mse suite needs a test split (--train-n/--test-n)")
        rows = []
        if isinstance(loaded, model.LcipModel):
            import dataclasses

            from . import zfield as zf
            Z_T = model.encode(loaded, ds.X_train)
            for method in ("rbf", "knn"):
                field = zf.fit(ds.Y_train, Z_T, method=method)
                holder = dataclasses.replace(loaded, zfield=field)
                rows.append((f"lcip({method})",
                             metrics.inverse_mse(holder, X_v, Y_v)))
            rows.append(("lcip*", metrics.lcip_star_mse(loaded, X_v, Y_v)))
        else:
            rows.append((type(loaded).__name__.lower(),
                         metrics.inverse_mse(loaded, X_v, Y_v)))
        path = os.path.join(out_dir, "mse.csv")
        with open(path, "w") as f:
            f.write("method,mse\n")
            for name, value in rows:
                f.write(f"{name},{value:.9g}\n")
        summary["rows"] = {name: value for name, value in rows}

    elif args.suite == "disentangle":
        m = _require_lcip(loaded)
        ds = _load_dataset(args, cfg)
        if ds.X_test is None or not len(ds.X_test):
            raise ValueError("disentangle suite needs a test split")
        Z_T = model.encode(m, ds.X_train)
        Z_v = model.encode(m, ds.X_test)
        mse, r2 = metrics.disentanglement_probe(
            Z_T, ds.Y_train, Z_v, ds.Y_test,
            epochs=int(_pick(args, cfg, "probe-epochs", 200)),
            seed=int(_pick(args, cfg, "seed", 7)))
        with open(os.path.join(out_dir, "disentangle.csv"), "w") as f:
            f.write("mse,r2\n")
            f.write(f"{mse:.9g},{r2:.9g}\n")
        summary.update({"probe_mse": mse, "probe_r2": r2})

    elif args.suite == "gradmap":
        w, h = (int(v) for v in resolution.lower().split("x"))
        if isinstance(loaded, model.LcipModel):
            grid = _grid_for(loaded, resolution)
        elif hasattr(loaded, "anchors_y"):
            grid = metrics.GridSpec.from_points(loaded.anchors_y, width=w, height=h)
        else:
            grid = metrics.GridSpec.from_points(_load_dataset(args, cfg).Y_train,
                                                width=w, height=h)
        smap = metrics.gradient_map(loaded, grid)
        metrics.scalar_map_to_csv(smap, os.path.join(out_dir, "gradmap.csv"))
        metrics.scalar_map_to_pgm(smap, os.path.join(out_dir, "gradmap.pgm"))
        summary["stats"] = smap.stats

    elif args.suite == "idmap":
        m = _require_lcip(loaded)
        grid = _grid_for(m, resolution)
        sweep_n = _pick(args, cfg, "sweep-alphas", None)
        batches = None
        if sweep_n is not None:
            ds = _load_dataset(args, cfg)
            target_index = int(_pick(args, cfg, "target-index", 0))
            x_t = ds.X_train[target_index]
            source = _pick(args, cfg, "source", None)
            p_s = (np.asarray([float(v) for v in source.split(",")], np.float32)
                   if source else ds.Y_train[target_index])
            session = control.ControlSession(m, m.zfield)
            session.set_specs([control.ControlSpec(
                source=p_s, target_x=x_t, alpha=1.0,
                sigma=float(_pick(args, cfg, "sigma", 1e3)),
                target_index=target_index)])
            alphas = np.linspace(0.0, float(_pick(args, cfg, "alpha-max", 0.2)),
                                 int(sweep_n))
            batches = [q for _, q in control.sweep_grid(session, grid.points(), alphas)]
        smap, mean_id = metrics.id_map(m, grid, sweep_batches=batches)
        metrics.scalar_map_to_csv(smap, os.path.join(out_dir, "idmap.csv"))
        metrics.scalar_map_to_pgm(smap, os.path.join(out_dir, "idmap.pgm"))
        summary.update({"mean_id": mean_id, "swept": batches is not None})

    elif args.suite == "varmap":
        m = _require_lcip(loaded)
        ds = _load_dataset(args, cfg)
        grid = _grid_for(m, resolution)
        smap = metrics.variance_map(m, m.zfield.anchors_z, ds.X_train, grid,
                                    max_anchors=int(_pick(args, cfg, "max-anchors", 512)))
        metrics.scalar_map_to_csv(smap, os.path.join(out_dir, "varmap.csv"))
        metrics.scalar_map_to_pgm(smap, os.path.join(out_dir, "varmap.pgm"))
        summary["stats"] = smap.stats

    elif args.suite == "timing":
        ds = _load_dataset(args, cfg)
        counts = [int(v) for v in
                  str(_pick(args, cfg, "counts", "0,1000,2000,4000")).split(",")]
        hyper = (loaded.hyper if isinstance(loaded, model.LcipModel)
                 else _hyper(args, cfg))
        grid = metrics.GridSpec.from_points(ds.Y_train, width=100, height=100)
        rng = np.random.default_rng(hyper.seed)

        def sample_points(count):
            lo = np.array([grid.x_min, grid.y_min])
            hi = np.array([grid.x_max, grid.y_max])
            return (lo + (hi - lo) * rng.uniform(size=(count, 2))).astype(np.float32)

        def train_lcip():
            m2, _ = model.train(ds.X_train, ds.Y_train, hyper)
            model.fit_zfield(m2, ds.X_train, ds.Y_train, method="rbf")
            return m2

        rows = metrics.timing_curve(train_lcip, counts, sample_points)
        metrics.timing_to_csv(rows, os.path.join(out_dir, "timing.csv"))
        summary["rows"] = rows

    else:
        raise ValueError(f"unknown suite {args.suite!r}")

    print(json.dumps(summary, default=float))
    return 0


def cmd_decision_map(args, cfg) -> int:
    m = _require_lcip(checkpoint.load_checkpoint(args.model))
    clf = checkpoint.load_checkpoint(args.classifier)
    if not isinstance(clf, decision_map.Classifier):
        raise ValueError("--classifier must point at a classifier checkpoint")
    grid = _grid_for(m, _pick(args, cfg, "resolution", "100x100"))
    alpha = float(_pick(args, cfg, "alpha", 0.0))
    invert = m
    if alpha != 0.0:
        ds = _load_dataset(args, cfg)
        target_index = int(_pick(args, cfg, "target-index", 0))
        source = _pick(args, cfg, "source", None)
        p_s = (np.asarray([float(v) for v in source.split(",")], np.float32)
               if source else ds.Y_train[target_index])
        session = control.ControlSession(m, m.zfield)
        session.set_specs([control.ControlSpec(
            source=p_s, target_x=ds.X_train[target_index], alpha=alpha,
            sigma=float(_pick(args, cfg, "sigma", 0.5)),
            target_index=target_index)])
        invert = session
    dmap = decision_map.render_decision_map(clf, invert, grid)
    decision_map.decision_map_to_ppm(dmap, args.out)
    decision_map.decision_map_to_csv(dmap, args.out + ".labels.csv")
    print(json.dumps({"out": args.out, "alpha": alpha,
                      "classes": sorted(int(c) for c in np.unique(dmap.labels))}))
    return 0


def cmd_serve(args, cfg) -> int:
    import uvicorn

    from . import service as svc
    m = _require_lcip(checkpoint.load_checkpoint(args.model))
    ds = None
    if _pick(args, cfg, "data", None):
        ds = _load_dataset(args, cfg)
    clf = None
    clf_path = _pick(args, cfg, "classifier", None)
    if clf_path:
        clf = checkpoint.load_checkpoint(clf_path)
    shape = _pick(args, cfg, "image-shape", None)
    if shape:
        shape = [int(v) for v in str(shape).lower().split("x")]
    state = svc.ServiceState.from_model(m, dataset=ds, classifier=clf,
                                        image_shape=shape)
    static = _pick(args, cfg, "static", None)
    app = svc.create_app(state, static_dir=static)
    uvicorn.run(app, host=_pick(args, cfg, "host", "127.0.0.1"),
                port=int(_pick(args, cfg, "port", 8765)), log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lcip",
        description="loss-controlled inverse projection: train, evaluate, serve")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file (flags win)")
        p.add_argument("--seed", type=int)

    def add_data_flags(p):
        p.add_argument("--data", help="dataset CSV or IDX image file")
        p.add_argument("--labels", help="IDX label file (idx datasets)")
        p.add_argument("--has-labels", action="store_true",
                       help="CSV last column holds class ids")
        p.add_argument("--proj", help="projection CSV path, or 'pca'")
        p.add_argument("--train-n", type=int)
        p.add_argument("--test-n", type=int)

    p = sub.add_parser("blobs", help="generate the synthetic blob dataset")
    add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--per-class", type=int)
    p.add_argument("--sigma", type=float)

    p = sub.add_parser("pca", help="project a CSV dataset to 2D with PCA")
    add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--has-labels", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train the inverse-projection model")
    add_common(p)
    add_data_flags(p)
    p.add_argument("--zdim", type=int)
    p.add_argument("--lambda", dest="lambda_", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--dis-steps", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--no-adversarial", action="store_true",
                   help="ablation: train without the adversarial term")
    p.add_argument("--zfield", choices=["rbf", "knn"])
    p.add_argument("--k", type=int)
    p.add_argument("--smoothing", type=float)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-baseline", help="train a baseline inverse projection")
    add_common(p)
    add_data_flags(p)
    p.add_argument("--method", required=True, choices=["nninv", "rbf"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--smoothing", type=float)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-classifier", help="train a labeled-data classifier")
    add_common(p)
    add_data_flags(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="run an evaluation suite")
    add_common(p)
    add_data_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--suite", required=True,
                   choices=["mse", "disentangle", "gradmap", "idmap", "varmap",
                            "timing"])
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resolution")
    p.add_argument("--sweep-alphas", type=int)
    p.add_argument("--alpha-max", type=float)
    p.add_argument("--target-index", type=int)
    p.add_argument("--source")
    p.add_argument("--sigma", type=float)
    p.add_argument("--max-anchors", type=int)
    p.add_argument("--probe-epochs", type=int)
    p.add_argument("--counts")

    p = sub.add_parser("decision-map", help="render a (controlled) decision map")
    add_common(p)
    add_data_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--classifier", required=True)
    p.add_argument("--alpha", type=float)
    p.add_argument("--source", help="source point 'x,y'")
    p.add_argument("--target-index", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--resolution")
    p.add_argument("--out", required=True)

    p = sub.add_parser("serve", help="serve a model over HTTP/WebSocket")
    add_common(p)
    add_data_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--classifier")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--image-shape", help="override raster shape, e.g. 28x28")
    p.add_argument("--static", help="directory of UI assets to serve at /")
    return parser


COMMANDS = {
    "blobs": cmd_blobs,
    "pca": cmd_pca,
    "train": cmd_train,
    "train-baseline": cmd_train_baseline,
    "train-classifier": cmd_train_classifier,
    "eval": cmd_eval,
    "decision-map": cmd_decision_map,
    "serve": cmd_serve,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "lambda_", None) is not None:
        setattr(args, "lambda", args.lambda_)
    try:
        cfg = _load_config(getattr(args, "config", None))
        return COMMANDS[args.command](args, cfg)
    except (data.FormatError, checkpoint.CheckpointError, ValueError,
            FileNotFoundError, FloatingPointError) as e:
        print(json.dumps({"error": str(e)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
