"""CLI surface: pipelines, flag precedence, exit codes."""

import json

import numpy as np
import pytest

from lcip import checkpoint, cli


def run(capsys, *argv):
    code = cli.main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out.strip(), captured.err.strip()


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    code = cli.main(["blobs", "--out", str(d / "blobs.csv"),
                     "--per-class", "40", "--seed", "7"])
    assert code == 0
    code = cli.main(["pca", "--data", str(d / "blobs.csv"), "--has-labels",
                     "--out", str(d / "proj.csv")])
    assert code == 0
    return d


def train_args(d, out, extra=()):
    return ["train", "--data", str(d / "blobs.csv"), "--has-labels",
            "--proj", str(d / "proj.csv"), "--zdim", "4", "--epochs", "2",
            "--batch", "64", "--seed", "7", "--train-n", "180",
            "--test-n", "60", "--zfield", "knn", "--out", str(out), *extra]


def test_blobs_and_pca_outputs(workdir, capsys):
    rows = (workdir / "blobs.csv").read_text().strip().split("\n")
    assert len(rows) == 240
    proj = (workdir / "proj.csv").read_text().strip().split("\n")
    assert len(proj) == 240 and len(proj[0].split(",")) == 2


def test_train_writes_checkpoint_and_summary(workdir, capsys):
    code, out, _ = run(capsys, *train_args(workdir, workdir / "model.lcip"))
    assert code == 0
    summary = json.loads(out)
    assert summary["final_l_rec"] is not None
    m = checkpoint.load_checkpoint(str(workdir / "model.lcip"))
    assert m.zfield is not None and m.zfield.method == "knn"


def test_train_seed_reproducible(workdir, capsys):
    a, b = workdir / "a.lcip", workdir / "b.lcip"
    assert cli.main(train_args(workdir, a)) == 0
    assert cli.main(train_args(workdir, b)) == 0
    assert a.read_bytes() == b.read_bytes()


def test_no_adversarial_flag_changes_model(workdir, capsys):
    a, b = workdir / "adv.lcip", workdir / "noadv.lcip"
    assert cli.main(train_args(workdir, a)) == 0
    assert cli.main(train_args(workdir, b, ["--no-adversarial"])) == 0
    assert a.read_bytes() != b.read_bytes()


def test_eval_mse_untrained_large_finite(workdir, capsys):
    out = workdir / "untrained.lcip"
    assert cli.main(train_args(workdir, out, ["--epochs", "0"])) == 0
    capsys.readouterr()
    code, stdout, _ = run(capsys, "eval", "--model", str(out),
                          "--suite", "mse", "--data", str(workdir / "blobs.csv"),
                          "--has-labels", "--proj", str(workdir / "proj.csv"),
                          "--train-n", "180", "--test-n", "60", "--seed", "7",
                          "--out", str(workdir / "mse_untrained"))
    assert code == 0
    rows = json.loads(stdout)["rows"]
    assert all(np.isfinite(v) for v in rows.values())
    assert (workdir / "mse_untrained" / "mse.csv").exists()


def test_eval_disentangle_pipeline(workdir, capsys):
    model_path = workdir / "model.lcip"
    if not model_path.exists():
        assert cli.main(train_args(workdir, model_path)) == 0
    capsys.readouterr()
    code, stdout, _ = run(capsys, "eval", "--model", str(model_path),
                          "--suite", "disentangle",
                          "--data", str(workdir / "blobs.csv"), "--has-labels",
                          "--proj", str(workdir / "proj.csv"),
                          "--train-n", "180", "--test-n", "60", "--seed", "7",
                          "--probe-epochs", "30",
                          "--out", str(workdir / "dis"))
    assert code == 0
    summary = json.loads(stdout)
    assert "probe_r2" in summary
    assert (workdir / "dis" / "disentangle.csv").exists()


def test_eval_gradmap_writes_map_files(workdir, capsys):
    code, stdout, _ = run(capsys, "eval", "--model", str(workdir / "model.lcip"),
                          "--suite", "gradmap", "--resolution", "12x10",
                          "--out", str(workdir / "grad"))
    assert code == 0
    assert (workdir / "grad" / "gradmap.pgm").exists()
    assert (workdir / "grad" / "gradmap.pgm.json").exists()
    stats = json.loads(stdout)["stats"]
    assert np.isfinite(stats["mean"])


def test_train_baseline_both_methods(workdir, capsys):
    for method in ("nninv", "rbf"):
        code, stdout, _ = run(capsys, "train-baseline", "--method", method,
                              "--data", str(workdir / "blobs.csv"), "--has-labels",
                              "--proj", str(workdir / "proj.csv"),
                              "--train-n", "180", "--test-n", "60",
                              "--epochs", "1", "--seed", "7",
                              "--out", str(workdir / f"{method}.lcip"))
        assert code == 0
        loaded = checkpoint.load_checkpoint(str(workdir / f"{method}.lcip"))
        assert loaded is not None


def test_decision_map_command(workdir, capsys):
    code, _, _ = run(capsys, "train-classifier",
                     "--data", str(workdir / "blobs.csv"), "--has-labels",
                     "--epochs", "20", "--batch", "64", "--seed", "7",
                     "--out", str(workdir / "clf.lcip"))
    assert code == 0
    code, stdout, _ = run(capsys, "decision-map",
                          "--model", str(workdir / "model.lcip"),
                          "--classifier", str(workdir / "clf.lcip"),
                          "--alpha", "0.9", "--target-index", "3",
                          "--sigma", "0.8", "--resolution", "16x16",
                          "--data", str(workdir / "blobs.csv"), "--has-labels",
                          "--proj", str(workdir / "proj.csv"),
                          "--out", str(workdir / "dm.ppm"))
    assert code == 0
    assert (workdir / "dm.ppm").read_bytes().startswith(b"P6\n16 16\n255\n")
    assert (workdir / "dm.ppm.labels.csv").exists()


def test_config_file_precedence(workdir, capsys):
    cfg = workdir / "cfg.json"
    cfg.write_text(json.dumps({"epochs": 1, "zdim": 3}))
    out = workdir / "cfged.lcip"
    code, stdout, _ = run(capsys, "train", "--data", str(workdir / "blobs.csv"),
                          "--has-labels", "--proj", str(workdir / "proj.csv"),
                          "--config", str(cfg), "--zdim", "5", "--batch", "64",
                          "--seed", "7", "--zfield", "knn", "--out", str(out))
    assert code == 0
    assert json.loads(stdout)["epochs"] == 1  # from config
    m = checkpoint.load_checkpoint(str(out))
    assert m.z_dim == 5  # flag beats config


def test_unknown_flag_exits_2(workdir):
    with pytest.raises(SystemExit) as exc:
        cli.main(["train", "--no-such-flag"])
    assert exc.value.code == 2


def test_missing_file_exits_1_with_json_error(capsys):
    code, _, err = run(capsys, "eval", "--model", "/does/not/exist.lcip",
                       "--suite", "mse", "--out", "/tmp/nowhere")
    assert code == 1
    assert "error" in json.loads(err)
