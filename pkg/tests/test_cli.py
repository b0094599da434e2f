import json
from pathlib import Path

import pytest

from thermobyol.cli import ABLATION_GRID, main

TINY_CONFIG = """\
data.num_classes = 3
data.image_size = 32
encoder.block_channels = 2,2,4,4
classifier.hidden_dims = 8
mlp.hidden_dim = 8
byol.projection_dim = 4
byol.epochs = 1
byol.batch_size = 8
train.max_epochs = 1
train.batch_size = 8
"""


@pytest.fixture(scope="session")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.cfg"
    cfg.write_text(TINY_CONFIG)
    data = root / "data"
    rc = main([
        "synth-data", "--out", str(data), "--config", str(cfg),
        "--per-class", "10", "--size", "32", "--seed", "7",
    ])
    assert rc == 0
    return {"root": root, "cfg": str(cfg), "data": str(data)}


@pytest.fixture(scope="session")
def pretrained(workspace):
    out = Path(workspace["root"]) / "pretrain"
    rc = main([
        "pretrain", "--data", workspace["data"], "--out", str(out),
        "--config", workspace["cfg"], "--seed", "7",
    ])
    assert rc == 0
    return out


def _tree_bytes(root):
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(Path(root).rglob("*"))
        if p.is_file() and p.name != "manifest.txt"
    }


def test_synth_data_writes_class_tree(workspace):
    data = Path(workspace["data"])
    class_dirs = sorted(d for d in data.iterdir() if d.is_dir())
    assert len(class_dirs) == 3
    assert all(len(list(d.glob("*.ppm"))) == 10 for d in class_dirs)
    assert (data / "manifest.txt").exists()


def test_synth_data_bit_identical_reruns(workspace, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        rc = main([
            "synth-data", "--out", str(out), "--config", workspace["cfg"],
            "--per-class", "10", "--size", "32", "--seed", "7",
        ])
        assert rc == 0
    assert _tree_bytes(a) == _tree_bytes(b)
    assert _tree_bytes(a) == _tree_bytes(workspace["data"])


def test_unknown_config_key_exits_2(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("byol.taoo = 0.5\n")
    rc = main(["synth-data", "--out", str(tmp_path / "o"), "--config", str(bad)])
    assert rc == 2


def test_missing_data_dir_exits_3(workspace, tmp_path):
    rc = main([
        "pretrain", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "o"),
        "--config", workspace["cfg"],
    ])
    assert rc == 3


def test_pretrain_outputs(pretrained):
    assert (pretrained / "encoder.ckpt").exists()
    loss_lines = (pretrained / "pretrain_loss.csv").read_text().splitlines()
    assert loss_lines[0] == "epoch,mean_loss"
    assert len(loss_lines) == 2  # one configured epoch
    manifest = (pretrained / "manifest.txt").read_text()
    assert "command = pretrain" in manifest
    assert "config_sha256 = " in manifest
    assert "byol.tau = 0.99" in manifest


def test_finetune_from_pretrained(workspace, pretrained, tmp_path):
    out = tmp_path / "ft"
    rc = main([
        "finetune", "--data", workspace["data"], "--out", str(out),
        "--config", workspace["cfg"], "--seed", "7",
        "--init-from", str(pretrained / "encoder.ckpt"),
    ])
    assert rc == 0
    assert (out / "model.ckpt").exists()
    history = (out / "history.csv").read_text().splitlines()
    assert history[0] == "epoch,train_loss,val_loss,val_accuracy"
    assert len(history) >= 2
    payload = json.loads((out / "test_metrics.json").read_text())
    assert 0.0 <= payload["accuracy"] <= 1.0


def test_finetune_incompatible_checkpoint_exits_4(workspace, tmp_path):
    other_cfg = tmp_path / "other.cfg"
    other_cfg.write_text(TINY_CONFIG.replace("2,2,4,4", "3,3,4,4"))
    other = tmp_path / "other"
    rc = main([
        "pretrain", "--data", workspace["data"], "--out", str(other),
        "--config", str(other_cfg), "--seed", "7",
    ])
    assert rc == 0
    rc = main([
        "finetune", "--data", workspace["data"], "--out", str(tmp_path / "ft"),
        "--config", workspace["cfg"], "--init-from", str(other / "encoder.ckpt"),
    ])
    assert rc == 4


def test_evaluate_outputs(workspace, tmp_path):
    ft = tmp_path / "ft"
    rc = main([
        "finetune", "--data", workspace["data"], "--out", str(ft),
        "--config", workspace["cfg"], "--seed", "3", "--no-augment",
    ])
    assert rc == 0
    out = tmp_path / "eval"
    rc = main([
        "evaluate", "--data", workspace["data"], "--out", str(out),
        "--config", workspace["cfg"], "--seed", "3",
        "--ckpt", str(ft / "model.ckpt"), "--timing-batches", "2",
    ])
    assert rc == 0
    payload = json.loads((out / "metrics.json").read_text())
    for key in ("accuracy", "precision_macro", "recall_macro", "f1_macro",
                "auc_macro", "num_parameters", "checkpoint_bytes", "timing"):
        assert key in payload
    assert payload["num_samples"] == 30
    assert payload["checkpoint_bytes"] == (ft / "model.ckpt").stat().st_size
    cm = (out / "confusion_matrix.csv").read_text().splitlines()
    assert len(cm) == 4  # header + one row per class
    roc = (out / "roc.csv").read_text().splitlines()
    assert roc[0] == "class,fpr,tpr"
    assert len(roc) > 1


def test_evaluate_bad_checkpoint_exits_4(workspace, tmp_path):
    junk = tmp_path / "junk.ckpt"
    junk.write_bytes(b"not a checkpoint")
    rc = main([
        "evaluate", "--data", workspace["data"], "--out", str(tmp_path / "o"),
        "--config", workspace["cfg"], "--ckpt", str(junk),
    ])
    assert rc == 4


def test_kfold_csv_shape(workspace, tmp_path):
    out = tmp_path / "kf"
    rc = main([
        "kfold", "--data", workspace["data"], "--out", str(out),
        "--config", workspace["cfg"], "--seed", "11", "--k", "3",
    ])
    assert rc == 0
    lines = (out / "kfold.csv").read_text().splitlines()
    assert lines[0] == "Fold,Accuracy,Precision,Recall,F1,AUC"
    assert len(lines) == 5  # header + 3 folds + Average
    assert lines[-1].startswith("Average,")


def test_ablate_grid(workspace, tmp_path):
    out = tmp_path / "ab"
    rc = main([
        "ablate", "--data", workspace["data"], "--out", str(out),
        "--config", workspace["cfg"], "--seed", "13",
        "--epochs", "1", "--pretrain-epochs", "1",
    ])
    assert rc == 0
    lines = (out / "ablation.csv").read_text().splitlines()
    assert lines[0] == "Configuration,Accuracy,Precision,Recall,F1,AUC"
    assert len(lines) == 1 + len(ABLATION_GRID)
    assert [line.split(",")[0] for line in lines[1:]] == [n for n, _ in ABLATION_GRID]
