import csv
import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
import yaml
from PIL import Image

from hsonet.checkpoint import FORMAT_VERSION
from hsonet.cli import main
from hsonet.metrics import compute_metrics, confusion

pytestmark = pytest.mark.slow

TRAIN = ["--steps", "4", "--batch-size", "2", "--crop", "64", "--eval-interval", "2",
         "--widths", "4", "4", "8", "8", "--pyramid-dim", "4", "--decoder-dim", "4"]


def digest(root: Path, skip=("run_manifest.json", "manifest.json")) -> dict:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file() and p.name not in skip}


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert main(["synth", "--n", "6", "--seed", "7", "--size", "64", "--out", str(d)]) == 0
    return d


@pytest.fixture(scope="module")
def trained(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", "--data", str(dataset), "--val", str(dataset), "--out", str(out), *TRAIN]) == 0
    return out


def _strip_time(doc):
    return {k: v for k, v in doc.items() if k not in ("created", "started", "argv")}


def test_synth_is_reproducible(dataset, tmp_path):
    assert main(["synth", "--n", "6", "--seed", "7", "--size", "64", "--out", str(tmp_path)]) == 0
    assert digest(tmp_path) == digest(dataset)
    a = json.loads((tmp_path / "manifest.json").read_text())
    b = json.loads((dataset / "manifest.json").read_text())
    assert _strip_time(a) == _strip_time(b)
    assert len(a["samples"]) == 6 and {"name", "seed", "spec"} <= set(a["samples"][0])


def test_synth_zero_writes_manifest_only(tmp_path):
    assert main(["synth", "--n", "0", "--out", str(tmp_path)]) == 0
    assert [p.name for p in tmp_path.iterdir()] == ["manifest.json"]


def test_synth_hard_case_rate(tmp_path):
    assert main(["synth", "--n", "100", "--seed", "1", "--hard-case-rate", "0.5", "--out", str(tmp_path)]) == 0
    changed = hard = 0
    for lab in sorted((tmp_path / "label").glob("*.png")):
        m = np.asarray(Image.open(lab)) >= 128
        tags = np.asarray(Image.open(tmp_path / "hardness" / lab.name))
        changed += int(m.sum())
        hard += int((tags[m] != 0).sum())
    assert abs(hard / changed - 0.5) <= 0.1


def test_synth_rejects_bad_config(tmp_path, capsys):
    out = tmp_path / "x"
    assert main(["synth", "--n", "2", "--hard-case-rate", "1.5", "--size", "50", "--out", str(out)]) == 2
    err = capsys.readouterr().err
    assert "hard_case_rate" in err and "synth.size" in err
    assert not out.exists()


def test_train_outputs(trained):
    assert {"checkpoint.hson", "curve.csv", "run_manifest.json"} <= {p.name for p in trained.iterdir()}
    man = json.loads((trained / "run_manifest.json").read_text())
    assert man["config"]["train"]["steps"] == 4
    assert man["config"]["loss"]["step"] == 4
    assert man["config"]["model"]["widths"] == [4, 4, 8, 8]
    assert man["build"] and man["started"] and man["seed"] == 0


def test_train_is_reproducible(dataset, trained, tmp_path):
    assert main(["train", "--data", str(dataset), "--val", str(dataset), "--out", str(tmp_path), *TRAIN]) == 0
    assert digest(tmp_path) == digest(trained)


def test_train_missing_dataset(tmp_path, capsys):
    missing = tmp_path / "nowhere"
    assert main(["train", "--data", str(missing), "--out", str(tmp_path / "o"), *TRAIN]) == 2
    assert str(missing) in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_train_lists_all_problems(dataset, tmp_path, capsys):
    rc = main(["train", "--data", str(dataset), "--out", str(tmp_path / "o"),
               "--lr", "-1", "--batch-size", "0", "--gamma", "-2", "--crop", "40"])
    assert rc == 2
    err = capsys.readouterr().err
    for key in ("train.lr", "train.batch_size", "loss.gamma", "train.crop"):
        assert key in err
    assert not (tmp_path / "o").exists()


def test_bce_and_eo_gamma0_first_loss(dataset, tmp_path, capsys):
    losses = []
    for extra in (["--loss", "bce"], ["--loss", "eo", "--gamma", "0"]):
        out = tmp_path / extra[1]
        assert main(["train", "--data", str(dataset), "--out", str(out), *TRAIN, "--steps", "1", *extra]) == 0
        losses.append(json.loads(capsys.readouterr().out.strip().splitlines()[-1])["first_loss"])
    assert losses[0] == losses[1]


def test_config_precedence(dataset, tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"train": {"steps": 3, "lr": 0.001, "batch_size": 2, "crop": 64},
                                   "loss": {"schedule": "linear"},
                                   "model": {"widths": [4, 4, 8, 8], "pyramid_dim": 4, "decoder_dim": 4}}))
    out = tmp_path / "o"
    assert main(["--config", str(cfg), "train", "--data", str(dataset), "--out", str(out), "--steps", "2"]) == 0
    man = json.loads((out / "run_manifest.json").read_text())["config"]
    assert man["train"]["steps"] == 2
    assert man["train"]["lr"] == 0.001
    assert man["train"]["weight_decay"] == 5e-4
    assert man["loss"]["schedule"] == "linear"


def test_unknown_config_key(dataset, tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("train:\n  stepz: 3\nloss:\n  gama: 1\n")
    assert main(["train", "--config", str(cfg), "--data", str(dataset), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "train.stepz" in err and "loss.gama" in err


def test_resume_equals_uninterrupted(dataset, trained, tmp_path):
    out = tmp_path / "r"
    assert main(["train", "--data", str(dataset), "--val", str(dataset), "--out", str(out), *TRAIN,
                 "--stop-at", "2"]) == 0
    assert main(["train", "--data", str(dataset), "--val", str(dataset), "--out", str(out),
                 "--resume", str(out / "checkpoint.hson")]) == 0
    assert (out / "checkpoint.hson").read_bytes() == (trained / "checkpoint.hson").read_bytes()
    assert (out / "curve.csv").read_text() == (trained / "curve.csv").read_text()


def test_eval_report(dataset, trained, tmp_path):
    out = tmp_path / "e"
    assert main(["eval", "--checkpoint", str(trained / "checkpoint.hson"), "--data", str(dataset),
                 "--out", str(out), "--colorize"]) == 0
    doc = json.loads((out / "report.json").read_text())
    assert set(doc["metrics"]) == {"precision", "recall", "f1", "iou", "miou", "oa", "kappa"}
    assert set(doc["by_tag"]) == {"easy", "shadow", "occluded", "small-target", "seasonal-only"}
    rows = list(csv.reader(open(out / "metrics.csv")))
    assert rows[0] == ["step", "P", "R", "F1", "OA", "mIOU", "IOU", "Kappa"]
    assert rows[1][0] == "4"
    assert len(list((out / "colorized").glob("*.png"))) == 6

    # oracle: predict every pair through the CLI and score with the metrics module
    total = None
    for lab in sorted((dataset / "label").glob("*.png")):
        pdir = tmp_path / "p"
        assert main(["predict", "--checkpoint", str(trained / "checkpoint.hson"), "--t1", str(dataset / "A" / lab.name),
                     "--t2", str(dataset / "B" / lab.name), "--out", str(pdir), "--name", lab.stem]) == 0
        pred = np.asarray(Image.open(pdir / f"{lab.stem}_binary.png")) > 0
        c = confusion(pred, np.asarray(Image.open(lab)) >= 128)
        total = c if total is None else total + c
    want = compute_metrics(total).as_dict()
    assert doc["counts"] == {"tp": total.tp, "fp": total.fp, "fn": total.fn, "tn": total.tn}
    for k, v in want.items():
        assert doc["metrics"][k] == pytest.approx(v, abs=1e-12)


def test_eval_empty_dataset(trained, tmp_path):
    (tmp_path / "empty").mkdir()
    assert main(["eval", "--checkpoint", str(trained / "checkpoint.hson"), "--data", str(tmp_path / "empty"),
                 "--out", str(tmp_path / "e")]) == 2


def test_eval_version_mismatch(dataset, trained, tmp_path, capsys):
    raw = bytearray((trained / "checkpoint.hson").read_bytes())
    raw[4:8] = (FORMAT_VERSION + 6).to_bytes(4, "little")
    bad = tmp_path / "bad.hson"
    bad.write_bytes(bytes(raw))
    assert main(["eval", "--checkpoint", str(bad), "--data", str(dataset), "--out", str(tmp_path / "e")]) == 2
    err = capsys.readouterr().err
    assert str(FORMAT_VERSION + 6) in err and str(FORMAT_VERSION) in err


def test_predict(dataset, trained, tmp_path):
    args = ["predict", "--checkpoint", str(trained / "checkpoint.hson"), "--t1", str(dataset / "A" / "00000.png"),
            "--t2", str(dataset / "B" / "00000.png"), "--gt", str(dataset / "label" / "00000.png")]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert digest(tmp_path / "a") == digest(tmp_path / "b")
    assert main(args + ["--out", str(tmp_path / "c"), "--threshold", "0.7"]) == 0
    for d, thr in (("a", 0.5), ("c", 0.7)):
        prob = np.asarray(Image.open(tmp_path / d / "pred_prob.png")).astype(np.float64) / 65535.0
        binary = np.asarray(Image.open(tmp_path / d / "pred_binary.png"))
        assert np.array_equal(binary > 0, prob >= thr)
    assert (tmp_path / "a" / "pred_overlay.png").exists()


def test_predict_bad_dims(trained, tmp_path):
    img = tmp_path / "odd.png"
    Image.fromarray(np.zeros((48, 64, 3), np.uint8)).save(img)
    assert main(["predict", "--checkpoint", str(trained / "checkpoint.hson"), "--t1", str(img), "--t2", str(img),
                 "--out", str(tmp_path / "o")]) == 2


def test_metrics_command(dataset, tmp_path, capsys):
    rng = np.random.default_rng(0)
    pdir = tmp_path / "pred"
    pdir.mkdir()
    total = None
    for lab in sorted((dataset / "label").glob("*.png")):
        gt = np.asarray(Image.open(lab)) >= 128
        pred = gt ^ (rng.random(gt.shape) < 0.1)
        Image.fromarray(pred.astype(np.uint8) * 255).save(pdir / lab.name)
        c = confusion(pred, gt)
        total = c if total is None else total + c
    assert main(["metrics", "--pred", str(pdir), "--gt", str(dataset / "label"), "--out", str(tmp_path / "m")]) == 0
    got = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert got == pytest.approx(compute_metrics(total).as_dict(), abs=1e-12)


def test_usage_errors(capsys):
    assert main([]) == 2
    assert main(["train", "--loss", "dice"]) == 2
